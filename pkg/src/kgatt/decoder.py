"""Triple scoring functions.

All scorers operate on the last axis, so they accept single vectors or
row-aligned batches. ComplEx vectors store the real half first, then the
imaginary half.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

DECODERS = ("distmult", "complex")


def _check(e_s, r, e_o):
    e_s, r, e_o = (np.asarray(x, dtype=float) for x in (e_s, r, e_o))
    if not (e_s.shape[-1] == r.shape[-1] == e_o.shape[-1]):
        raise ValueError(
            f"dimension mismatch: {e_s.shape[-1]}, {r.shape[-1]}, {e_o.shape[-1]}"
        )
    return e_s, r, e_o


def _halves(x):
    k = x.shape[-1] // 2
    return x[..., :k], x[..., k:]


def score_distmult(e_s, r, e_o):
    """``sum_k e_s[k] * r[k] * e_o[k]``."""
    e_s, r, e_o = _check(e_s, r, e_o)
    return np.sum(e_s * r * e_o, axis=-1)


def score_complex(e_s, r, e_o):
    """``Re(sum_k s_k r_k conj(o_k))``."""
    e_s, r, e_o = _check(e_s, r, e_o)
    if e_s.shape[-1] % 2:
        raise ValueError(f"ComplEx needs an even dimension, got {e_s.shape[-1]}")
    sa, sb = _halves(e_s)
    rc, rd = _halves(r)
    oe, of = _halves(e_o)
    return np.sum(sa * rc * oe + sa * rd * of + sb * rc * of - sb * rd * oe, axis=-1)


def score(decoder: str, e_s, r, e_o):
    if decoder == "distmult":
        return score_distmult(e_s, r, e_o)
    if decoder == "complex":
        return score_complex(e_s, r, e_o)
    raise ValueError(f"unknown decoder {decoder!r}; expected one of {DECODERS}")


def score_grads(decoder: str, e_s, r, e_o):
    """Partial derivatives of the score w.r.t. ``e_s``, ``r`` and ``e_o``."""
    if decoder == "distmult":
        return r * e_o, e_s * e_o, e_s * r
    if decoder == "complex":
        sa, sb = _halves(e_s)
        rc, rd = _halves(r)
        oe, of = _halves(e_o)
        # w = r * conj(o); u = s * conj(o); v = s * r
        g_s = np.concatenate([rc * oe + rd * of, rc * of - rd * oe], axis=-1)
        g_r = np.concatenate([sa * oe + sb * of, sa * of - sb * oe], axis=-1)
        g_o = np.concatenate([sa * rc - sb * rd, sa * rd + sb * rc], axis=-1)
        return g_s, g_r, g_o
    raise ValueError(f"unknown decoder {decoder!r}; expected one of {DECODERS}")


def score_objects(decoder: str, e_s, r, H):
    """Scores of ``(s, r, o)`` for every row ``o`` of ``H``; ``e_s``/``r`` may be batched."""
    if decoder == "distmult":
        return (e_s * r) @ H.T
    sa, sb = _halves(e_s)
    rc, rd = _halves(r)
    Ha, Hb = _halves(H)
    # Re(v * conj(o)) with v = s * r
    return (sa * rc - sb * rd) @ Ha.T + (sa * rd + sb * rc) @ Hb.T


def score_subjects(decoder: str, r, e_o, H):
    """Scores of ``(s, r, o)`` for every row ``s`` of ``H``."""
    if decoder == "distmult":
        return (r * e_o) @ H.T
    rc, rd = _halves(r)
    oe, of = _halves(e_o)
    Ha, Hb = _halves(H)
    return (rc * oe + rd * of) @ Ha.T + (rc * of - rd * oe) @ Hb.T


def probability(raw_score):
    """Logistic sigmoid."""
    return expit(raw_score)
