"""Per-edge attention scalars and their per-node budget normalization.

Every destination node spends a total budget of 1 across all of its incoming
edges (over every relation), in proportion to ``|raw|``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .graph import FORWARD, KnowledgeGraph


@dataclass(frozen=True)
class NormalizedAttention:
    """Snapshot of normalized coefficients.

    ``budget[i]`` is the sum of ``|raw|`` over node ``i``'s incoming edges;
    ``zero_nodes`` lists nodes with incoming edges whose raw weights are all 0
    (their coefficients are defined as 0).
    """

    coef: np.ndarray
    budget: np.ndarray
    zero_nodes: tuple[int, ...] = ()

    def __array__(self, dtype=None, copy=None):
        return self.coef if dtype is None else self.coef.astype(dtype)

    def __len__(self):
        return len(self.coef)


def init_attention(kg: KnowledgeGraph) -> np.ndarray:
    return np.ones(kg.require_index().n_edges)


def normalize(raw, kg: KnowledgeGraph) -> NormalizedAttention:
    ix = kg.require_index()
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (ix.n_edges,):
        raise ValueError(f"expected {ix.n_edges} raw weights, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw attention contains non-finite values")
    mag = np.abs(raw)
    budget = np.bincount(ix.dst, weights=mag, minlength=ix.n_nodes)
    denom = budget[ix.dst]
    coef = np.divide(mag, denom, out=np.zeros_like(mag), where=denom > 0)
    zero = np.flatnonzero((budget == 0) & (ix.in_degree > 0))
    return NormalizedAttention(coef, budget, tuple(int(i) for i in zero))


def uniform_attention(kg: KnowledgeGraph) -> NormalizedAttention:
    """Fixed coefficients ``1/|in(i)|`` (attention disabled)."""
    ix = kg.require_index()
    deg = ix.in_degree.astype(float)
    return NormalizedAttention(1.0 / deg[ix.dst], deg)


def normalize_backward(raw, norm: NormalizedAttention, grad_coef, kg: KnowledgeGraph) -> np.ndarray:
    """Pull a gradient on normalized coefficients back onto the raw scalars.

    With ``a = |raw|`` and ``c_e = a_e / S_i``:
    ``dL/da_e = (g_e - sum_{f in in(i)} g_f c_f) / S_i``. The derivative of
    ``|x|`` at 0 is taken as 0; all-zero nodes receive no gradient.
    """
    ix = kg.require_index()
    raw = np.asarray(raw, dtype=float)
    g = np.asarray(grad_coef, dtype=float)
    weighted = np.bincount(ix.dst, weights=g * norm.coef, minlength=ix.n_nodes)
    denom = norm.budget[ix.dst]
    da = np.divide(g - weighted[ix.dst], denom, out=np.zeros_like(g), where=denom > 0)
    return np.sign(raw) * da


def apply_link_dropout(coef, p: float, rng: np.random.Generator):
    """Inverted dropout on coefficients: zero each with prob ``p``, scale survivors.

    Returns ``(masked, scale)`` where ``masked = coef * scale``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    coef = np.asarray(coef, dtype=float)
    if p == 0.0:
        return coef.copy(), np.ones_like(coef)
    scale = (rng.random(coef.shape) >= p) / (1.0 - p)
    return coef * scale, scale


def override_edge(raw, edge_id: int, value: float) -> np.ndarray:
    """Copy of ``raw`` with one scalar replaced."""
    raw = np.array(raw, dtype=float)
    if not 0 <= int(edge_id) < len(raw):
        raise KeyError(f"unknown edge id {edge_id}")
    raw[int(edge_id)] = value
    return raw


def occlude(raw, kg: KnowledgeGraph, edge_id: int, renormalize: bool = True) -> NormalizedAttention:
    """Normalized coefficients with one edge removed.

    By default the node's budget is redistributed over the remaining edges.
    With ``renormalize=False`` the siblings keep their original coefficients.
    """
    if renormalize:
        return normalize(override_edge(raw, edge_id, 0.0), kg)
    base = normalize(raw, kg)
    coef = base.coef.copy()
    if not 0 <= int(edge_id) < len(coef):
        raise KeyError(f"unknown edge id {edge_id}")
    coef[int(edge_id)] = 0.0
    return NormalizedAttention(coef, base.budget, base.zero_nodes)


def write_weights_csv(path, kg: KnowledgeGraph, raw, norm) -> None:
    """CSV ``edge_id,subject,relation,object,direction,raw,normalized``.

    Subject/object are the message source/destination of each record, the
    relation is the original relation name (inverse records are tagged by
    ``direction``).
    """
    ix = kg.require_index()
    coef = np.asarray(norm, dtype=float)
    raw = np.ones(ix.n_edges) if raw is None else np.asarray(raw, dtype=float)
    ents, rels = kg.vocab.entities, kg.vocab.relations
    n_rel = kg.n_relations
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["edge_id", "subject", "relation", "object", "direction", "raw", "normalized"])
        for e in range(ix.n_edges):
            out.writerow([
                e, ents[ix.src[e]], rels[ix.rel[e] % n_rel], ents[ix.dst[e]],
                "forward" if ix.direction[e] == FORWARD else "inverse",
                float(raw[e]), float(coef[e]),
            ])
