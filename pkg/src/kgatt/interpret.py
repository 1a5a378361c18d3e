"""Post-training analysis of learned edge weights.

Weights are the normalized coefficients unless stated otherwise. Because the
per-node budget makes a coefficient scale like ``1/in_degree``, comparisons
across nodes use the *relative weight* ``c_e * in_degree(dst_e)`` (1 for an
untrained edge).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .attention import normalize
from .decoder import probability, score
from .encoder import ModelParameters, encode_node
from .graph import FORWARD, KnowledgeGraph


def _coef(c) -> np.ndarray:
    return np.asarray(c, dtype=float)


def relative_weights(c, kg: KnowledgeGraph) -> np.ndarray:
    ix = kg.require_index()
    return _coef(c) * ix.in_degree[ix.dst]


def _stderr(values: np.ndarray, axis=0):
    n = values.shape[axis]
    if n < 2:
        return None
    return np.std(values, axis=axis, ddof=1) / np.sqrt(n)


def _edge_row(kg, e):
    ix = kg.index
    rel = kg.vocab.relations[ix.rel[e] % kg.n_relations]
    return {
        "edge_id": int(e),
        "source": kg.vocab.entities[ix.src[e]],
        "relation": rel if ix.direction[e] == FORWARD else f"{rel}^-1",
        "target": kg.vocab.entities[ix.dst[e]],
        "provenance": kg.provenance[ix.triple[e]],
        "train_target": bool(ix.train_target[e]),
    }


def _write_rows(path, rows, columns):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        out.writeheader()
        for row in rows:
            out.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})


# ------------------------------------------------------------ influencers

@dataclass
class InfluencerReport:
    entity: str
    top: list[dict]
    bottom: list[dict]
    notice: str = ""

    def write(self, path) -> None:
        rows = [dict(r, rank="top") for r in self.top] + [dict(r, rank="bottom") for r in self.bottom]
        _write_rows(path, rows, ["rank", "edge_id", "source", "relation", "target",
                                 "provenance", "weight", "stderr"])


def rank_influencers(c, kg: KnowledgeGraph, entity, k: int = 6) -> InfluencerReport:
    """Top-``k`` and bottom-``k`` incoming edges of ``entity`` by weight.

    ``c`` is one coefficient vector or a list of them (one per run), in which
    case the mean weight is ranked and a standard error reported. Ordering is
    by weight descending with ties broken by ascending edge id; the bottom
    list never repeats an edge from the top list.
    """
    ix = kg.require_index()
    node = kg.vocab.entity_id(entity) if isinstance(entity, str) else int(entity)
    name = kg.vocab.entities[node]
    runs = [c] if isinstance(c, np.ndarray) or not isinstance(c, (list, tuple)) else list(c)
    W = np.vstack([_coef(x) for x in runs])
    ids = ix.incoming_ids(node)
    if len(ids) == 0:
        return InfluencerReport(name, [], [], notice=f"{name} has no incoming edges")
    mean = W[:, ids].mean(axis=0)
    err = _stderr(W[:, ids])
    order = np.lexsort((ids, -mean))
    rows = []
    for pos in order:
        row = _edge_row(kg, ids[pos])
        row["weight"] = float(mean[pos])
        row["stderr"] = None if err is None else float(err[pos])
        rows.append(row)
    k = max(int(k), 0)
    top = rows[:k]
    bottom = rows[max(k, len(rows) - k):][::-1]
    return InfluencerReport(name, top, bottom)


# ------------------------------------------------------------ occlusion

@dataclass
class OcclusionReport:
    target: tuple[str, str, str]
    baseline: float
    baseline_stderr: float | None
    rows: list[dict] = field(default_factory=list)

    def write(self, path, summary_path=None) -> None:
        _write_rows(path, self.rows, ["edge_id", "side", "source", "relation", "target",
                                      "provenance", "weight", "delta", "stderr"])
        if summary_path is not None:
            doc = {"target": list(self.target), "baseline_probability": self.baseline,
                   "baseline_stderr": self.baseline_stderr, "n_edges": len(self.rows)}
            with open(summary_path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2)
                fh.write("\n")


def _local_coef(raw, ix, node, drop=None, renormalize=True, base=None):
    """Normalized coefficients for ``node``'s incoming edges, optionally with
    edge ``drop`` removed. Returns (edge ids, coefficients)."""
    ids = ix.incoming_ids(node)
    if not renormalize:
        coef = base[ids].copy()
        coef[ids == drop] = 0.0
        return ids, coef
    mag = np.abs(raw[ids])
    if drop is not None:
        mag = np.where(ids == drop, 0.0, mag)
    total = mag.sum()
    coef = mag / total if total > 0 else np.zeros_like(mag)
    return ids, coef


def _node_embedding(params, kg, raw, node, drop=None, renormalize=True, base=None):
    ix = kg.index
    coef = np.zeros(ix.n_edges)
    ids, local = _local_coef(raw, ix, node, drop, renormalize, base)
    coef[ids] = local
    return encode_node(params, kg, coef, node)


def occlusion_scan(params: ModelParameters, kg: KnowledgeGraph, target, runs=None,
                   renormalize: bool = True) -> OcclusionReport:
    """Effect on ``P(target)`` of removing each incoming edge of its subject
    and of its object, one at a time.

    ``target`` is ``(subject, relation, object)`` as names or ids and need not
    be a known edge. ``runs`` is an optional list of parameter snapshots
    trained on the same graph; deltas are averaged across them and a
    standard error is reported. Parameters are never modified.
    """
    ix = kg.require_index()
    s, r, o = target
    s = kg.vocab.entity_id(s) if isinstance(s, str) else int(s)
    r = kg.vocab.relation_id(r) if isinstance(r, str) else int(r)
    o = kg.vocab.entity_id(o) if isinstance(o, str) else int(o)
    runs = [params] if not runs else list(runs)

    edges = []
    for side, node in (("subject", s), ("object", o)):
        for e in ix.incoming_ids(node):
            if not any(e == x for x, _ in edges):
                edges.append((int(e), side))

    baselines = np.empty(len(runs))
    deltas = np.empty((len(runs), len(edges)))
    weights = np.empty((len(runs), len(edges)))
    for k, run in enumerate(runs):
        run.check(kg)
        raw = np.ones(ix.n_edges) if run.attention is None else run.attention
        base = normalize(raw, kg).coef
        h = {s: _node_embedding(run, kg, raw, s), o: _node_embedding(run, kg, raw, o)}
        rel = run.relation[r]
        p0 = probability(score(run.decoder, h[s], rel, h[o]))
        baselines[k] = p0
        for j, (e, _) in enumerate(edges):
            node = int(ix.dst[e])
            occluded = dict(h)
            occluded[node] = _node_embedding(run, kg, raw, node, drop=e,
                                             renormalize=renormalize, base=base)
            p1 = probability(score(run.decoder, occluded[s], rel, occluded[o]))
            deltas[k, j] = p1 - p0
            weights[k, j] = base[e]

    err = _stderr(deltas)
    rows = []
    for j, (e, side) in enumerate(edges):
        row = _edge_row(kg, e)
        row.update(side=side, weight=float(weights[:, j].mean()),
                   delta=float(deltas[:, j].mean()),
                   stderr=None if err is None else float(err[j]))
        rows.append(row)
    rows.sort(key=lambda row: (row["delta"], row["edge_id"]))
    names = (kg.vocab.entities[s], kg.vocab.relations[r], kg.vocab.entities[o])
    b_err = _stderr(baselines[:, None])
    return OcclusionReport(names, float(baselines.mean()),
                           None if b_err is None else float(b_err[0]), rows)


# ------------------------------------------------------------ distributions

@dataclass
class WeightHistograms:
    bin_edges: np.ndarray
    # (relation label, group) -> normalized bin masses
    masses: dict[tuple[str, str], np.ndarray]
    counts: dict[tuple[str, str], int]

    def rows(self) -> list[dict]:
        out = []
        for (rel, group), mass in sorted(self.masses.items()):
            for b, m in enumerate(mass):
                out.append({"relation": rel, "group": group, "bin": b,
                            "lo": float(self.bin_edges[b]), "hi": float(self.bin_edges[b + 1]),
                            "mass": float(m), "n_edges": self.counts[(rel, group)]})
        return out

    def write(self, path) -> None:
        _write_rows(path, self.rows(), ["relation", "group", "bin", "lo", "hi", "mass", "n_edges"])


def relation_weight_distributions(c, kg: KnowledgeGraph, bins: int = 20, group_by: str = "flag",
                                  relative: bool = False, value_range=None) -> WeightHistograms:
    """Normalized weight histograms per encoder relation and edge group.

    ``group_by="flag"`` splits edges into ``train_target`` / ``adjacency_only``;
    ``group_by="provenance"`` uses the provenance tags. With ``relative`` the
    degree-relative weights are binned instead of raw coefficients.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    ix = kg.require_index()
    w = relative_weights(c, kg) if relative else _coef(c)
    if value_range is None:
        value_range = (0.0, max(1.0, float(w.max()) if len(w) else 1.0))
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    if group_by == "flag":
        groups = np.where(ix.train_target, "train_target", "adjacency_only")
    elif group_by == "provenance":
        groups = np.array(kg.provenance, dtype=object)[ix.triple]
    else:
        raise ValueError(f"group_by must be 'flag' or 'provenance', got {group_by!r}")
    rel_names = []
    for r in range(ix.n_enc_relations):
        base = kg.vocab.relations[r % kg.n_relations]
        rel_names.append(base if r < kg.n_relations else f"{base}^-1")
    masses, counts = {}, {}
    for r in range(ix.n_enc_relations):
        for g in sorted(set(groups.tolist())):
            sel = (ix.rel == r) & (groups == g)
            if not sel.any():
                continue
            hist, _ = np.histogram(np.clip(w[sel], edges[0], edges[-1]), bins=edges)
            masses[(rel_names[r], str(g))] = hist / hist.sum()
            counts[(rel_names[r], str(g))] = int(sel.sum())
    return WeightHistograms(edges, masses, counts)


# ------------------------------------------------------------ self-similarity

@dataclass
class SelfSimilarity:
    r: float | None
    n: int
    pairs: np.ndarray = field(repr=False)
    notice: str = ""

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["edge_id", "weight_run1", "weight_run2"])
            for e, (a, b) in enumerate(self.pairs.tolist()):
                out.writerow([e, a, b])


def weight_self_similarity(c_run1, c_run2) -> SelfSimilarity:
    """Pearson correlation of per-edge weights from two runs on one edge set."""
    a, b = _coef(c_run1), _coef(c_run2)
    if a.shape != b.shape:
        raise ValueError(f"runs cover different edge sets ({a.shape} vs {b.shape})")
    pairs = np.column_stack([a, b])
    if len(a) < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return SelfSimilarity(None, len(a), pairs, notice="undefined: a weight vector is constant")
    return SelfSimilarity(float(np.corrcoef(a, b)[0, 1]), len(a), pairs)


# ------------------------------------------------------------ low-weight flagging

@dataclass
class FlagReport:
    decile: float
    rows: list[dict]
    low_confidence: bool

    @property
    def edge_ids(self) -> np.ndarray:
        return np.array([r["edge_id"] for r in self.rows], dtype=np.int64)

    def write(self, path) -> None:
        _write_rows(path, self.rows, ["edge_id", "source", "relation", "target", "provenance",
                                      "in_degree", "weight", "stratum_quantile", "tied"])


def stratum_quantiles(c, kg: KnowledgeGraph) -> np.ndarray:
    """Mid-quantile position of each edge's weight among edges whose
    destination has the same in-degree (0 = lowest, 1 = highest).

    Tied weights share their average rank, so a stratum of equal weights sits
    at 0.5 rather than being spread by edge order.
    """
    ix = kg.require_index()
    w = _coef(c)
    deg = ix.in_degree[ix.dst]
    q = np.empty(ix.n_edges)
    for d in np.unique(deg):
        sel = np.flatnonzero(deg == d)
        q[sel] = (stats.rankdata(w[sel]) - 0.5) / len(sel)
    return q


def flag_low_weight_edges(c, kg: KnowledgeGraph, decile: float = 0.1) -> FlagReport:
    """The ``round(decile * n_edges)`` edges lowest in their degree stratum.

    Edges are ordered by within-stratum quantile, then weight, then edge id.
    ``tied`` marks a flagged edge whose weight equals every other weight in
    its stratum; the report is low-confidence when all flagged edges are tied.
    """
    if not 0.0 < decile <= 0.5:
        raise ValueError(f"decile must lie in (0, 0.5], got {decile}")
    ix = kg.require_index()
    w = _coef(c)
    q = stratum_quantiles(w, kg)
    deg = ix.in_degree[ix.dst]
    n_flag = int(round(decile * ix.n_edges))
    order = np.lexsort((np.arange(ix.n_edges), w, q))[:n_flag]
    spread = {}
    for d in np.unique(deg[order]):
        vals = w[deg == d]
        spread[int(d)] = (vals.min(), vals.max())
    rows = []
    for e in order:
        lo, hi = spread[int(deg[e])]
        row = _edge_row(kg, e)
        row.update(in_degree=int(deg[e]), weight=float(w[e]),
                   stratum_quantile=float(q[e]), tied=bool(lo == hi))
        rows.append(row)
    low_conf = bool(rows) and all(r["tied"] for r in rows)
    return FlagReport(decile, rows, low_conf)


def tag_rate_by_decile(c, kg: KnowledgeGraph, tag: str = "noise", decile: float = 0.1,
                       edges=None) -> dict:
    """Fraction of edges carrying ``tag`` in the bottom and top ``decile`` of
    stratified weight, and their ratio."""
    ix = kg.require_index()
    q = stratum_quantiles(c, kg)
    sel = np.arange(ix.n_edges) if edges is None else np.asarray(edges)
    tags = np.array(kg.provenance, dtype=object)[ix.triple[sel]]
    qs = q[sel]
    n = max(int(round(decile * len(sel))), 1)
    order = np.lexsort((sel, qs))
    low, high = order[:n], order[-n:]
    f_low = float(np.mean(tags[low] == tag))
    f_high = float(np.mean(tags[high] == tag))
    return {"bottom": f_low, "top": f_high,
            "ratio": (f_low / f_high) if f_high > 0 else float("inf")}


def discrimination_auc(weights, positive) -> float:
    """Probability that a random positive edge outweighs a random negative one
    (ties count half)."""
    w = np.asarray(weights, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = pos.sum(), (~pos).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative edge")
    ranks = stats.rankdata(w)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ------------------------------------------------------------ external labels

def read_external_labels(path, kg: KnowledgeGraph) -> dict[tuple[int, int, int], float]:
    """CSV with columns ``subject,relation,object,score`` (names)."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                t = (kg.vocab.entity_id(row["subject"]), kg.vocab.relation_id(row["relation"]),
                     kg.vocab.entity_id(row["object"]))
            except KeyError:
                continue
            out[t] = float(row["score"])
    return out


def external_label_curve(c, kg: KnowledgeGraph, labels: dict, low_score: float = 0.1,
                         quantiles=(0.05, 0.1, 0.2, 0.3, 0.4, 0.5)) -> dict:
    """Compare learned weights with an external confidence score per triple.

    For each quantile ``t``, edges in the bottom ``t`` of stratified weight
    are compared with edges in the top ``t``: the curve reports how much
    more often low-weight edges carry an external score below ``low_score``.
    A two-sample KS test contrasts the external scores of the bottom and top
    deciles.
    """
    ix = kg.require_index()
    q = stratum_quantiles(c, kg)
    fwd = np.flatnonzero(ix.direction == FORWARD)
    keep, ext = [], []
    for e in fwd:
        t = tuple(kg.train[ix.triple[e]].tolist())
        if t in labels:
            keep.append(e)
            ext.append(labels[t])
    keep, ext = np.array(keep, dtype=np.int64), np.array(ext, dtype=float)
    curve = []
    for t in quantiles:
        low = ext[q[keep] <= t]
        high = ext[q[keep] >= 1 - t]
        f_low = float(np.mean(low < low_score)) if len(low) else float("nan")
        f_high = float(np.mean(high < low_score)) if len(high) else float("nan")
        ratio = f_low / f_high if len(high) and f_high > 0 else float("nan")
        curve.append({"quantile": t, "n_low": int(len(low)), "n_high": int(len(high)),
                      "low_rate_low_weight": f_low, "low_rate_high_weight": f_high,
                      "ratio": ratio})
    low, high = ext[q[keep] <= 0.1], ext[q[keep] >= 0.9]
    ks = None
    if len(low) and len(high):
        res = stats.ks_2samp(low, high)
        ks = {"statistic": float(res.statistic), "pvalue": float(res.pvalue)}
    return {"n_matched": int(len(keep)), "curve": curve, "ks": ks}
