"""Ranking evaluation: raw and filtered MRR / Hits@k with mid-rank ties."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .decoder import score_objects, score_subjects
from .encoder import ModelParameters, encode_all
from .graph import KnowledgeGraph

HITS_AT = (1, 3, 10)
SIDES = ("subject", "object")


@dataclass
class EvalReport:
    mrr_raw: float
    mrr_filtered: float
    hits_raw: dict[int, float]
    hits_filtered: dict[int, float]
    # one row per query: triple index, side (0 subject, 1 object), raw rank, filtered rank
    queries: np.ndarray = field(repr=False)
    triples: np.ndarray = field(repr=False)

    @property
    def raw_ranks(self) -> np.ndarray:
        return self.queries[:, 2]

    @property
    def filtered_ranks(self) -> np.ndarray:
        return self.queries[:, 3]

    def metrics(self) -> dict:
        out = {"n_queries": int(len(self.queries)),
               "mrr_raw": self.mrr_raw, "mrr_filtered": self.mrr_filtered}
        for k in HITS_AT:
            out[f"hits@{k}_raw"] = self.hits_raw[k]
            out[f"hits@{k}_filtered"] = self.hits_filtered[k]
        return out

    def write(self, metrics_path, ranks_path=None, kg: KnowledgeGraph | None = None) -> None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            json.dump(self.metrics(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if ranks_path is None:
            return
        with open(ranks_path, "w", encoding="utf-8", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["subject", "relation", "object", "side", "raw_rank", "filtered_rank"])
            for t, side, raw, filt in self.queries.tolist():
                s, r, o = self.triples[int(t)].tolist()
                if kg is not None:
                    s, r, o = kg.vocab.entities[s], kg.vocab.relations[r], kg.vocab.entities[o]
                out.writerow([s, r, o, SIDES[int(side)], raw, filt])


class KnownIndex:
    """Lookup of true answers per (s, r, ?) and (?, r, o) pattern."""

    def __init__(self, known):
        self.objects = defaultdict(list)
        self.subjects = defaultdict(list)
        for s, r, o in known:
            self.objects[(s, r)].append(o)
            self.subjects[(r, o)].append(s)
        self.objects = {k: np.array(v) for k, v in self.objects.items()}
        self.subjects = {k: np.array(v) for k, v in self.subjects.items()}

    @classmethod
    def from_graph(cls, kg: KnowledgeGraph) -> "KnownIndex":
        return cls(filter_set(kg))

    def others(self, triple, side: str) -> np.ndarray:
        s, r, o = (int(x) for x in triple)
        if side == "object":
            cand = self.objects.get((s, r), np.empty(0, dtype=int))
            return cand[cand != o]
        cand = self.subjects.get((r, o), np.empty(0, dtype=int))
        return cand[cand != s]


def filter_set(kg: KnowledgeGraph) -> set[tuple[int, int, int]]:
    """Known-true triples for filtering: every split, minus edges tagged ``noise``."""
    known = set()
    for name, arr in kg.splits.items():
        rows = arr.tolist()
        if name == "train":
            rows = [t for t, tag in zip(rows, kg.provenance) if tag != "noise"]
        known.update(map(tuple, rows))
    return known


def mid_rank(scores: np.ndarray, true_idx: int, exclude=()) -> float:
    """``1 + #strictly greater + #ties/2`` among candidates other than the true
    one and those in ``exclude``."""
    scores = np.asarray(scores, dtype=float)
    keep = np.ones(len(scores), dtype=bool)
    keep[np.asarray(exclude, dtype=int)] = False
    keep[true_idx] = False
    t = scores[true_idx]
    others = scores[keep]
    return 1.0 + np.count_nonzero(others > t) + 0.5 * np.count_nonzero(others == t)


def _candidate_scores(params, H, triple, side):
    s, r, o = (int(x) for x in triple)
    if side == "object":
        return score_objects(params.decoder, H[s], params.relation[r], H)
    if side == "subject":
        return score_subjects(params.decoder, params.relation[r], H[o], H)
    raise ValueError(f"side must be one of {SIDES}, got {side!r}")


def rank_query(params: ModelParameters, kg: KnowledgeGraph, triple, side: str,
               filtered: bool = True, H=None, known: KnownIndex | None = None) -> float:
    """Rank of the true entity among all ``N`` replacements on ``side``."""
    H = encode_all(params, kg) if H is None else H
    scores = _candidate_scores(params, H, triple, side)
    exclude = ()
    if filtered:
        known = KnownIndex.from_graph(kg) if known is None else known
        exclude = known.others(triple, side)
    true_idx = int(triple[2] if side == "object" else triple[0])
    return mid_rank(scores, true_idx, exclude)


def _summarize(ranks):
    ranks = np.asarray(ranks, dtype=float)
    return float(np.mean(1.0 / ranks)), {k: float(np.mean(ranks <= k)) for k in HITS_AT}


def evaluate(params: ModelParameters, kg: KnowledgeGraph, split: str = "test",
             triples=None, batch_size: int = 512, H=None, known: KnownIndex | None = None) -> EvalReport:
    """Score both sides of every triple in ``split`` (or explicit ``triples``)."""
    triples = kg.splits[split] if triples is None else np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise ValueError("cannot evaluate an empty split")
    H = encode_all(params, kg) if H is None else H
    known = KnownIndex.from_graph(kg) if known is None else known
    rows = []
    for side_id, side in enumerate(SIDES):
        for lo in range(0, len(triples), batch_size):
            chunk = triples[lo:lo + batch_size]
            s, r, o = chunk[:, 0], chunk[:, 1], chunk[:, 2]
            if side == "object":
                scores = score_objects(params.decoder, H[s], params.relation[r], H)
                truth = o
            else:
                scores = score_subjects(params.decoder, params.relation[r], H[o], H)
                truth = s
            t = scores[np.arange(len(chunk)), truth][:, None]
            greater = np.count_nonzero(scores > t, axis=1)
            ties = np.count_nonzero(scores == t, axis=1) - 1
            raw = 1.0 + greater + 0.5 * ties
            for q in range(len(chunk)):
                ex = known.others(chunk[q], side)
                filt = raw[q]
                if len(ex):
                    sc = scores[q, ex]
                    filt -= np.count_nonzero(sc > t[q, 0]) + 0.5 * np.count_nonzero(sc == t[q, 0])
                rows.append((lo + q, side_id, raw[q], filt))
    queries = np.array(rows, dtype=float)
    mrr_raw, hits_raw = _summarize(queries[:, 2])
    mrr_f, hits_f = _summarize(queries[:, 3])
    return EvalReport(mrr_raw, mrr_f, hits_raw, hits_f, queries, triples.copy())
