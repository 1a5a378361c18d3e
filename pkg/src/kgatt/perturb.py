"""Experimental conditions over a knowledge graph: subsampling, noise
injection, corruption sweeps and the synthetic duplication-divergence world.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import KnowledgeGraph, Vocabulary, build_encoder_index

CONDITIONS = ("full", "half", "skip", "noised", "sweep")
CLEAN, HELD_OUT, NOISE = "clean", "held-out", "noise"


def corrupt_triples(kg: KnowledgeGraph, volume: int, rng: np.random.Generator,
                    max_attempts: int | None = None) -> np.ndarray:
    """``volume`` distinct false triples made by replacing the subject or the
    object of a uniformly drawn train triple with a uniform random entity.

    Candidates already in train/valid/test, or already drawn, are rejected.
    """
    volume = int(volume)
    if volume < 0:
        raise ValueError(f"volume must be >= 0, got {volume}")
    if volume == 0:
        return np.empty((0, 3), dtype=np.int64)
    train = kg.train
    if len(train) == 0 or kg.n_entities < 2:
        raise ValueError("need a non-empty train split and >= 2 entities to corrupt")
    known = kg.known_triples()
    max_attempts = max(1000, 100 * volume) if max_attempts is None else max_attempts
    out, seen = [], set()
    attempts = 0
    while len(out) < volume:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"only {len(out)} of {volume} distinct corruptions found after {attempts} attempts"
            )
        attempts += 1
        s, r, o = train[rng.integers(len(train))].tolist()
        e = int(rng.integers(kg.n_entities))
        cand = (e, r, o) if rng.random() < 0.5 else (s, r, e)
        if cand in known or cand in seen:
            continue
        seen.add(cand)
        out.append(cand)
    return np.array(out, dtype=np.int64)


@dataclass
class Condition:
    """A training graph for one experimental condition.

    ``graph`` carries the edge set with ``adjacency_only`` flags and
    provenance tags; valid/test splits are copied from the source.
    """

    name: str
    graph: KnowledgeGraph
    fraction: float | None = None

    @property
    def n_targets(self) -> int:
        return int(np.count_nonzero(self.graph.train_target))

    @property
    def n_adjacency(self) -> int:
        return len(self.graph.train)

    def tag_counts(self) -> dict[str, int]:
        tags, counts = np.unique(np.array(self.graph.provenance, dtype=object), return_counts=True)
        return {str(t): int(c) for t, c in zip(tags, counts)}


def _assemble(kg, parts, add_inverse):
    """parts: list of (triples, adjacency_only, tag)."""
    train = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, 3), dtype=np.int64)
    adj = np.concatenate([np.full(len(p[0]), p[1]) for p in parts])
    prov = [p[2] for p in parts for _ in range(len(p[0]))]
    out = KnowledgeGraph(kg.vocab.copy(), train, kg.splits["valid"], kg.splits["test"],
                         adjacency_only=adj, provenance=prov)
    return build_encoder_index(out, add_inverse)


def _sweep_volume(fraction: float, n: int) -> int:
    # floor((1 + f) * n) - n, robust to binary rounding of f
    return math.floor(fraction * n + 1e-9)


def build_condition(kg: KnowledgeGraph, name: str, rng: np.random.Generator,
                    fraction: float | None = None, add_inverse: bool = True) -> Condition:
    """Derive a condition from ``kg``'s train split.

    * ``full``: every train triple is a target.
    * ``half``: a uniform ``floor(n/2)`` subsample, the rest dropped.
    * ``skip``: ``half`` targets plus the other half as adjacency-only.
    * ``noised``: ``half`` targets plus as many corrupted triples as were
      dropped, adjacency-only.
    * ``sweep``: all train triples plus ``floor(fraction * n)`` corrupted
      triples, all of them targets.
    """
    if name not in CONDITIONS:
        raise ValueError(f"unknown condition {name!r}; valid names: {', '.join(CONDITIONS)}")
    train = kg.train
    n = len(train)
    if name == "sweep":
        if fraction is None or fraction < 0:
            raise ValueError(f"sweep needs a fraction >= 0, got {fraction}")
        parts = [(train, False, CLEAN)]
        volume = _sweep_volume(fraction, n)
        if volume:
            parts.append((corrupt_triples(kg, volume, rng), False, NOISE))
        return Condition(name, _assemble(kg, parts, add_inverse), fraction)
    if name == "full":
        return Condition(name, _assemble(kg, [(train, False, CLEAN)], add_inverse))

    perm = rng.permutation(n)
    keep, rest = np.sort(perm[: n // 2]), np.sort(perm[n // 2:])
    parts = [(train[keep], False, CLEAN)]
    if name == "skip":
        parts.append((train[rest], True, HELD_OUT))
    elif name == "noised":
        parts.append((corrupt_triples(kg, len(rest), rng), True, NOISE))
    return Condition(name, _assemble(kg, parts, add_inverse))


# ------------------------------------------------------------ duplication-divergence

@dataclass
class DDGraph:
    """Undirected graph grown by node duplication.

    ``parent[k]`` is the node copied when node ``k`` was created (-1 for the
    two seed nodes). ``edges`` holds pairs ``(u, v)`` with ``u < v``.
    """

    n_nodes: int
    edges: np.ndarray
    parent: np.ndarray
    p: float
    q: float
    rejected_steps: int = 0

    @property
    def edge_vertex_ratio(self) -> float:
        return len(self.edges) / self.n_nodes

    def neighbors(self) -> list[set[int]]:
        adj = [set() for _ in range(self.n_nodes)]
        for u, v in self.edges.tolist():
            adj[u].add(v)
            adj[v].add(u)
        return adj


def generate_dd(p: float, q: float, target_n: int, rng: np.random.Generator,
                keep_isolated: bool = False) -> DDGraph:
    """Grow a duplication-divergence graph from two connected nodes.

    Each step copies a uniformly chosen node ``old``: the copy links to each
    neighbour of ``old`` with probability ``p`` and to ``old`` itself with
    probability ``q``. A copy that ends up with no links is discarded and the
    step redrawn unless ``keep_isolated``.
    """
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise ValueError(f"p and q must lie in [0, 1], got p={p}, q={q}")
    if target_n < 2:
        raise ValueError(f"target_n must be >= 2, got {target_n}")
    if not keep_isolated and p == 0.0 and q == 0.0:
        raise ValueError("p = q = 0 can never add a linked node")
    adj: list[list[int]] = [[1], [0]]
    parent = [-1, -1]
    rejected = 0
    while len(adj) < target_n:
        old = int(rng.integers(len(adj)))
        nbrs = adj[old]
        links = [v for v, u in zip(nbrs, rng.random(len(nbrs))) if u < p]
        if rng.random() < q:
            links.append(old)
        if not links and not keep_isolated:
            rejected += 1
            continue
        new = len(adj)
        adj.append(sorted(links))
        parent.append(old)
        for v in links:
            adj[v].append(new)
    edges = sorted((u, v) for u in range(len(adj)) for v in adj[u] if u < v)
    return DDGraph(len(adj), np.array(edges, dtype=np.int64).reshape(-1, 2),
                   np.array(parent, dtype=np.int64), p, q, rejected)


@dataclass
class DDSplit:
    gold: np.ndarray
    add: np.ndarray
    noise: np.ndarray
    held_out: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))


def split_dd(graph: DDGraph, gold_frac: float = 0.5, add_frac: float = 0.25,
             rng: np.random.Generator | None = None) -> DDSplit:
    """Partition the true edges into Gold / Add / held-out and draw as many
    Noise pairs (non-edges, no self-pairs) as there are Add edges."""
    if gold_frac < 0 or add_frac < 0 or gold_frac + add_frac > 1 + 1e-12:
        raise ValueError(f"need gold_frac, add_frac >= 0 with sum <= 1, got {gold_frac}, {add_frac}")
    rng = np.random.default_rng() if rng is None else rng
    m = len(graph.edges)
    perm = rng.permutation(m)
    n_gold = int(round(gold_frac * m))
    n_add = min(int(round(add_frac * m)), m - n_gold)
    gold = graph.edges[np.sort(perm[:n_gold])]
    add = graph.edges[np.sort(perm[n_gold:n_gold + n_add])]
    held = graph.edges[np.sort(perm[n_gold + n_add:])]

    n = graph.n_nodes
    n_pairs = n * (n - 1) // 2
    if n_add > n_pairs - m:
        raise ValueError(f"need {n_add} non-edges but only {n_pairs - m} exist")
    true = set(map(tuple, graph.edges.tolist()))
    noise, seen = [], set()
    while len(noise) < n_add:
        u, v = (int(x) for x in rng.integers(n, size=2))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in true or pair in seen:
            continue
        seen.add(pair)
        noise.append(pair)
    return DDSplit(gold, add, np.array(noise, dtype=np.int64).reshape(-1, 2), held)


def dd_knowledge_graph(graph: DDGraph, split: DDSplit, relation: str = "interacts",
                       add_inverse: bool = True, valid_frac: float = 0.5) -> KnowledgeGraph:
    """Indexed graph with Gold as targets, Add and Noise as adjacency-only,
    and the held-out true edges divided between valid and test.

    Each undirected pair is stored once as ``(u, relation, v)``; inverse
    augmentation supplies the reverse message direction.
    """
    vocab = Vocabulary([f"n{k}" for k in range(graph.n_nodes)], [relation])

    def triples(pairs):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return np.column_stack([pairs[:, 0], np.zeros(len(pairs), dtype=np.int64), pairs[:, 1]])

    n_valid = int(round(valid_frac * len(split.held_out)))
    train = np.concatenate([triples(split.gold), triples(split.add), triples(split.noise)])
    adj = np.r_[np.zeros(len(split.gold), bool), np.ones(len(split.add) + len(split.noise), bool)]
    prov = ["gold"] * len(split.gold) + ["add"] * len(split.add) + [NOISE] * len(split.noise)
    kg = KnowledgeGraph(vocab, train, triples(split.held_out[:n_valid]),
                        triples(split.held_out[n_valid:]), adjacency_only=adj, provenance=prov)
    return build_encoder_index(kg, add_inverse)
