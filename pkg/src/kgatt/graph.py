"""Multi-relational graph storage: vocabulary interning, triple I/O and the
incoming-edge index used for message passing.

Edge records are derived from the ``train`` split only. Each train triple
yields one forward record (edge id ``k``) and, when inverse augmentation is
on, one inverse record (edge id ``k + n_train``) under relation ``r + |R|``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

SPLITS = ("train", "valid", "test")
FORWARD, INVERSE = 0, 1


class TripleParseError(ValueError):
    def __init__(self, path, lineno, line):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(
            f"{path}:{lineno}: expected 3 tab-separated fields, got {line!r}"
        )


class Vocabulary:
    """Bidirectional name <-> dense id mapping for entities and relations."""

    def __init__(self, entities=(), relations=()):
        self.entities: list[str] = []
        self.relations: list[str] = []
        self._ent: dict[str, int] = {}
        self._rel: dict[str, int] = {}
        for e in entities:
            self.add_entity(e)
        for r in relations:
            self.add_relation(r)

    def add_entity(self, name: str) -> int:
        idx = self._ent.get(name)
        if idx is None:
            idx = self._ent[name] = len(self.entities)
            self.entities.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self._rel.get(name)
        if idx is None:
            idx = self._rel[name] = len(self.relations)
            self.relations.append(name)
        return idx

    def entity_id(self, name: str) -> int:
        try:
            return self._ent[name]
        except KeyError:
            raise KeyError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._rel[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def copy(self) -> "Vocabulary":
        return Vocabulary(self.entities, self.relations)

    def __eq__(self, other):
        return (
            isinstance(other, Vocabulary)
            and self.entities == other.entities
            and self.relations == other.relations
        )


@dataclass
class TripleFragment:
    """Result of reading one triple file."""

    vocab: Vocabulary
    split: str
    triples: np.ndarray
    n_lines: int = 0
    n_duplicates: int = 0

    @property
    def report(self) -> dict:
        return {
            "split": self.split,
            "lines": self.n_lines,
            "triples": int(len(self.triples)),
            "duplicates": self.n_duplicates,
            "entities": self.vocab.n_entities,
            "relations": self.vocab.n_relations,
        }


def _as_triples(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    return arr.reshape(-1, 3)


def _dedup(triples: np.ndarray) -> tuple[np.ndarray, int]:
    seen = set()
    keep = []
    for k, t in enumerate(map(tuple, triples.tolist())):
        if t not in seen:
            seen.add(t)
            keep.append(k)
    return triples[keep], len(triples) - len(keep)


def load_triples(path, split: str = "train", vocab: Vocabulary | None = None) -> TripleFragment:
    """Read a ``head<TAB>relation<TAB>tail`` file.

    Names are interned into ``vocab`` (a new one if omitted) in first-seen
    order. Blank lines are ignored; duplicate triples are dropped and counted.
    """
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    vocab = Vocabulary() if vocab is None else vocab
    rows = []
    n_lines = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            n_lines += 1
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(path, lineno, line)
            h, r, t = (p.strip() for p in parts)
            rows.append((vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)))
    triples, n_dup = _dedup(_as_triples(rows))
    return TripleFragment(vocab, split, triples, n_lines=n_lines, n_duplicates=n_dup)


def write_triples(path, triples: np.ndarray, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s, r, o in np.asarray(triples).tolist():
            fh.write(f"{vocab.entities[s]}\t{vocab.relations[r]}\t{vocab.entities[o]}\n")


@dataclass
class EncoderIndex:
    """Flat edge-record arrays plus CSR views grouped by destination node.

    ``order[indptr[i]:indptr[i+1]]`` are the edge ids entering node ``i``.
    """

    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    direction: np.ndarray
    triple: np.ndarray
    train_target: np.ndarray
    adjacency_only: np.ndarray
    n_nodes: int
    n_enc_relations: int
    add_inverse: bool
    order: np.ndarray = field(repr=False, default=None)
    indptr: np.ndarray = field(repr=False, default=None)
    src_incidence: sp.csr_matrix = field(repr=False, default=None)
    rel_incidence: sp.csr_matrix = field(repr=False, default=None)

    def __post_init__(self):
        m = len(self.src)
        self.order = np.argsort(self.dst, kind="stable")
        counts = np.bincount(self.dst, minlength=self.n_nodes)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        ones = np.ones(m)
        self.src_incidence = sp.csr_matrix(
            (ones, (self.src, np.arange(m))), shape=(self.n_nodes, m)
        )
        self.rel_incidence = sp.csr_matrix(
            (ones, (self.rel, np.arange(m))), shape=(self.n_enc_relations, m)
        )

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def incoming_ids(self, node: int) -> np.ndarray:
        return self.order[self.indptr[node]:self.indptr[node + 1]]

    def incoming(self, node: int) -> list[tuple[int, int, int]]:
        """(encoder relation, source, edge id) for every edge entering ``node``."""
        ids = self.incoming_ids(node)
        return [(int(self.rel[e]), int(self.src[e]), int(e)) for e in ids]

    def aggregation_matrix(self, coef: np.ndarray) -> sp.csr_matrix:
        """N x n_edges matrix with ``coef[e]`` at (dst[e], e)."""
        coef = np.asarray(coef, dtype=float)
        return sp.csr_matrix(
            (coef[self.order], self.order, self.indptr),
            shape=(self.n_nodes, self.n_edges),
        )


class KnowledgeGraph:
    """Vocabulary, split triples and per-train-triple flags.

    ``adjacency_only[k]`` marks train triple ``k`` as present for message
    passing but excluded from the positive pool. ``provenance[k]`` is a free
    tag (``clean``, ``held-out``, ``noise``...). Call :func:`build_encoder_index`
    to obtain the message-passing index.
    """

    def __init__(self, vocab: Vocabulary, train=(), valid=(), test=(),
                 adjacency_only=None, provenance=None):
        self.vocab = vocab
        self.splits = {
            "train": _as_triples(train),
            "valid": _as_triples(valid),
            "test": _as_triples(test),
        }
        n = len(self.splits["train"])
        self.adjacency_only = (
            np.zeros(n, dtype=bool) if adjacency_only is None
            else np.asarray(adjacency_only, dtype=bool).copy()
        )
        self.provenance = ["clean"] * n if provenance is None else list(provenance)
        if len(self.adjacency_only) != n or len(self.provenance) != n:
            raise ValueError("flag/provenance length must equal number of train triples")
        for name, arr in self.splits.items():
            if len(arr) and (
                arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= vocab.n_entities
                or arr[:, 1].min() < 0 or arr[:, 1].max() >= vocab.n_relations
            ):
                raise ValueError(f"{name} split references ids outside the vocabulary")
        self.index: EncoderIndex | None = None

    @classmethod
    def from_files(cls, train, valid=None, test=None) -> "KnowledgeGraph":
        vocab = Vocabulary()
        frags = {"train": load_triples(train, "train", vocab)}
        for name, path in (("valid", valid), ("test", test)):
            if path is not None:
                frags[name] = load_triples(path, name, vocab)
        kg = cls(vocab, **{k: f.triples for k, f in frags.items()})
        kg.load_report = {k: f.report for k, f in frags.items()}
        return kg

    @classmethod
    def from_labeled(cls, train, valid=(), test=(), **kwargs) -> "KnowledgeGraph":
        """Intern string triples ``[(head, rel, tail), ...]`` into a graph.

        Names are interned train first, then valid, then test.
        """
        vocab = Vocabulary()
        splits = {}
        for name, triples in (("train", train), ("valid", valid), ("test", test)):
            rows = [(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
                    for h, r, t in triples]
            splits[name], _ = _dedup(_as_triples(rows))
        return cls(vocab, **splits, **kwargs)

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @property
    def train(self) -> np.ndarray:
        return self.splits["train"]

    @property
    def train_target(self) -> np.ndarray:
        return ~self.adjacency_only

    def positive_pool(self) -> np.ndarray:
        return self.train[self.train_target]

    def known_triples(self) -> set[tuple[int, int, int]]:
        """All triples in train (targets and adjacency-only), valid and test."""
        out = set()
        for arr in self.splits.values():
            out.update(map(tuple, arr.tolist()))
        return out

    def copy(self) -> "KnowledgeGraph":
        kg = KnowledgeGraph(
            self.vocab.copy(), self.splits["train"].copy(), self.splits["valid"].copy(),
            self.splits["test"].copy(), self.adjacency_only, self.provenance,
        )
        kg.index = self.index
        return kg

    def require_index(self) -> EncoderIndex:
        if self.index is None:
            raise RuntimeError("graph has no encoder index; call build_encoder_index first")
        return self.index

    def __eq__(self, other):
        return (
            isinstance(other, KnowledgeGraph)
            and self.vocab == other.vocab
            and all(np.array_equal(self.splits[k], other.splits[k]) for k in SPLITS)
            and np.array_equal(self.adjacency_only, other.adjacency_only)
            and self.provenance == other.provenance
            and (self.index is None) == (other.index is None)
            and (self.index is None or self.index.add_inverse == other.index.add_inverse)
        )


def build_encoder_index(kg: KnowledgeGraph, add_inverse: bool = True) -> KnowledgeGraph:
    """Return a copy of ``kg`` carrying an :class:`EncoderIndex`."""
    out = kg.copy()
    train = kg.train
    n = len(train)
    s, r, o = train[:, 0], train[:, 1], train[:, 2]
    fwd_target = kg.train_target
    if add_inverse:
        src = np.concatenate([s, o])
        dst = np.concatenate([o, s])
        rel = np.concatenate([r, r + kg.n_relations])
        direction = np.concatenate([np.full(n, FORWARD), np.full(n, INVERSE)])
        triple = np.concatenate([np.arange(n), np.arange(n)])
        target = np.concatenate([fwd_target, fwd_target])
        n_enc = 2 * kg.n_relations
    else:
        src, dst, rel = s.copy(), o.copy(), r.copy()
        direction = np.full(n, FORWARD)
        triple = np.arange(n)
        target = fwd_target.copy()
        n_enc = kg.n_relations
    out.index = EncoderIndex(
        src=src.astype(np.int64), dst=dst.astype(np.int64), rel=rel.astype(np.int64),
        direction=direction.astype(np.int8), triple=triple.astype(np.int64),
        train_target=target.astype(bool), adjacency_only=~target.astype(bool),
        n_nodes=kg.n_entities, n_enc_relations=max(n_enc, 1), add_inverse=add_inverse,
    )
    return out


def mark_adjacency_only(kg: KnowledgeGraph, edge_ids) -> KnowledgeGraph:
    """Flag forward edges (and their inverse copies) as adjacency-only.

    Edge ids are forward edge ids, i.e. indices into the train split. The
    returned graph is re-indexed with the same inverse setting as ``kg``.
    """
    edge_ids = np.asarray(list(edge_ids), dtype=np.int64)
    n = len(kg.train)
    bad = edge_ids[(edge_ids < 0) | (edge_ids >= n)]
    if len(bad):
        raise KeyError(f"unknown forward edge id(s): {bad[:5].tolist()}")
    out = kg.copy()
    out.adjacency_only[edge_ids] = True
    add_inverse = kg.index.add_inverse if kg.index is not None else True
    return build_encoder_index(out, add_inverse)


# ---------------------------------------------------------------- snapshots

SNAPSHOT_FORMAT = "kgatt-graph/1"


def save_snapshot(kg: KnowledgeGraph, path) -> None:
    """Write the graph as JSON: vocab, splits and one row per edge record."""
    doc = {
        "format": SNAPSHOT_FORMAT,
        "entities": kg.vocab.entities,
        "relations": kg.vocab.relations,
        "splits": {k: kg.splits[k].tolist() for k in SPLITS},
        "add_inverse": None if kg.index is None else kg.index.add_inverse,
        "edges": [],
    }
    if kg.index is not None:
        ix = kg.index
        for e in range(ix.n_edges):
            k = int(ix.triple[e])
            doc["edges"].append({
                "edge_id": e,
                "subject": int(ix.src[e]),
                "relation": int(ix.rel[e]),
                "object": int(ix.dst[e]),
                "direction": "forward" if ix.direction[e] == FORWARD else "inverse",
                "train_target": bool(ix.train_target[e]),
                "adjacency_only": bool(ix.adjacency_only[e]),
                "provenance": kg.provenance[k],
            })
    else:
        for k, (s, r, o) in enumerate(kg.train.tolist()):
            doc["edges"].append({
                "edge_id": k, "subject": s, "relation": r, "object": o,
                "direction": "forward",
                "train_target": bool(not kg.adjacency_only[k]),
                "adjacency_only": bool(kg.adjacency_only[k]),
                "provenance": kg.provenance[k],
            })
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_snapshot(path) -> KnowledgeGraph:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"{path}: not a {SNAPSHOT_FORMAT} snapshot")
    vocab = Vocabulary(doc["entities"], doc["relations"])
    n = len(doc["splits"]["train"])
    adj = np.zeros(n, dtype=bool)
    prov = ["clean"] * n
    for row in doc["edges"]:
        if row["direction"] == "forward":
            adj[row["edge_id"]] = row["adjacency_only"]
            prov[row["edge_id"]] = row["provenance"]
    kg = KnowledgeGraph(vocab, **{k: doc["splits"][k] for k in SPLITS},
                        adjacency_only=adj, provenance=prov)
    if doc["add_inverse"] is not None:
        kg = build_encoder_index(kg, doc["add_inverse"])
    return kg


def write_provenance(kg: KnowledgeGraph, path) -> None:
    """Sidecar CSV ``edge_id,tag`` over forward edge ids."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("edge_id,tag\n")
        for k, tag in enumerate(kg.provenance):
            fh.write(f"{k},{tag}\n")


def read_provenance(path) -> list[str]:
    tags = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "edge_id,tag":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for k, line in enumerate(fh):
            eid, tag = line.rstrip("\n").split(",", 1)
            if int(eid) != k:
                raise ValueError(f"{path}: edge ids must be dense and ordered")
            tags.append(tag)
    return tags


def replace_splits(kg: KnowledgeGraph, **splits) -> KnowledgeGraph:
    """Copy of ``kg`` with some splits swapped (flags kept only if train unchanged)."""
    out = kg.copy()
    for k, v in splits.items():
        out.splits[k] = _as_triples(v)
    if "train" in splits:
        n = len(out.train)
        out.adjacency_only = np.zeros(n, dtype=bool)
        out.provenance = ["clean"] * n
    out.index = None
    return out


__all__ = [
    "FORWARD", "INVERSE", "SPLITS", "EncoderIndex", "KnowledgeGraph", "TripleFragment",
    "TripleParseError", "Vocabulary", "build_encoder_index", "load_snapshot",
    "load_triples", "mark_adjacency_only", "read_provenance", "replace_splits", "save_snapshot",
    "write_provenance", "write_triples",
]
