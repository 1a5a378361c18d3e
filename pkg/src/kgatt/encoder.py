"""Single-layer relational graph-convolution encoder.

The per-relation weight matrix is factored as a shared entity table times a
per-relation diagonal, so node ``i``'s embedding is::

    h_i = b_i + sum_{(r, j, e) in in(i)} c_e * (E_j * D_r)

with no nonlinearity.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .attention import NormalizedAttention, apply_link_dropout, normalize, uniform_attention
from .decoder import DECODERS
from .graph import KnowledgeGraph

BLOCKS = ("entity", "bias", "rel_diag", "relation", "attention")


@dataclass
class ModelParameters:
    """All trainable blocks.

    ``bias`` is ``None`` when the per-node bias is disabled and ``attention``
    is ``None`` in fixed-uniform mode.
    """

    entity: np.ndarray
    rel_diag: np.ndarray
    relation: np.ndarray
    bias: np.ndarray | None = None
    attention: np.ndarray | None = None
    decoder: str = "distmult"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in BLOCKS if getattr(self, k) is not None}

    def copy(self) -> "ModelParameters":
        return ModelParameters(
            **{k: v.copy() for k, v in self.blocks().items()},
            decoder=self.decoder, meta=dict(self.meta),
        )

    def coefficients(self, kg: KnowledgeGraph) -> NormalizedAttention:
        if self.attention is None:
            return uniform_attention(kg)
        return normalize(self.attention, kg)

    def digest(self) -> str:
        """SHA-256 over every block's bytes; identifies a parameter snapshot."""
        h = hashlib.sha256(self.decoder.encode())
        for k, v in self.blocks().items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        return h.hexdigest()

    def check(self, kg: KnowledgeGraph) -> None:
        ix = kg.require_index()
        n, d = self.entity.shape
        problems = []
        if n != kg.n_entities:
            problems.append(f"entity table has {n} rows, graph has {kg.n_entities} entities")
        if self.bias is not None and self.bias.shape != (n, d):
            problems.append(f"bias shape {self.bias.shape} != {(n, d)}")
        if self.rel_diag.shape != (ix.n_enc_relations, d):
            problems.append(f"rel_diag shape {self.rel_diag.shape} != {(ix.n_enc_relations, d)}")
        if self.relation.shape != (kg.n_relations, d):
            problems.append(f"relation shape {self.relation.shape} != {(kg.n_relations, d)}")
        if self.attention is not None and self.attention.shape != (ix.n_edges,):
            problems.append(f"attention has {self.attention.shape[0]} entries, graph has {ix.n_edges} edges")
        if self.decoder == "complex" and d % 2:
            problems.append(f"ComplEx needs an even dimension, got {d}")
        if problems:
            raise ValueError("; ".join(problems))


def init_parameters(kg: KnowledgeGraph, dim: int = 300, decoder: str = "distmult",
                    attention: str = "learned", use_bias: bool = True,
                    rng: np.random.Generator | None = None) -> ModelParameters:
    """Entity rows drawn on the unit sphere; diagonals start at 1, bias at 0,
    raw attention at 1. Relation vectors are Gaussian with unit expected norm."""
    if decoder not in DECODERS:
        raise ValueError(f"unknown decoder {decoder!r}; expected one of {DECODERS}")
    if attention not in ("learned", "fixed"):
        raise ValueError(f"attention must be 'learned' or 'fixed', got {attention!r}")
    if decoder == "complex" and dim % 2:
        raise ValueError(f"ComplEx needs an even dimension, got {dim}")
    rng = np.random.default_rng() if rng is None else rng
    ix = kg.require_index()
    E = rng.standard_normal((kg.n_entities, dim))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    R = rng.standard_normal((kg.n_relations, dim)) / np.sqrt(dim)
    return ModelParameters(
        entity=E,
        rel_diag=np.ones((ix.n_enc_relations, dim)),
        relation=R,
        bias=np.zeros((kg.n_entities, dim)) if use_bias else None,
        attention=np.ones(ix.n_edges) if attention == "learned" else None,
        decoder=decoder,
    )


def messages(entity, rel_diag, kg: KnowledgeGraph) -> np.ndarray:
    """Per-edge message ``E_src * D_rel`` (n_edges x d)."""
    ix = kg.require_index()
    return entity[ix.src] * rel_diag[ix.rel]


def aggregate(params: ModelParameters, kg: KnowledgeGraph, coef, entity=None) -> np.ndarray:
    """Sparse-matrix form of the layer; ``entity`` overrides ``params.entity``."""
    ix = kg.require_index()
    entity = params.entity if entity is None else entity
    msg = messages(entity, params.rel_diag, kg)
    H = ix.aggregation_matrix(np.asarray(coef, dtype=float)) @ msg
    if params.bias is not None:
        H = H + params.bias
    return np.asarray(H)


def draw_masks(kg: KnowledgeGraph, dim: int, emb_dropout: float, link_dropout: float,
               rng: np.random.Generator) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Inverted-dropout scale arrays for the entity table and the edge coefficients."""
    for p in (emb_dropout, link_dropout):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    ix = kg.require_index()
    emb = None
    if emb_dropout > 0:
        emb = (rng.random((kg.n_entities, dim)) >= emb_dropout) / (1.0 - emb_dropout)
    link = None
    if link_dropout > 0:
        _, link = apply_link_dropout(np.ones(ix.n_edges), link_dropout, rng)
    return emb, link


def encode_all(params: ModelParameters, kg: KnowledgeGraph, coef=None, train_mode: bool = False,
               rng: np.random.Generator | None = None, emb_dropout: float = 0.5,
               link_dropout: float = 0.5) -> np.ndarray:
    """Embedding matrix (N x d). Dropout is applied only when ``train_mode``."""
    params.check(kg)
    coef = params.coefficients(kg).coef if coef is None else np.asarray(coef, dtype=float)
    entity = params.entity
    if train_mode:
        rng = np.random.default_rng() if rng is None else rng
        emb_mask, link_mask = draw_masks(kg, params.dim, emb_dropout, link_dropout, rng)
        if emb_mask is not None:
            entity = entity * emb_mask
        if link_mask is not None:
            coef = coef * link_mask
    return aggregate(params, kg, coef, entity)


def encode_node(params: ModelParameters, kg: KnowledgeGraph, coef, i: int) -> np.ndarray:
    """Row ``i`` of :func:`encode_all` in eval mode, computed from ``i``'s edges only."""
    ix = kg.require_index()
    if not 0 <= int(i) < kg.n_entities:
        raise IndexError(f"node id {i} out of range [0, {kg.n_entities})")
    coef = params.coefficients(kg).coef if coef is None else np.asarray(coef, dtype=float)
    out = np.zeros(params.dim)
    # same accumulation order as the CSR product in aggregate(), so rows match bit-for-bit
    for e in ix.incoming_ids(int(i)):
        out += coef[e] * (params.entity[ix.src[e]] * params.rel_diag[ix.rel[e]])
    if params.bias is not None:
        out = out + params.bias[int(i)]
    return out


def write_embeddings_csv(path, H: np.ndarray, kg: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["entity"] + [f"dim_{k}" for k in range(H.shape[1])])
        for name, row in zip(kg.vocab.entities, H):
            out.writerow([name] + [float(x) for x in row])
