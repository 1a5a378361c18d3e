"""Negative sampling, cross-entropy loss, analytic gradients and the
optimization loop."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .attention import normalize_backward
from .decoder import DECODERS, probability, score, score_grads
from .encoder import ModelParameters, draw_masks, init_parameters, messages
from .graph import KnowledgeGraph, Vocabulary

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


@dataclass
class TrainConfig:
    dim: int = 300
    n_neg: int = 10
    emb_dropout: float = 0.5
    link_dropout: float = 0.5
    lr: float = 1e-2
    epochs: int = 200
    batch_size: int = 1024
    seed: int = 0
    decoder: str = "distmult"
    attention: str = "learned"
    use_bias: bool = True
    eval_every: int = 1
    valid_max_triples: int | None = None

    def __post_init__(self):
        if self.n_neg < 1:
            raise ValueError(f"n_neg must be >= 1, got {self.n_neg}")
        for name in ("emb_dropout", "link_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.attention not in ("learned", "fixed"):
            raise ValueError(f"attention must be 'learned' or 'fixed', got {self.attention!r}")
        if self.dim < 1 or self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("dim, batch_size and eval_every must be positive, epochs >= 0")
        if self.decoder == "complex" and self.dim % 2:
            raise ValueError(f"ComplEx needs an even dimension, got {self.dim}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    val_mrr: list[tuple[int, float]] = field(default_factory=list)
    best_epoch: int | None = None
    initial_loss: float | None = None
    final_loss: float | None = None
    wall_clock: float = 0.0
    snapshot_id: str = ""


# ------------------------------------------------------------ sampling

def corrupt_batch(positives, n: int, n_entities: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` corruptions per positive, row-major (all of positive 0 first).

    Each negative replaces the subject or the object (fair coin) with an
    entity drawn uniformly from every entity except the one it replaces.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n_entities < 2:
        raise ValueError("cannot corrupt triples with fewer than 2 entities")
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    neg = np.repeat(pos, n, axis=0)
    m = len(neg)
    col = np.where(rng.random(m) < 0.5, 0, 2)
    draw = rng.integers(0, n_entities - 1, size=m)
    orig = neg[np.arange(m), col]
    neg[np.arange(m), col] = draw + (draw >= orig)
    return neg


def sample_negatives(positive, n: int, vocab, rng: np.random.Generator) -> np.ndarray:
    """``n`` single-side corruptions of one triple.

    ``vocab`` is a :class:`Vocabulary` or an entity count.
    """
    n_entities = vocab.n_entities if isinstance(vocab, Vocabulary) else int(vocab)
    return corrupt_batch(np.asarray(positive).reshape(1, 3), n, n_entities, rng)


# ------------------------------------------------------------ loss

def loss(probabilities, labels) -> float:
    """Mean binary cross-entropy with probabilities clamped away from 0 and 1."""
    p = np.clip(np.asarray(probabilities, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


# ------------------------------------------------------------ gradients

def _scatter_rows(idx, rows, n_out):
    m = len(idx)
    S = sp.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n_out, m))
    return np.asarray(S @ rows)


def forward_backward(params: ModelParameters, kg: KnowledgeGraph, triples, labels,
                     emb_mask=None, link_mask=None, with_grad: bool = True):
    """Loss and gradients for fixed dropout masks.

    Returns ``(loss, grads)`` with one gradient array per parameter block
    (``attention`` only in learned mode).
    """
    ix = kg.require_index()
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    y = np.asarray(labels, dtype=float)
    if len(triples) == 0:
        raise ValueError("empty batch")
    norm = params.coefficients(kg)
    coef = norm.coef if link_mask is None else norm.coef * link_mask
    entity = params.entity if emb_mask is None else params.entity * emb_mask
    msg = messages(entity, params.rel_diag, kg)
    H = np.asarray(ix.aggregation_matrix(coef) @ msg)
    if params.bias is not None:
        H = H + params.bias

    s, r, o = triples[:, 0], triples[:, 1], triples[:, 2]
    hs, hr, ho = H[s], params.relation[r], H[o]
    raw = score(params.decoder, hs, hr, ho)
    p = probability(raw)
    value = loss(p, y)
    if not with_grad:
        return value, None

    n = len(y)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dscore = np.where(inside, (p - y) / n, 0.0)
    gs, gr, go = (g * dscore[:, None] for g in score_grads(params.decoder, hs, hr, ho))
    N = kg.n_entities
    G = _scatter_rows(s, gs, N) + _scatter_rows(o, go, N)
    grads = {"relation": _scatter_rows(r, gr, kg.n_relations)}
    if params.bias is not None:
        grads["bias"] = G

    G_dst = G[ix.dst]
    dmsg = coef[:, None] * G_dst
    d_coef = np.einsum("ij,ij->i", G_dst, msg)
    d_entity = np.asarray(ix.src_incidence @ (dmsg * params.rel_diag[ix.rel]))
    grads["entity"] = d_entity if emb_mask is None else d_entity * emb_mask
    grads["rel_diag"] = np.asarray(ix.rel_incidence @ (dmsg * entity[ix.src]))
    if params.attention is not None:
        if link_mask is not None:
            d_coef = d_coef * link_mask
        grads["attention"] = normalize_backward(params.attention, norm, d_coef, kg)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    return value, grads


def gradients(params: ModelParameters, kg: KnowledgeGraph, batch, config: TrainConfig,
              rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Gradients of the masked batch loss; masks are drawn from ``rng``.

    ``batch`` is ``(triples, labels)``.
    """
    triples, labels = batch
    emb_mask, link_mask = draw_masks(kg, params.dim, config.emb_dropout, config.link_dropout, rng)
    _, grads = forward_backward(params, kg, triples, labels, emb_mask, link_mask)
    return grads


# ------------------------------------------------------------ optimizer

class Adam:
    def __init__(self, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of every array in ``params`` that has a gradient."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


# ------------------------------------------------------------ loop

def _full_loss(params, kg, pool, negatives):
    triples = np.concatenate([pool, negatives])
    labels = np.concatenate([np.ones(len(pool)), np.zeros(len(negatives))])
    value, _ = forward_backward(params, kg, triples, labels, with_grad=False)
    return value


def train(config: TrainConfig, kg: KnowledgeGraph, callback=None):
    """Fit parameters on ``kg``'s positive pool.

    Validation MRR (filtered) is computed every ``eval_every`` epochs when
    the graph has a valid split; the best-scoring parameters are returned.
    Returns ``(params, report)``.
    """
    from .evaluation import evaluate

    kg.require_index()
    pool = kg.positive_pool()
    if len(pool) == 0:
        raise ValueError("positive pool is empty: every train edge is adjacency-only")
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    params = init_parameters(kg, config.dim, config.decoder, config.attention,
                             config.use_bias, rng)
    params.meta["config_digest"] = config.digest()
    report = TrainReport()
    probe_rng = np.random.default_rng([config.seed, 1])
    probe_neg = corrupt_batch(pool, config.n_neg, kg.n_entities, probe_rng)
    report.initial_loss = _full_loss(params, kg, pool, probe_neg)

    valid = kg.splits["valid"]
    if config.valid_max_triples is not None:
        valid = valid[: config.valid_max_triples]
    best, best_mrr = None, -np.inf
    opt = Adam(config.lr)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(pool))
        total = 0.0
        for lo in range(0, len(pool), config.batch_size):
            pos = pool[perm[lo:lo + config.batch_size]]
            neg = corrupt_batch(pos, config.n_neg, kg.n_entities, rng)
            triples = np.concatenate([pos, neg])
            labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
            emb_mask, link_mask = draw_masks(kg, config.dim, config.emb_dropout,
                                             config.link_dropout, rng)
            value, grads = forward_backward(params, kg, triples, labels, emb_mask, link_mask)
            opt.step(params.blocks(), grads)
            total += value * len(pos)
        report.losses.append(total / len(pool))
        if len(valid) and (epoch % config.eval_every == 0 or epoch == config.epochs):
            mrr = evaluate(params, kg, triples=valid).mrr_filtered
            report.val_mrr.append((epoch, mrr))
            if mrr > best_mrr:
                best_mrr, best, report.best_epoch = mrr, params.copy(), epoch
        log.debug("epoch %d loss %.5f", epoch, report.losses[-1])
        if callback is not None:
            callback(epoch, params, report)
    if best is not None:
        params = best
    report.final_loss = _full_loss(params, kg, pool, probe_neg)
    report.snapshot_id = params.digest()
    report.wall_clock = time.perf_counter() - start
    return params, report


# ------------------------------------------------------------ persistence

CHECKPOINT_FORMAT = "kgatt-checkpoint/1"


def save_checkpoint(path, params: ModelParameters, config: TrainConfig | None = None) -> None:
    """``.npz`` archive: one array per parameter block plus a JSON header
    (format tag, decoder, config and its digest, parameter digest)."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "decoder": params.decoder,
        "config": None if config is None else config.to_dict(),
        "config_digest": None if config is None else config.digest(),
        "param_digest": params.digest(),
    }
    blocks = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.blocks().items()}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **blocks)


def load_checkpoint(path) -> tuple[ModelParameters, TrainConfig | None]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        blocks = {k: z[k] for k in z.files if k != "header"}
    params = ModelParameters(**blocks, decoder=header["decoder"])
    if params.digest() != header["param_digest"]:
        raise ValueError(f"{path}: parameter digest mismatch")
    config = None if header["config"] is None else TrainConfig(**header["config"])
    return params, config


def write_training_log(path, report: TrainReport) -> None:
    """CSV ``epoch,loss,val_mrr`` (val_mrr blank on epochs without evaluation)."""
    val = dict(report.val_mrr)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss,val_mrr\n")
        for epoch, value in enumerate(report.losses, start=1):
            v = val.get(epoch)
            fh.write(f"{epoch},{value!r},{'' if v is None else repr(v)}\n")
