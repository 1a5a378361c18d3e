"""scikit-learn style front end.

``X`` is always an array-like of ``(head, relation, tail)`` name triples.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .decoder import probability, score
from .encoder import encode_all
from .evaluation import evaluate
from .graph import KnowledgeGraph, Vocabulary, build_encoder_index
from .training import TrainConfig, train


def check_triples(X, vocab: Vocabulary | None = None) -> np.ndarray:
    """Validate an ``(n, 3)`` array of name triples.

    With ``vocab`` the names are mapped to ids and unknown names raise
    ``ValueError``; otherwise the validated string array is returned.
    """
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 1 and len(arr) == 3 and not isinstance(arr[0], (list, tuple, np.ndarray)):
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of triples, got shape {arr.shape}")
    if vocab is None:
        return arr.astype(str)
    try:
        return np.array(
            [(vocab.entity_id(str(h)), vocab.relation_id(str(r)), vocab.entity_id(str(t)))
             for h, r, t in arr], dtype=np.int64,
        ).reshape(-1, 3)
    except KeyError as exc:
        raise ValueError(f"triple references {exc.args[0]}") from None


class GCNNLinkPredictor(BaseEstimator):
    """Link predictor with budget-normalized learned edge attention.

    ``fit`` interns the training triples, builds the message-passing graph and
    trains; the fitted graph, parameters and training report are stored as
    ``graph_``, ``params_`` and ``report_``.
    """

    def __init__(self, dim=300, n_neg=10, emb_dropout=0.5, link_dropout=0.5, lr=1e-2,
                 epochs=200, batch_size=1024, decoder="distmult", attention="learned",
                 use_bias=True, add_inverse=True, eval_every=1, random_state=0):
        self.dim = dim
        self.n_neg = n_neg
        self.emb_dropout = emb_dropout
        self.link_dropout = link_dropout
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.decoder = decoder
        self.attention = attention
        self.use_bias = use_bias
        self.add_inverse = add_inverse
        self.eval_every = eval_every
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim, n_neg=self.n_neg, emb_dropout=self.emb_dropout,
            link_dropout=self.link_dropout, lr=self.lr, epochs=self.epochs,
            batch_size=self.batch_size, seed=int(self.random_state or 0), decoder=self.decoder,
            attention=self.attention, use_bias=self.use_bias, eval_every=self.eval_every,
        )

    def fit(self, X, y=None, X_valid=None, adjacency_only=None):
        """Train on triples ``X``.

        ``adjacency_only`` is an optional boolean mask over ``X``: those
        triples carry messages but are never positives. ``X_valid`` enables
        best-validation snapshotting. ``y`` is ignored.
        """
        if isinstance(X, KnowledgeGraph):
            kg = X if X.index is not None else build_encoder_index(X, self.add_inverse)
        else:
            triples = check_triples(X)
            vocab = Vocabulary()
            ids = [(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
                   for h, r, t in triples]
            valid = []
            if X_valid is not None:
                for h, r, t in check_triples(X_valid):
                    valid.append((vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)))
            kg = KnowledgeGraph(vocab, ids, valid, adjacency_only=adjacency_only)
            kg = build_encoder_index(kg, self.add_inverse)
        self.graph_ = kg
        self.params_, self.report_ = train(self._config(), kg)
        self.embeddings_ = encode_all(self.params_, kg)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Raw decoder scores."""
        check_is_fitted(self, "params_")
        ids = check_triples(X, self.graph_.vocab)
        H = self.embeddings_
        rel = self.params_.relation
        return score(self.params_.decoder, H[ids[:, 0]], rel[ids[:, 1]], H[ids[:, 2]])

    def predict_proba(self, X) -> np.ndarray:
        """``(n, 2)`` array: probability of absence, probability of existence."""
        p = probability(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return self.predict_proba(X)[:, 1] >= threshold

    def transform(self, X) -> np.ndarray:
        """Embeddings of the named entities."""
        check_is_fitted(self, "params_")
        names = np.asarray(X, dtype=object).ravel()
        try:
            idx = [self.graph_.vocab.entity_id(str(n)) for n in names]
        except KeyError as exc:
            raise ValueError(exc.args[0]) from None
        return self.embeddings_[idx]

    def score(self, X, y=None) -> float:
        """Filtered MRR on triples ``X``."""
        check_is_fitted(self, "params_")
        ids = check_triples(X, self.graph_.vocab)
        return evaluate(self.params_, self.graph_, triples=ids).mrr_filtered

    def edge_weights(self) -> np.ndarray:
        """Normalized attention coefficient of every edge record."""
        check_is_fitted(self, "params_")
        return self.params_.coefficients(self.graph_).coef
