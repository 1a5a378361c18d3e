import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from kgatt import GCNNLinkPredictor
from kgatt.estimator import check_triples


def toy():
    rng = np.random.default_rng(0)
    names = [f"e{k}" for k in range(12)]
    X = sorted({(names[a], f"r{rng.integers(2)}", names[b])
                for a, b in rng.integers(0, 12, size=(40, 2)) if a != b})
    return np.array(X, dtype=object)


def test_params_and_clone():
    est = GCNNLinkPredictor(dim=8, epochs=3, decoder="complex")
    p = est.get_params()
    assert p["dim"] == 8 and p["decoder"] == "complex" and p["epochs"] == 3
    c = clone(est)
    assert c.get_params() == p and c is not est
    est.set_params(lr=0.1)
    assert est.lr == 0.1


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GCNNLinkPredictor().predict_proba([("a", "r", "b")])


def test_fit_predict():
    X = toy()
    est = GCNNLinkPredictor(dim=8, epochs=20, random_state=1).fit(X[:-5], X_valid=X[-5:])
    proba = est.predict_proba(X[:5])
    assert proba.shape == (5, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert est.predict(X[:5]).dtype == bool
    assert est.transform(["e0", "e1"]).shape == (2, 8)
    assert 0 < est.score(X[-5:]) <= 1
    assert est.edge_weights().shape == (2 * (len(X) - 5),)
    assert est.report_.final_loss < est.report_.initial_loss


def test_deterministic():
    X = toy()
    a = GCNNLinkPredictor(dim=8, epochs=5).fit(X)
    b = GCNNLinkPredictor(dim=8, epochs=5).fit(X)
    assert a.params_.digest() == b.params_.digest()


def test_unknown_names():
    est = GCNNLinkPredictor(dim=4, epochs=1).fit(toy())
    with pytest.raises(ValueError, match="unknown entity"):
        est.decision_function([("zzz", "r0", "e1")])


def test_check_triples_shape():
    assert check_triples(("a", "r", "b")).shape == (1, 3)
    with pytest.raises(ValueError):
        check_triples([("a", "b")])
