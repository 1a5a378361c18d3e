import math

import numpy as np
import pytest

from kgatt.attention import override_edge
from kgatt.encoder import draw_masks
from kgatt.graph import KnowledgeGraph, Vocabulary, build_encoder_index, mark_adjacency_only
from kgatt.training import (
    TrainConfig, forward_backward, gradients, load_checkpoint, loss, sample_negatives,
    save_checkpoint, train, write_training_log,
)

from conftest import fd_instance, finite_difference_check, random_graph


class TestNegatives:
    def test_hamming_one(self, rng):
        pos = np.array([3, 1, 7])
        neg = sample_negatives(pos, 10, 20, rng)
        assert neg.shape == (10, 3)
        for t in neg:
            diff = t != pos
            assert diff.sum() == 1 and not diff[1]

    def test_forced_outcome(self, rng):
        v = Vocabulary()
        v.add_entity("A"), v.add_entity("B"), v.add_relation("r")
        neg = sample_negatives([0, 0, 1], 50, v, rng)
        assert {tuple(t) for t in neg} <= {(1, 0, 1), (0, 0, 0)}
        heads = neg[neg[:, 0] != 0]
        assert all(tuple(t) == (1, 0, 1) for t in heads)

    def test_single_entity(self, rng):
        with pytest.raises(ValueError):
            sample_negatives([0, 0, 0], 1, 1, rng)

    def test_n_must_be_positive(self, rng):
        with pytest.raises(ValueError):
            sample_negatives([0, 0, 1], 0, 5, rng)

    def test_seeded(self):
        a = sample_negatives([0, 0, 1], 20, 9, np.random.default_rng(3))
        b = sample_negatives([0, 0, 1], 20, 9, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_replacement_uniform(self):
        neg = sample_negatives([0, 0, 1], 40000, 5, np.random.default_rng(0))
        objs = neg[neg[:, 0] == 0, 2]
        counts = np.bincount(objs, minlength=5)
        assert counts[1] == 0
        others = counts[[0, 2, 3, 4]] / counts.sum()
        np.testing.assert_allclose(others, 0.25, atol=0.02)
        assert abs((neg[:, 0] != 0).mean() - 0.5) < 0.02


class TestLoss:
    def test_half(self):
        assert loss([0.5], [1]) == pytest.approx(math.log(2), abs=1e-12)

    def test_exact_labels(self):
        assert loss([1.0, 0.0], [1, 0]) == pytest.approx(0.0, abs=1e-11)

    def test_scalar_oracle(self, rng):
        p = rng.uniform(0.01, 0.99, 30)
        y = rng.integers(0, 2, 30)
        total = 0.0
        for pi, yi in zip(p, y):
            total += -math.log(pi) if yi == 1 else -math.log(1 - pi)
        assert loss(p, y) == pytest.approx(total / 30, rel=1e-13)


class TestGradients:
    @pytest.mark.parametrize("decoder", ["distmult", "complex"])
    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, seed, decoder):
        kg, p, t, l = fd_instance(seed, decoder)
        worst = finite_difference_check(p, kg, t, l)
        assert max(worst.values()) < 1e-5, worst

    def test_finite_differences_with_masks(self):
        kg, p, t, l = fd_instance(7, "distmult")
        emb, link = draw_masks(kg, p.dim, 0.5, 0.5, np.random.default_rng(1))
        worst = finite_difference_check(p, kg, t, l, emb, link)
        assert max(worst.values()) < 1e-5, worst

    def test_three_node_graph(self):
        kg = build_encoder_index(KnowledgeGraph.from_labeled([("A", "r", "B"), ("B", "s", "C")]))
        rng = np.random.default_rng(2)
        from kgatt.encoder import init_parameters
        p = init_parameters(kg, 4, rng=rng)
        p.relation = rng.standard_normal(p.relation.shape)
        p.attention = rng.uniform(0.5, 2, p.attention.shape)
        t = np.array([[0, 0, 1], [1, 1, 2], [0, 0, 2], [2, 1, 0]])
        worst = finite_difference_check(p, kg, t, np.array([1, 1, 0, 0.0]))
        assert max(worst.values()) < 1e-5, worst

    def test_occluded_edge_gets_zero_gradient(self):
        kg, p, t, l = fd_instance(4, "distmult")
        p.attention = override_edge(p.attention, 0, 0.0)
        _, g = forward_backward(p, kg, t, l)
        assert g["attention"][0] == 0.0

    def test_fixed_mode_has_no_attention_gradient(self):
        kg, p, t, l = fd_instance(5, "distmult", attention="fixed")
        _, g = forward_backward(p, kg, t, l)
        assert "attention" not in g
        assert max(finite_difference_check(p, kg, t, l).values()) < 1e-5

    def test_non_finite_names_block(self):
        kg, p, t, l = fd_instance(6, "distmult")
        p.rel_diag[0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="'"):
            forward_backward(p, kg, t, l)

    def test_gradients_wrapper_seeded(self):
        kg, p, t, l = fd_instance(8, "distmult")
        cfg = TrainConfig(dim=4)
        a = gradients(p, kg, (t, l), cfg, np.random.default_rng(0))
        b = gradients(p, kg, (t, l), cfg, np.random.default_rng(0))
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


def toy20():
    rng = np.random.default_rng(20)
    return random_graph(rng, n_nodes=10, n_rel=2, n_edges=20, n_valid=3)


class TestTrain:
    def test_loss_decreases(self):
        kg = toy20()
        params, report = train(TrainConfig(dim=16, epochs=200, seed=0), kg)
        assert report.final_loss < report.initial_loss
        assert all(np.isfinite(report.losses))
        assert len(report.losses) == 200 and len(report.val_mrr) == 200
        assert report.best_epoch == max(report.val_mrr, key=lambda x: x[1])[0]

    def test_same_seed_identical(self):
        kg = toy20()
        cfg = TrainConfig(dim=8, epochs=15, seed=3)
        a, ra = train(cfg, kg)
        b, rb = train(cfg, kg)
        assert a.digest() == b.digest()
        assert ra.losses == rb.losses

    def test_different_seed_differs(self):
        kg = toy20()
        a, _ = train(TrainConfig(dim=8, epochs=3, seed=1), kg)
        b, _ = train(TrainConfig(dim=8, epochs=3, seed=2), kg)
        assert a.digest() != b.digest()

    def test_empty_pool(self):
        kg = toy20()
        kg = mark_adjacency_only(kg, range(len(kg.train)))
        with pytest.raises(ValueError, match="positive pool is empty"):
            train(TrainConfig(dim=4, epochs=1), kg)

    def test_fixed_mode_trains(self):
        params, report = train(TrainConfig(dim=8, epochs=5, attention="fixed"), toy20())
        assert params.attention is None
        assert report.final_loss < report.initial_loss

    @pytest.mark.parametrize("bad", [dict(n_neg=0), dict(emb_dropout=1.0), dict(decoder="transe"),
                                     dict(attention="soft"), dict(decoder="complex", dim=5)])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path):
        cfg = TrainConfig(dim=6, epochs=2)
        params, _ = train(cfg, toy20())
        path = tmp_path / "ck.npz"
        save_checkpoint(path, params, cfg)
        loaded, lcfg = load_checkpoint(path)
        assert lcfg == cfg
        for k, v in params.blocks().items():
            np.testing.assert_array_equal(loaded.blocks()[k], v)
        save_checkpoint(tmp_path / "again.npz", loaded, lcfg)
        assert path.read_bytes() == (tmp_path / "again.npz").read_bytes()

    def test_tampered_checkpoint(self, tmp_path):
        cfg = TrainConfig(dim=4, epochs=1)
        params, _ = train(cfg, toy20())
        save_checkpoint(tmp_path / "ck.npz", params, cfg)
        with np.load(tmp_path / "ck.npz") as z:
            blocks = {k: z[k] for k in z.files}
        blocks["entity"] = blocks["entity"] + 1
        with open(tmp_path / "bad.npz", "wb") as fh:
            np.savez(fh, **blocks)
        with pytest.raises(ValueError, match="digest"):
            load_checkpoint(tmp_path / "bad.npz")

    def test_training_log(self, tmp_path):
        _, report = train(TrainConfig(dim=4, epochs=3, eval_every=2), toy20())
        write_training_log(tmp_path / "log.csv", report)
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,val_mrr"
        assert len(lines) == 4
        assert lines[1].endswith(",") and not lines[2].endswith(",")
