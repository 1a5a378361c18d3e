import numpy as np
import pytest

from kgatt.graph import KnowledgeGraph, Vocabulary, build_encoder_index


def random_graph(rng, n_nodes=6, n_rel=2, n_edges=12, add_inverse=True, n_valid=0, n_test=0):
    """Random multigraph with distinct triples; isolated nodes allowed."""
    vocab = Vocabulary([f"e{i}" for i in range(n_nodes)], [f"r{k}" for k in range(n_rel)])
    pool = [(s, r, o) for s in range(n_nodes) for r in range(n_rel) for o in range(n_nodes) if s != o]
    pick = rng.choice(len(pool), size=n_edges + n_valid + n_test, replace=False)
    rows = [pool[k] for k in pick]
    kg = KnowledgeGraph(vocab, rows[:n_edges], rows[n_edges:n_edges + n_valid],
                        rows[n_edges + n_valid:])
    return build_encoder_index(kg, add_inverse)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain():
    """A -r-> B -r-> C."""
    kg = KnowledgeGraph.from_labeled([("A", "r", "B"), ("B", "r", "C")])
    return build_encoder_index(kg, add_inverse=True)


def finite_difference_check(params, kg, triples, labels, emb_mask=None, link_mask=None,
                            h=1e-5, floor=1e-6):
    """Largest relative error between analytic and central-difference gradients
    over every entry of every parameter block."""
    from kgatt.training import forward_backward

    _, grads = forward_backward(params, kg, triples, labels, emb_mask, link_mask)
    blocks = params.blocks()
    assert set(grads) == set(blocks)
    worst = {}
    for name, arr in blocks.items():
        g = grads[name]
        err = 0.0
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up, _ = forward_backward(params, kg, triples, labels, emb_mask, link_mask, with_grad=False)
            arr[idx] = keep - h
            dn, _ = forward_backward(params, kg, triples, labels, emb_mask, link_mask, with_grad=False)
            arr[idx] = keep
            num = (up - dn) / (2 * h)
            err = max(err, abs(g[idx] - num) / max(abs(g[idx]), abs(num), floor))
        worst[name] = err
    return worst


def fd_instance(seed, decoder, dim=4, n_nodes=5, attention="learned", use_bias=True):
    """Random small graph, randomized parameters and a labelled batch."""
    from kgatt.encoder import init_parameters
    from kgatt.training import corrupt_batch

    rng = np.random.default_rng(seed)
    kg = random_graph(rng, n_nodes=n_nodes, n_rel=2, n_edges=2 * n_nodes)
    p = init_parameters(kg, dim, decoder, attention, use_bias, rng)
    p.entity = rng.standard_normal(p.entity.shape)
    p.rel_diag = rng.standard_normal(p.rel_diag.shape)
    p.relation = rng.standard_normal(p.relation.shape)
    if use_bias:
        p.bias = 0.3 * rng.standard_normal(p.bias.shape)
    if p.attention is not None:
        # keep raw weights away from the |x| kink at 0
        p.attention = rng.uniform(0.3, 2.0, p.attention.shape) * rng.choice([-1, 1], p.attention.shape)
    pos = kg.train
    neg = corrupt_batch(pos, 2, kg.n_entities, rng)
    triples = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return kg, p, triples, labels


def exhaustive_oracle(H, relation, decoder, triples, known):
    """Brute-force ranking: score every candidate with a scalar loop, compare
    one by one. Returns (mrr_raw, mrr_filt, hits_raw, hits_filt)."""
    d = H.shape[1]

    def sc(s, r, o):
        if decoder == "distmult":
            return sum(H[s][k] * relation[r][k] * H[o][k] for k in range(d))
        h = d // 2
        a = [complex(H[s][k], H[s][k + h]) for k in range(h)]
        b = [complex(relation[r][k], relation[r][k + h]) for k in range(h)]
        c = [complex(H[o][k], H[o][k + h]) for k in range(h)]
        return sum((a[k] * b[k] * c[k].conjugate()).real for k in range(h))

    raw, filt = [], []
    for s, r, o in triples:
        for side in ("subject", "object"):
            true = sc(s, r, o)
            rr = rf = 1.0
            for e in range(len(H)):
                cand = (e, r, o) if side == "subject" else (s, r, e)
                if cand == (s, r, o):
                    continue
                v = sc(*cand)
                step = 1.0 if v > true else 0.5 if v == true else 0.0
                rr += step
                if cand not in known:
                    rf += step
            raw.append(rr)
            filt.append(rf)
    summ = lambda ranks: (sum(1 / x for x in ranks) / len(ranks),
                          {k: sum(x <= k for x in ranks) / len(ranks) for k in (1, 3, 10)})
    (mr, hr), (mf, hf) = summ(raw), summ(filt)
    return mr, mf, hr, hf
