import numpy as np
import pytest

from helpers import (REL_TOL, label_masks, non_edges, numeric_grad, random_graph, rel_err,
                     tiny_network, warm_up)
from sagefin.exceptions import DimensionMismatch, ExhaustedSpace, InvalidConfig
from sagefin.graph import BipartiteGraph
from sagefin.network import SageFinConfig, SageFinNetwork, sample_negative_edges
from sagefin.nn import Adam, sigmoid


def _loss_inputs(graph, seed):
    rng = np.random.default_rng(seed)
    return label_masks(graph), graph.edges, sample_negative_edges(graph, 1, rng, n_positive=2)


@pytest.mark.parametrize("aggregator", ["mean", "mean+max"])
@pytest.mark.parametrize("seed", range(5))
def test_composite_gradient_matches_finite_differences(aggregator, seed):
    g = random_graph(seed, 3, 3, 6, label_prob=0.8)
    net = tiny_network(g, seed, aggregator, hidden_dim=3, latent_dim=3,
                       lambda_feat=0.7, lambda_struct=1.3, lambda_class=0.9)
    masks, pos, neg = _loss_inputs(g, seed)
    net.zero_grad()
    net.loss(g, masks, pos, neg, training=True, update_stats=False)
    f = lambda: net.loss(g, masks, pos, neg, compute_grad=False, update_stats=False).total  # noqa: E731
    for name, p, grad in net.named_parameters():
        assert rel_err(grad, numeric_grad(f, p)) < REL_TOL, name


def test_loss_decomposition():
    g = random_graph(1, 5, 5, 12)
    net = tiny_network(g, lambda_feat=0.3, lambda_struct=2.0, lambda_class=0.5)
    b = net.loss(g, *_loss_inputs(g, 1), compute_grad=False)
    want = 0.3 * (b.feat_u + b.feat_v + b.feat_e) + 2.0 * b.edge + 0.5 * (b.class_u + b.class_v)
    assert abs(b.total - want) < 1e-12
    assert set(b.as_dict()) >= {"total", "feat_u", "feat_v", "feat_e", "edge", "class_u", "class_v"}


def test_only_class_weight_without_labels_is_zero():
    g = random_graph(2, label_prob=0.0)
    net = tiny_network(g, lambda_feat=0.0, lambda_struct=0.0, lambda_class=1.0)
    assert net.loss(g, *_loss_inputs(g, 2), compute_grad=False).total == 0.0


def test_single_labelled_node_with_zero_logit_costs_ln2():
    g = BipartiteGraph(np.ones((2, 1)), np.ones((2, 1)), [(0, 0), (1, 1)], np.ones((2, 1)),
                       u_labels=[1, -1])
    net = tiny_network(g, lambda_feat=0.0, lambda_struct=0.0)
    last = net.classifier["u"].layers[-1]
    last.weight[:] = 0.0
    last.bias[:] = 0.0
    b = net.loss(g, label_masks(g), g.edges, np.empty((0, 2)), compute_grad=False)
    assert b.class_u == pytest.approx(np.log(2), abs=1e-15)
    assert b.total == pytest.approx(np.log(2), abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_unknown_labels_never_enter_the_loss(seed):
    g = random_graph(seed, 5, 5, 12, label_prob=0.5)
    pos, neg = g.edges, sample_negative_edges(g, 1, np.random.default_rng(seed))
    everything = {p: np.ones(g.n_nodes(p), bool) for p in "uv"}
    results = []
    for masks in (label_masks(g), everything):
        net = tiny_network(g, seed)
        net.zero_grad()
        b = net.loss(g, masks, pos, neg)
        results.append((b.total, [x.copy() for x in net.gradients()]))
    assert results[0][0] == results[1][0]
    for a, b in zip(results[0][1], results[1][1]):
        np.testing.assert_array_equal(a, b)


def test_pure_autoencoder_ignores_labels_and_negatives():
    g = random_graph(3, 5, 5, 10)
    net = tiny_network(g, lambda_struct=0.0, lambda_class=0.0)
    a = net.loss(g, label_masks(g), g.edges, non_edges(g), compute_grad=False, update_stats=False)
    relabelled = g.with_labels(np.zeros(5, int), np.ones(5, int))
    b = net.loss(relabelled, label_masks(relabelled), g.edges[:2], non_edges(g)[:1],
                 compute_grad=False, update_stats=False)
    assert a.total == b.total


def test_shapes_and_determinism():
    g = random_graph(4, 6, 5, 14)
    a, _ = tiny_network(g, 9).encode(g)
    b, _ = tiny_network(g, 9).encode(g)
    assert a.h_u.shape == (6, 5) and a.h_v.shape == (5, 5) and a.h_e.shape == (14, 5)
    np.testing.assert_array_equal(a.h_u, b.h_u)
    recon, _ = tiny_network(g, 9).decode_features(g, a)
    assert (recon.h_u.shape, recon.h_v.shape, recon.h_e.shape) == (
        g.u_features.shape, g.v_features.shape, g.e_features.shape)


def test_isolated_node_latent_uses_only_its_features():
    g = random_graph(5, 5, 5, 8)
    iso = BipartiteGraph(np.vstack([g.u_features, [[1.0, 2.0, 3.0]]]), g.v_features, g.edges,
                         g.e_features)
    other = BipartiteGraph(np.vstack([g.u_features * 3, [[1.0, 2.0, 3.0]]]), g.v_features + 1,
                           g.edges, g.e_features - 2)
    net = tiny_network(iso)
    a, _ = net.encode(iso)
    b, _ = net.encode(other)
    np.testing.assert_array_equal(a.h_u[-1], b.h_u[-1])


def test_heads_agree_with_batched_logits():
    g = random_graph(6, 4, 4, 9)
    net = tiny_network(g)
    lat, _ = net.encode(g)
    pairs = np.array([[0, 1], [3, 2]])
    batched, _ = net.edge_logits(lat, pairs)
    for k, (u, v) in enumerate(pairs):
        assert net.predict_edge(lat.h_u[u], lat.h_v[v]) == pytest.approx(batched[k], abs=1e-14)
    logits, _ = net.node_logits(lat, "v")
    assert net.predict_node(lat.h_v[2], "v") == pytest.approx(logits[2], abs=1e-14)
    with pytest.raises(DimensionMismatch):
        net.predict_node(np.ones(3), "u")


def test_target_logit_matches_full_forward():
    g = random_graph(7, 8, 8, 20)
    net = warm_up(tiny_network(g, 7), g, steps=5)
    lat, _ = net.encode(g)
    for p in "uv":
        full, _ = net.node_logits(lat, p)
        for node in range(g.n_nodes(p)):
            assert net.target_logit(g, p, node) == pytest.approx(full[node], abs=1e-12)


def test_encode_rejects_wrong_widths():
    g = random_graph(0)
    net = SageFinNetwork((2, 2, 2), SageFinConfig(hidden_dim=4, latent_dim=4))
    with pytest.raises(DimensionMismatch):
        net.encode(g)


@pytest.mark.parametrize("bad", [dict(n_layers=3), dict(n_layers=0), dict(hidden_dim=0),
                                 dict(negative_ratio=0), dict(lambda_feat=-1.0),
                                 dict(aggregator="sum")])
def test_invalid_configs(bad):
    with pytest.raises(InvalidConfig):
        SageFinConfig(**bad).validate()


def test_negative_sampling_contract():
    g = BipartiteGraph(np.ones((3, 1)), np.ones((3, 1)), [(0, 0), (1, 1), (2, 2), (0, 2)], np.ones((4, 1)))
    rng = np.random.default_rng(0)
    with pytest.raises(ExhaustedSpace):
        sample_negative_edges(g, 5, rng)  # 20 requested, only 5 non-edges exist
    big = BipartiteGraph(np.ones((6, 1)), np.ones((6, 1)), [(0, 0), (1, 1), (2, 2), (0, 2)], np.ones((4, 1)))
    neg = sample_negative_edges(big, 5, rng)
    assert neg.shape == (20, 2)
    assert len({tuple(p) for p in neg.tolist()}) == 20
    assert not {tuple(p) for p in neg.tolist()} & {tuple(p) for p in big.edges.tolist()}
    full = BipartiteGraph(np.ones((2, 1)), np.ones((2, 1)), [(0, 0), (0, 1), (1, 0), (1, 1)], np.ones((4, 1)))
    with pytest.raises(ExhaustedSpace):
        sample_negative_edges(full, 1, rng)


def test_checkpoint_round_trip(tmp_path):
    g = random_graph(8, 5, 5, 12)
    net = tiny_network(g, 8)
    opt = Adam(0.01)
    for _ in range(3):
        net.zero_grad()
        net.loss(g, label_masks(g), g.edges, non_edges(g)[:6])
        opt.step(net.parameters(), net.gradients())
    path = tmp_path / "ckpt.npz"
    net.save(path, opt, {"note": "x"})
    loaded, opt_state, extra = SageFinNetwork.load(path)
    assert extra == {"note": "x"} and opt_state["t"] == 3
    a, _ = net.encode(g)
    b, _ = loaded.encode(g)
    np.testing.assert_array_equal(a.h_u, b.h_u)
    np.testing.assert_array_equal(net.node_logits(a, "v")[0], loaded.node_logits(b, "v")[0])
    for (n1, x), (n2, y) in zip(sorted(net.state_dict().items()), sorted(loaded.state_dict().items())):
        assert n1 == n2
        np.testing.assert_array_equal(x, y)


def _toy():
    # two separable blocks of 5+5 nodes: block 1 fraudulent with shifted features
    rng = np.random.default_rng(0)
    n = 5
    shift = np.r_[np.zeros(n - 2), np.full(2, 3.0)]
    edges = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 0), (3, 3), (3, 4), (4, 4), (4, 3), (2, 2)]
    x_u = rng.normal(size=(n, 2)) * 0.3 + shift[:, None]
    x_v = rng.normal(size=(n, 2)) * 0.3 + shift[:, None]
    y = (shift > 0).astype(int)
    return BipartiteGraph(x_u, x_v, edges, rng.normal(size=(len(edges), 1)) * 0.3, y, y)


def test_overfitting_a_toy_graph():
    g = _toy()
    net = SageFinNetwork((2, 2, 1), SageFinConfig(seed=0))
    opt = Adam(0.005)
    neg = non_edges(g)
    for _ in range(2000):
        net.zero_grad()
        net.loss(g, label_masks(g), g.edges, neg)
        opt.step(net.parameters(), net.gradients())
    # batch statistics: with five rows per partition the unbiased running
    # variance is 5/4 of the batch variance, which alone costs ~0.5 MSE
    fit = net.loss(g, label_masks(g), g.edges, neg, compute_grad=False, update_stats=False)
    assert fit.feature < 1e-2
    lat, _ = net.encode(g)
    assert sigmoid(net.edge_logits(lat, g.edges)[0]).mean() > 0.9
    assert sigmoid(net.edge_logits(lat, neg)[0]).mean() < 0.1
    for p in "uv":
        pred = sigmoid(net.node_logits(lat, p)[0]) >= 0.5
        assert np.array_equal(pred, g.labels(p) == 1)
