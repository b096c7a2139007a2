import numpy as np
import pytest

from helpers import REL_TOL, numeric_grad, random_graph, rel_err
from sagefin.conv import BeanConv, LayerState, aggregate_mean, bean_conv_backward, bean_conv_forward
from sagefin.exceptions import DimensionMismatch, IndexOutOfRange
from sagefin.graph import BipartiteGraph


def loop_reference(graph, state, layer):
    """Per-node loops over neighbour lists; no sparse operators involved."""
    mode = layer.aggregator
    eu, ev = graph.edge_u, graph.edge_v

    def agg(rows, width):
        if len(rows) == 0:
            return np.zeros(width * (1 if mode == "mean" else 2))
        rows = np.asarray(rows)
        return rows.mean(0) if mode == "mean" else np.r_[rows.mean(0), rows.max(0)]

    du, dv, de = state.dims
    msg_u = [np.r_[state.h_u[i], agg([state.h_v[v] for u, v in zip(eu, ev) if u == i], dv),
                   agg([state.h_e[k] for k in range(len(eu)) if eu[k] == i], de)]
             for i in range(graph.n_u)]
    msg_v = [np.r_[state.h_v[j], agg([state.h_u[u] for u, v in zip(eu, ev) if v == j], du),
                   agg([state.h_e[k] for k in range(len(ev)) if ev[k] == j], de)]
             for j in range(graph.n_v)]
    msg_e = [np.r_[state.h_u[eu[k]], state.h_v[ev[k]], state.h_e[k]] for k in range(len(eu))]

    def post(key, m):
        z = np.asarray(m).reshape(len(m), -1) @ layer.lin[key].weight + layer.lin[key].bias
        if layer.final:
            return z
        bn = layer.bn[key]
        z = bn.gamma * (z - bn.running_mean) / np.sqrt(bn.running_var + bn.eps) + bn.beta
        return np.maximum(z, 0)

    return post("u", msg_u), post("v", msg_v), post("e", msg_e)


def test_two_by_two_by_hand():
    # u0 - v0, u0 - v1, u1 - v1 with scalar features; Linear weights of ones
    g = BipartiteGraph([[1.0], [2.0]], [[10.0], [20.0]], [(0, 0), (0, 1), (1, 1)],
                       [[100.0], [200.0], [300.0]])
    layer = BeanConv((1, 1, 1), (1, 1, 1), final=True)
    for lin in layer.lin.values():
        lin.weight[:] = 1.0
        lin.bias[:] = 0.0
    out, _ = layer.forward(g, LayerState.from_graph(g))
    # u0: 1 + mean(10, 20) + mean(100, 200); u1: 2 + 20 + 300
    assert out.h_u[:, 0].tolist() == [166.0, 322.0]
    # v0: 10 + 1 + 100; v1: 20 + mean(1, 2) + mean(200, 300)
    assert out.h_v[:, 0].tolist() == [111.0, 271.5]
    # edges: u + v + e
    assert out.h_e[:, 0].tolist() == [111.0, 221.0, 322.0]


@pytest.mark.parametrize("aggregator", ["mean", "mean+max"])
@pytest.mark.parametrize("final", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_matches_loop_reference(aggregator, final, seed):
    g = random_graph(seed, 5, 4, 9)
    rng = np.random.default_rng(seed)
    layer = BeanConv((3, 2, 2), (4, 3, 2), aggregator, final, rng)
    for bn in layer.bn.values():
        bn.running_mean[:] = rng.normal(size=bn.dim)
        bn.running_var[:] = rng.uniform(0.5, 2, size=bn.dim)
    out, _ = layer.forward(g, LayerState.from_graph(g), training=False)
    ref = loop_reference(g, LayerState.from_graph(g), layer)
    for got, want in zip((out.h_u, out.h_v, out.h_e), ref):
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("aggregator", ["mean", "mean+max"])
@pytest.mark.parametrize("final", [False, True])
@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(aggregator, final, seed):
    g = random_graph(seed, 4, 4, 7)
    rng = np.random.default_rng(100 + seed)
    layer = BeanConv((3, 2, 2), (3, 3, 2), aggregator, final, rng)
    state = LayerState(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), rng.normal(size=(7, 2)))
    w = [rng.normal(size=(4, 3)), rng.normal(size=(4, 3)), rng.normal(size=(7, 2))]

    def f():
        out, _ = layer.forward(g, state, training=True, update_stats=False)
        return float(sum((a * b).sum() for a, b in zip((out.h_u, out.h_v, out.h_e), w)))

    for _, _, grad in layer.parameters():
        grad[...] = 0
    _, cache = layer.forward(g, state, training=True, update_stats=False)
    din = layer.backward(cache, LayerState(*w))
    for got, x in zip((din.h_u, din.h_v, din.h_e), (state.h_u, state.h_v, state.h_e)):
        assert rel_err(got, numeric_grad(f, x)) < REL_TOL
    for name, p, grad in layer.parameters():
        assert rel_err(grad, numeric_grad(f, p)) < REL_TOL, name


def test_isolated_node_sees_only_itself():
    g = BipartiteGraph(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0]]), [(0, 0)], [[1.0]])
    layer = BeanConv((2, 1, 1), (2, 2, 2), "mean+max", final=True)
    out, _ = layer.forward(g, LayerState.from_graph(g))
    lin = layer.lin["u"]
    expected = np.r_[3.0, 4.0, 0.0, 0.0, 0.0, 0.0] @ lin.weight + lin.bias
    np.testing.assert_allclose(out.h_u[1], expected)


def test_permutation_equivariance():
    g = random_graph(7, 5, 5, 12)
    perm_u = np.array([3, 0, 4, 1, 2])
    inv = np.argsort(perm_u)
    # node i of the permuted graph is node perm_u[i] of the original
    h = BipartiteGraph(g.u_features[perm_u], g.v_features,
                       np.stack([inv[g.edge_u], g.edge_v], 1), g.e_features)
    layer = BeanConv((3, 2, 2), (4, 4, 4), "mean+max", rng=np.random.default_rng(0))
    a, _ = layer.forward(g, LayerState.from_graph(g))
    b, _ = layer.forward(h, LayerState.from_graph(h))
    np.testing.assert_allclose(b.h_u, a.h_u[perm_u], atol=1e-12)
    np.testing.assert_allclose(b.h_v, a.h_v, atol=1e-12)
    np.testing.assert_allclose(b.h_e, a.h_e, atol=1e-12)


def test_one_layer_is_one_hop_local():
    # path u0 - v0 - u1 - v1: one layer cannot carry v1's features to u0
    g = BipartiteGraph(np.ones((2, 1)), np.array([[1.0], [2.0]]), [(0, 0), (1, 0), (1, 1)], np.ones((3, 1)))
    layer = BeanConv((1, 1, 1), (2, 2, 2), final=True)
    a, _ = layer.forward(g, LayerState.from_graph(g))
    state = LayerState.from_graph(g)
    state = LayerState(state.h_u, np.array([[1.0], [99.0]]), state.h_e)
    b, _ = layer.forward(g, state)
    assert np.array_equal(a.h_u[0], b.h_u[0])
    assert not np.array_equal(a.h_u[1], b.h_u[1])


def test_aggregate_mean_helper():
    rows = np.arange(6.0).reshape(3, 2)
    assert aggregate_mean(rows, []).tolist() == [0.0, 0.0]
    assert aggregate_mean(rows, {0, 2}).tolist() == [2.0, 3.0]
    with pytest.raises(IndexOutOfRange):
        aggregate_mean(rows, [5])


def test_wrappers_and_shape_errors():
    g = random_graph(0)
    layer = BeanConv((3, 2, 2), (2, 2, 2))
    out, cache = bean_conv_forward(g, LayerState.from_graph(g), layer)
    back = bean_conv_backward(layer, cache, LayerState(np.ones_like(out.h_u), np.ones_like(out.h_v),
                                                      np.ones_like(out.h_e)))
    assert back.dims == (3, 2, 2)
    with pytest.raises(DimensionMismatch):
        layer.forward(g, LayerState(np.ones((4, 2)), np.ones((4, 2)), np.ones((8, 2))))
    with pytest.raises(ValueError):
        BeanConv((1, 1, 1), (1, 1, 1), aggregator="sum")


def test_works_on_edge_view():
    g = random_graph(2, 4, 4, 8)
    layer = BeanConv((3, 2, 2), (2, 2, 2), "mean+max", final=True)
    view = g.without_edges([0, 3])
    sub = BipartiteGraph(g.u_features, g.v_features, view.edges, view.e_features)
    a, _ = layer.forward(view, LayerState.from_graph(view))
    b, _ = layer.forward(sub, LayerState.from_graph(sub))
    for x, y in zip((a.h_u, a.h_v, a.h_e), (b.h_u, b.h_v, b.h_e)):
        np.testing.assert_array_equal(x, y)
