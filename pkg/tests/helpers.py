"""Shared builders and numerical oracles for the test suite."""
import numpy as np

from sagefin.graph import BipartiteGraph
from sagefin.network import SageFinConfig, SageFinNetwork
from sagefin.nn import Adam

FD_STEP = 1e-6
REL_TOL = 1e-4


def random_graph(seed, n_u=4, n_v=4, n_edges=8, dims=(3, 2, 2), label_prob=0.6):
    """Random bipartite graph with distinct edges and a mix of known/unknown labels."""
    rng = np.random.default_rng(seed)
    n_edges = min(n_edges, n_u * n_v)
    codes = np.sort(rng.choice(n_u * n_v, size=n_edges, replace=False))
    edges = np.stack([codes // n_v, codes % n_v], axis=1)

    def labels(n):
        y = rng.integers(0, 2, size=n)
        return np.where(rng.random(n) < label_prob, y, -1)

    return BipartiteGraph(rng.normal(size=(n_u, dims[0])), rng.normal(size=(n_v, dims[1])),
                          edges, rng.normal(size=(n_edges, dims[2])), labels(n_u), labels(n_v))


def rel_err(analytic, numeric, floor=REL_TOL):
    """Max abs difference over the larger magnitude, floored for all-zero gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def numeric_grad(f, x, h=FD_STEP):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        plus = f()
        x[i] = old - h
        minus = f()
        x[i] = old
        g[i] = (plus - minus) / (2 * h)
    return g


def tiny_network(graph, seed=0, aggregator="mean", **overrides):
    cfg = dict(seed=seed, hidden_dim=6, latent_dim=5, aggregator=aggregator)
    cfg.update(overrides)
    return SageFinNetwork((graph.d_u, graph.d_v, graph.d_e), SageFinConfig(**cfg))


def all_pairs(graph):
    return np.array([(u, v) for u in range(graph.n_u) for v in range(graph.n_v)])


def non_edges(graph):
    present = set(map(tuple, graph.edges.tolist()))
    return np.array([p for p in all_pairs(graph).tolist() if tuple(p) not in present],
                    dtype=np.int64).reshape(-1, 2)


def label_masks(graph):
    return {p: graph.labels(p) >= 0 for p in ("u", "v")}


def warm_up(net, graph, steps=15, lr=0.01):
    """A few full-batch Adam steps so batch-norm statistics are not the identity."""
    opt = Adam(lr)
    neg = non_edges(graph)
    for _ in range(steps):
        net.zero_grad()
        net.loss(graph, label_masks(graph), graph.edges, neg, training=True)
        opt.step(net.parameters(), net.gradients())
    return net


def bfs_hops(graph, partition, node):
    """Plain-Python hop distances from one node (reference for neighbourhood queries)."""
    adj = {}
    for u, v in graph.edges.tolist():
        adj.setdefault(("u", u), []).append(("v", v))
        adj.setdefault(("v", v), []).append(("u", u))
    dist = {(partition, node): 0}
    frontier = [(partition, node)]
    while frontier:
        nxt = []
        for x in frontier:
            for y in adj.get(x, []):
                if y not in dist:
                    dist[y] = dist[x] + 1
                    nxt.append(y)
        frontier = nxt
    return dist


def is_connected(edges, graph, partition, node):
    """True when the listed base edges form one component containing the target."""
    reached = {(partition, node)}
    pending = list(edges)
    grew = True
    while grew:
        grew = False
        for e in list(pending):
            a, b = ("u", int(graph._edge_u[e])), ("v", int(graph._edge_v[e]))
            if a in reached or b in reached:
                reached |= {a, b}
                pending.remove(e)
                grew = True
    return not pending
