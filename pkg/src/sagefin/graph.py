"""Bipartite node-and-edge-attributed graphs.

Partition ``"u"`` holds transactions and partition ``"v"`` holds wallet
addresses. Every edge joins one U node to one V node and carries its own
feature row. Parallel edges are allowed and kept as separate rows.

Graphs are immutable. Removing edges produces a masked view that shares the
feature matrices of the base graph.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, IndexOutOfRange

U = "u"
V = "v"
PARTITIONS = (U, V)

UNKNOWN = -1
NON_FRAUD = 0
FRAUD = 1

_LABEL_ALIASES = {
    None: UNKNOWN,
    "unknown": UNKNOWN,
    "non-fraud": NON_FRAUD,
    "fraud": FRAUD,
    -1: UNKNOWN,
    0: NON_FRAUD,
    1: FRAUD,
}


def other(partition):
    check_partition(partition)
    return V if partition == U else U


def check_partition(partition):
    if partition not in PARTITIONS:
        raise ValueError(f"partition must be 'u' or 'v', got {partition!r}")
    return partition


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _as_labels(labels, n, name):
    if labels is None:
        return _frozen(np.full(n, UNKNOWN), np.int8)
    labels = list(labels) if not isinstance(labels, np.ndarray) else labels
    if len(labels) != n:
        raise DimensionMismatch(f"{name} has {len(labels)} entries, expected {n}")
    if isinstance(labels, np.ndarray) and labels.dtype.kind in "iu":
        out = labels.astype(np.int8)
        if np.any((out < UNKNOWN) | (out > FRAUD)):
            raise ValueError(f"{name} must take values in {{-1, 0, 1}}")
        return _frozen(out, np.int8)
    try:
        out = [_LABEL_ALIASES[x if not isinstance(x, np.integer) else int(x)] for x in labels]
    except KeyError as exc:
        raise ValueError(f"unrecognised label {exc.args[0]!r} in {name}") from None
    return _frozen(out, np.int8)


def _incidence(endpoints, n_nodes):
    """CSR-style index from node -> positions of incident edges (ascending)."""
    order = np.argsort(endpoints, kind="stable")
    counts = np.bincount(endpoints, minlength=n_nodes)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, order.astype(np.int64)


@dataclass(frozen=True)
class NeighborView:
    """Neighbours N(node) and incident edges M(node), aligned position by position."""

    node: int
    partition: str
    neighbors: np.ndarray
    edges: np.ndarray

    def __len__(self):
        return len(self.edges)


@dataclass(frozen=True)
class Neighborhood:
    """Nodes within ``n`` hops, their hop distances and the induced edges."""

    u_nodes: np.ndarray
    v_nodes: np.ndarray
    u_hops: np.ndarray
    v_hops: np.ndarray
    edges: np.ndarray

    def nodes(self, partition):
        return self.u_nodes if check_partition(partition) == U else self.v_nodes

    def __contains__(self, item):
        partition, node = item
        return bool(np.isin(node, self.nodes(partition)))


class BipartiteGraph:
    """Immutable bipartite graph with node features, edge features and labels.

    Parameters
    ----------
    u_features, v_features : array-like of shape (n_u, d_u) and (n_v, d_v)
    edges : array-like of shape (n_edges, 2)
        ``(u_index, v_index)`` pairs, 0-based.
    e_features : array-like of shape (n_edges, d_e)
    u_labels, v_labels : sequence, optional
        Values in ``{-1, 0, 1}`` (unknown, non-fraud, fraud) or the strings
        ``"unknown"``, ``"non-fraud"``, ``"fraud"``. Missing means all unknown.
    """

    def __init__(self, u_features, v_features, edges, e_features, u_labels=None, v_labels=None):
        u_features = np.asarray(u_features, dtype=np.float64)
        v_features = np.asarray(v_features, dtype=np.float64)
        if u_features.ndim != 2 or v_features.ndim != 2:
            raise DimensionMismatch("node feature matrices must be 2-D")
        edges = np.asarray(edges, dtype=np.int64)
        if edges.size == 0:
            edges = edges.reshape(0, 2)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise DimensionMismatch(f"edges must have shape (n_edges, 2), got {edges.shape}")
        e_features = np.asarray(e_features, dtype=np.float64)
        if e_features.ndim == 1 and e_features.size == 0:
            e_features = e_features.reshape(0, 0)
        if e_features.ndim != 2 or e_features.shape[0] != len(edges):
            raise DimensionMismatch(
                f"e_features has {e_features.shape[0] if e_features.ndim else 0} rows "
                f"for {len(edges)} edges"
            )
        n_u, n_v = len(u_features), len(v_features)
        if len(edges):
            bad = np.flatnonzero((edges[:, 0] < 0) | (edges[:, 0] >= n_u)
                                 | (edges[:, 1] < 0) | (edges[:, 1] >= n_v))
            if bad.size:
                i = int(bad[0])
                raise IndexOutOfRange(
                    f"edge {i} = {tuple(edges[i])} references a missing node "
                    f"(|U|={n_u}, |V|={n_v})"
                )
        for name, x in (("u_features", u_features), ("v_features", v_features),
                        ("e_features", e_features)):
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{name} contains NaN or Inf")

        self.u_features = _frozen(u_features, np.float64)
        self.v_features = _frozen(v_features, np.float64)
        self._edge_u = _frozen(edges[:, 0], np.int64)
        self._edge_v = _frozen(edges[:, 1], np.int64)
        self._e_features = _frozen(e_features, np.float64)
        self.u_labels = _as_labels(u_labels, n_u, "u_labels")
        self.v_labels = _as_labels(v_labels, n_v, "v_labels")
        self._active = None
        self._cache = {}

    # -- views -----------------------------------------------------------

    @classmethod
    def _view(cls, base, active):
        view = cls.__new__(cls)
        view.u_features = base.u_features
        view.v_features = base.v_features
        view._edge_u = base._edge_u
        view._edge_v = base._edge_v
        view._e_features = base._e_features
        view.u_labels = base.u_labels
        view.v_labels = base.v_labels
        active = np.array(active, dtype=bool)
        active.setflags(write=False)
        view._active = active
        view._cache = {}
        return view

    @property
    def is_view(self):
        return self._active is not None

    def without_edges(self, edge_ids):
        """View with the given edges (ids of the base edge list) masked out."""
        edge_ids = np.asarray(edge_ids, dtype=np.int64).ravel()
        n_base = len(self._edge_u)
        if edge_ids.size and (edge_ids.min() < 0 or edge_ids.max() >= n_base):
            raise IndexOutOfRange(f"edge id out of range for {n_base} edges")
        active = np.ones(n_base, dtype=bool) if self._active is None else self._active.copy()
        active[edge_ids] = False
        return BipartiteGraph._view(self, active)

    def with_labels(self, u_labels=None, v_labels=None):
        """Copy sharing features and edges but carrying different labels."""
        g = BipartiteGraph.__new__(BipartiteGraph)
        g.__dict__.update(self.__dict__)
        g._cache = {}
        if u_labels is not None:
            g.u_labels = _as_labels(u_labels, self.n_u, "u_labels")
        if v_labels is not None:
            g.v_labels = _as_labels(v_labels, self.n_v, "v_labels")
        return g

    # -- sizes and active edge arrays --------------------------------------

    @property
    def n_u(self):
        return self.u_features.shape[0]

    @property
    def n_v(self):
        return self.v_features.shape[0]

    @property
    def d_u(self):
        return self.u_features.shape[1]

    @property
    def d_v(self):
        return self.v_features.shape[1]

    @property
    def d_e(self):
        return self._e_features.shape[1]

    @property
    def n_base_edges(self):
        return len(self._edge_u)

    def _cached(self, key, fn):
        try:
            return self._cache[key]
        except KeyError:
            value = self._cache[key] = fn()
            return value

    @property
    def edge_ids(self):
        """Base-graph ids of the edges present in this graph (ascending)."""
        def build():
            if self._active is None:
                ids = np.arange(self.n_base_edges, dtype=np.int64)
            else:
                ids = np.flatnonzero(self._active).astype(np.int64)
            ids.setflags(write=False)
            return ids
        return self._cached("edge_ids", build)

    @property
    def n_edges(self):
        return len(self.edge_ids)

    @property
    def edge_u(self):
        return self._cached("edge_u", lambda: self._select(self._edge_u))

    @property
    def edge_v(self):
        return self._cached("edge_v", lambda: self._select(self._edge_v))

    @property
    def e_features(self):
        return self._cached("e_features", lambda: self._select(self._e_features))

    @property
    def edges(self):
        return np.stack([self.edge_u, self.edge_v], axis=1)

    def _select(self, a):
        if self._active is None:
            return a
        out = a[self._active]
        out.setflags(write=False)
        return out

    def features(self, partition):
        return self.u_features if check_partition(partition) == U else self.v_features

    def labels(self, partition):
        return self.u_labels if check_partition(partition) == U else self.v_labels

    def n_nodes(self, partition):
        return self.n_u if check_partition(partition) == U else self.n_v

    # -- adjacency -----------------------------------------------------------

    def incidence(self, partition):
        """``(indptr, positions)``: positions into the active edge arrays, per node."""
        check_partition(partition)
        ends, n = (self.edge_u, self.n_u) if partition == U else (self.edge_v, self.n_v)
        return self._cached(("incidence", partition), lambda: _incidence(ends, n))

    def degrees(self, partition):
        indptr, _ = self.incidence(partition)
        return np.diff(indptr)

    def _check_node(self, partition, node):
        n = self.n_nodes(partition)
        if not 0 <= int(node) < n:
            raise IndexOutOfRange(f"{partition} node {node} out of range [0, {n})")
        return int(node)

    def neighbors(self, partition, node):
        node = self._check_node(partition, node)
        indptr, pos = self.incidence(partition)
        p = pos[indptr[node]:indptr[node + 1]]
        far = self.edge_v if partition == U else self.edge_u
        return NeighborView(node, partition, far[p].copy(), self.edge_ids[p].copy())

    def incident_edges(self, partition, nodes):
        """Base ids of every edge touching any of ``nodes`` (sorted, unique)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        ends = self.edge_u if check_partition(partition) == U else self.edge_v
        return self.edge_ids[np.isin(ends, nodes)]

    def n_hop_neighborhood(self, partition, node, n):
        """Breadth-first closure of ``n`` hops; each hop crosses partitions."""
        node = self._check_node(partition, node)
        if n < 0:
            raise ValueError("n must be non-negative")
        hops = {U: np.full(self.n_u, -1, dtype=np.int64), V: np.full(self.n_v, -1, dtype=np.int64)}
        hops[partition][node] = 0
        frontier, side = np.array([node], dtype=np.int64), partition
        for h in range(1, n + 1):
            indptr, pos = self.incidence(side)
            far = self.edge_v if side == U else self.edge_u
            if frontier.size == 0:
                break
            spans = [pos[indptr[i]:indptr[i + 1]] for i in frontier]
            reached = np.unique(far[np.concatenate(spans)]) if spans else np.empty(0, np.int64)
            side = other(side)
            fresh = reached[hops[side][reached] < 0]
            hops[side][fresh] = h
            frontier = fresh
        u_nodes = np.flatnonzero(hops[U] >= 0)
        v_nodes = np.flatnonzero(hops[V] >= 0)
        inside = (hops[U][self.edge_u] >= 0) & (hops[V][self.edge_v] >= 0)
        return Neighborhood(u_nodes, v_nodes, hops[U][u_nodes], hops[V][v_nodes],
                            self.edge_ids[inside])

    def induced_subgraph(self, u_nodes, v_nodes):
        """Materialised subgraph on the given (sorted) node sets.

        Node ``k`` of the result is ``u_nodes[k]`` (resp. ``v_nodes[k]``) of this
        graph. Edge order is preserved.
        """
        u_nodes = np.asarray(u_nodes, dtype=np.int64)
        v_nodes = np.asarray(v_nodes, dtype=np.int64)
        u_map = np.full(self.n_u, -1, dtype=np.int64)
        v_map = np.full(self.n_v, -1, dtype=np.int64)
        u_map[u_nodes] = np.arange(len(u_nodes))
        v_map[v_nodes] = np.arange(len(v_nodes))
        keep = (u_map[self.edge_u] >= 0) & (v_map[self.edge_v] >= 0)
        sub = BipartiteGraph(
            self.u_features[u_nodes], self.v_features[v_nodes],
            np.stack([u_map[self.edge_u[keep]], v_map[self.edge_v[keep]]], axis=1),
            self.e_features[keep], self.u_labels[u_nodes], self.v_labels[v_nodes],
        )
        sub._cache["source_edge_ids"] = self.edge_ids[keep]
        return sub

    def edge_pair_codes(self):
        """Each active edge encoded as ``u * n_v + v`` (for membership tests)."""
        return self._cached("pair_codes", lambda: self.edge_u * self.n_v + self.edge_v)

    def __repr__(self):
        kind = "view" if self.is_view else "graph"
        return (f"BipartiteGraph[{kind}](|U|={self.n_u}, |V|={self.n_v}, |E|={self.n_edges}, "
                f"d=({self.d_u}, {self.d_v}, {self.d_e}))")


def build_graph(u_features, v_features, edges, e_features, u_labels=None, v_labels=None):
    return BipartiteGraph(u_features, v_features, edges, e_features, u_labels, v_labels)


def neighbors(graph, partition, node):
    return graph.neighbors(partition, node)


def n_hop_neighborhood(graph, partition, node, n):
    return graph.n_hop_neighborhood(partition, node, n)


def remove_edge_view(graph, edge_index):
    """Masked view of ``graph`` without its ``edge_index``-th edge."""
    if not 0 <= int(edge_index) < graph.n_edges:
        raise IndexOutOfRange(f"edge {edge_index} out of range [0, {graph.n_edges})")
    return graph.without_edges([graph.edge_ids[int(edge_index)]])
