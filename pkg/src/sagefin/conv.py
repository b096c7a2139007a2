"""BEAN convolution: one synchronous update of U-node, V-node and edge states.

For a U node the message is ``[own state ; agg of neighbour V states ; agg of
incident edge states]``, symmetrically for V nodes, and ``[U endpoint ; V
endpoint ; own state]`` for an edge. Each message goes through Linear, batch
norm and ReLU (the last decoder layer stops after Linear).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionMismatch, IndexOutOfRange, MissingForwardCache
from .graph import U, V
from .nn import BatchNorm, Linear, relu, relu_backward

AGGREGATORS = ("mean", "mean+max")


@dataclass
class LayerState:
    h_u: np.ndarray
    h_v: np.ndarray
    h_e: np.ndarray

    @property
    def dims(self):
        return self.h_u.shape[1], self.h_v.shape[1], self.h_e.shape[1]

    def get(self, partition):
        return self.h_u if partition == U else self.h_v

    @classmethod
    def from_graph(cls, graph):
        return cls(graph.u_features, graph.v_features, graph.e_features)

    @classmethod
    def zeros_like(cls, other):
        return cls(np.zeros_like(other.h_u), np.zeros_like(other.h_v), np.zeros_like(other.h_e))


def aggregate_mean(rows, index_set):
    """Mean of the selected rows; the empty set gives a zero vector."""
    rows = np.asarray(rows, dtype=np.float64)
    idx = np.asarray(list(index_set), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(rows)):
        raise IndexOutOfRange("index set refers to missing rows")
    if idx.size == 0:
        return np.zeros(rows.shape[1])
    return rows[idx].mean(axis=0)


class _Incidence:
    """Sparse operators from one partition's nodes to the active edges."""

    def __init__(self, indptr, pos, n_edges):
        n_nodes = len(indptr) - 1
        deg = np.diff(indptr)
        self.indptr = indptr
        self.pos = pos
        self.nonempty = np.flatnonzero(deg > 0)
        self.starts = indptr[self.nonempty]
        self.segment = np.repeat(np.arange(len(self.nonempty)), deg[self.nonempty])
        self.sum = sp.csr_matrix((np.ones(len(pos)), pos, indptr), shape=(n_nodes, n_edges))
        inv = np.zeros(n_nodes)
        inv[deg > 0] = 1.0 / deg[deg > 0]
        self.mean = sp.csr_matrix((np.repeat(inv, deg), pos, indptr), shape=(n_nodes, n_edges))
        self.mean_t = self.mean.T.tocsr()

    def aggregate(self, edge_rows, mode):
        """Aggregate per-edge rows onto nodes. Returns ``(out, argmax or None)``."""
        mean = self.mean @ edge_rows
        if mode == "mean":
            return mean, None
        n_nodes, d = mean.shape
        mx = np.zeros((n_nodes, d))
        arg = None
        if len(self.nonempty):
            ordered = edge_rows[self.pos]
            seg_max = np.maximum.reduceat(ordered, self.starts, axis=0)
            mx[self.nonempty] = seg_max
            hit = ordered == seg_max[self.segment]
            big = np.iinfo(np.int64).max
            where = np.where(hit, np.arange(len(self.pos))[:, None], big)
            arg = self.pos[np.minimum.reduceat(where, self.starts, axis=0)]
        return np.concatenate([mean, mx], axis=1), arg

    def aggregate_backward(self, dout, arg, n_edges, mode):
        d = dout.shape[1] // (1 if mode == "mean" else 2)
        g = self.mean_t @ dout[:, :d]
        if mode != "mean" and arg is not None:
            dmax = dout[self.nonempty, d:]
            cols = np.broadcast_to(np.arange(d), arg.shape)
            np.add.at(g, (arg, cols), dmax)
        return g


def incidence_operators(graph):
    def build():
        return {p: _Incidence(*graph.incidence(p), graph.n_edges) for p in (U, V)}
    return graph._cached("bean_operators", build)


class BeanConv:
    """One BEAN layer mapping state widths ``in_dims`` to ``out_dims``.

    Parameters
    ----------
    in_dims, out_dims : tuple of int
        ``(d_u, d_v, d_e)`` before and after the layer.
    aggregator : {"mean", "mean+max"}
    final : bool
        If True the layer is Linear only (no batch norm, no ReLU).
    """

    def __init__(self, in_dims, out_dims, aggregator="mean", final=False, rng=None):
        if aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        rng = np.random.default_rng(0) if rng is None else rng
        du, dv, de = in_dims
        ou, ov, oe = out_dims
        a = 1 if aggregator == "mean" else 2
        self.in_dims = tuple(in_dims)
        self.out_dims = tuple(out_dims)
        self.aggregator = aggregator
        self.final = final
        self.lin = {"u": Linear(du + a * dv + a * de, ou, rng),
                    "v": Linear(dv + a * du + a * de, ov, rng),
                    "e": Linear(de + du + dv, oe, rng)}
        self.bn = {} if final else {k: BatchNorm(d) for k, d in zip("uve", out_dims)}

    def parameters(self):
        out = []
        for k in "uve":
            out += [(f"lin_{k}.{n}", p, g) for n, p, g in self.lin[k].parameters()]
            if k in self.bn:
                out += [(f"bn_{k}.{n}", p, g) for n, p, g in self.bn[k].parameters()]
        return out

    def buffers(self):
        return [(f"bn_{k}.{n}", b) for k in "uve" if k in self.bn for n, b in self.bn[k].buffers()]

    def _post(self, key, z, training, update_stats):
        z, c_lin = self.lin[key].forward(z)
        if self.final:
            return z, (c_lin, None, None)
        z, c_bn = self.bn[key].forward(z, training, update_stats)
        z, mask = relu(z)
        return z, (c_lin, c_bn, mask)

    def _post_backward(self, key, cache, dout):
        c_lin, c_bn, mask = cache
        if not self.final:
            dout = relu_backward(mask, dout)
            dout = self.bn[key].backward(c_bn, dout)
        return self.lin[key].backward(c_lin, dout)

    def forward(self, graph, state, training=False, update_stats=True):
        if state.dims != self.in_dims:
            raise DimensionMismatch(f"layer expects state widths {self.in_dims}, got {state.dims}")
        if (len(state.h_u), len(state.h_v), len(state.h_e)) != (graph.n_u, graph.n_v, graph.n_edges):
            raise DimensionMismatch("state row counts do not match the graph")
        ops = incidence_operators(graph)
        eu, ev = graph.edge_u, graph.edge_v
        mode = self.aggregator
        v_at_e = state.h_v[ev]
        u_at_e = state.h_u[eu]

        nbr_u, arg_nbr_u = ops[U].aggregate(v_at_e, mode)
        inc_u, arg_inc_u = ops[U].aggregate(state.h_e, mode)
        nbr_v, arg_nbr_v = ops[V].aggregate(u_at_e, mode)
        inc_v, arg_inc_v = ops[V].aggregate(state.h_e, mode)

        out_u, c_u = self._post("u", np.concatenate([state.h_u, nbr_u, inc_u], axis=1),
                                training, update_stats)
        out_v, c_v = self._post("v", np.concatenate([state.h_v, nbr_v, inc_v], axis=1),
                                training, update_stats)
        out_e, c_e = self._post("e", np.concatenate([u_at_e, v_at_e, state.h_e], axis=1),
                                training, update_stats)
        cache = (graph, c_u, c_v, c_e, (arg_nbr_u, arg_inc_u, arg_nbr_v, arg_inc_v))
        return LayerState(out_u, out_v, out_e), cache

    def backward(self, cache, grads):
        """Gradient of the layer input state given gradients of its output state."""
        if cache is None:
            raise MissingForwardCache("BeanConv.backward called without a forward cache")
        graph, c_u, c_v, c_e, args = cache
        arg_nbr_u, arg_inc_u, arg_nbr_v, arg_inc_v = args
        ops = incidence_operators(graph)
        mode = self.aggregator
        a = 1 if mode == "mean" else 2
        du, dv, de = self.in_dims
        n_e = graph.n_edges

        g_u = self._post_backward("u", c_u, grads.h_u)
        g_v = self._post_backward("v", c_v, grads.h_v)
        g_e = self._post_backward("e", c_e, grads.h_e)

        dh_u = g_u[:, :du].copy()
        dh_v = g_v[:, :dv].copy()
        dh_e = g_e[:, du + dv:].copy()

        # U-node messages: neighbour V states and incident edge states
        d_vedge = ops[U].aggregate_backward(g_u[:, du:du + a * dv], arg_nbr_u, n_e, mode)
        dh_e += ops[U].aggregate_backward(g_u[:, du + a * dv:], arg_inc_u, n_e, mode)
        # V-node messages
        d_uedge = ops[V].aggregate_backward(g_v[:, dv:dv + a * du], arg_nbr_v, n_e, mode)
        dh_e += ops[V].aggregate_backward(g_v[:, dv + a * du:], arg_inc_v, n_e, mode)
        # edge messages: endpoint states
        d_uedge = d_uedge + g_e[:, :du]
        d_vedge = d_vedge + g_e[:, du:du + dv]

        dh_u += ops[U].sum @ d_uedge
        dh_v += ops[V].sum @ d_vedge
        return LayerState(dh_u, dh_v, dh_e)


def bean_conv_forward(graph, state, layer, training=False):
    return layer.forward(graph, state, training)


def bean_conv_backward(layer, cache, grads):
    return layer.backward(cache, grads)
