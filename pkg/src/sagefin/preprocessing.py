"""Train/validation/test splits and feature standardisation."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateInput, InsufficientLabels, TestLeakage
from .graph import FRAUD, NON_FRAUD, PARTITIONS, BipartiteGraph, check_partition

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.7, 0.15, 0.15)


def _allocate(n, ratios, minimum=0):
    """Split ``n`` items by ``ratios`` with largest-remainder rounding."""
    exact = np.asarray(ratios, dtype=np.float64) * n
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    if minimum and n >= minimum * len(counts):
        for i in range(len(counts)):
            while counts[i] < minimum:
                counts[int(np.argmax(counts))] -= 1
                counts[i] += 1
    return counts


@dataclass
class SplitMasks:
    """Boolean masks over labelled nodes (per partition) and over base edges.

    Inside :meth:`sealed` any read of a test mask raises :class:`TestLeakage`.
    """

    node: dict
    edge: dict
    _sealed: bool = field(default=False, repr=False, compare=False)

    def node_mask(self, partition, split):
        check_partition(partition)
        if split == "test" and self._sealed:
            raise TestLeakage("test node mask read while splits are sealed")
        return self.node[(partition, split)]

    def edge_mask(self, split):
        if split == "test" and self._sealed:
            raise TestLeakage("test edge mask read while splits are sealed")
        return self.edge[split]

    def fit_rows(self, partition):
        """Rows usable for fitting statistics: everything outside val and test."""
        held = self.node[(partition, "val")] | self.node[(partition, "test")]
        return ~held

    @contextmanager
    def sealed(self):
        prev, self._sealed = self._sealed, True
        try:
            yield self
        finally:
            self._sealed = prev

    def to_arrays(self):
        out = {f"node/{p}/{s}": self.node[(p, s)] for p in PARTITIONS for s in SPLITS}
        out.update({f"edge/{s}": self.edge[s] for s in SPLITS})
        return out

    @classmethod
    def from_arrays(cls, arrays):
        node = {(p, s): np.asarray(arrays[f"node/{p}/{s}"], dtype=bool)
                for p in PARTITIONS for s in SPLITS}
        edge = {s: np.asarray(arrays[f"edge/{s}"], dtype=bool) for s in SPLITS}
        return cls(node, edge)

    def save(self, path):
        with open(path, "wb") as fh:
            np.savez(fh, **self.to_arrays())

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls.from_arrays({k: data[k] for k in data.files})


def make_splits(graph, ratios=DEFAULT_RATIOS, seed=0):
    """Stratified node splits per partition plus a random edge split.

    Split sizes follow ``ratios`` over the labelled nodes of each partition.
    The minority class is spread so every split gets at least one member;
    the majority class fills the remainder.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    node = {}
    for p in PARTITIONS:
        labels = graph.labels(p)
        by_class = {c: np.flatnonzero(labels == c) for c in (NON_FRAUD, FRAUD)}
        for c, idx in by_class.items():
            if len(idx) < 3:
                raise InsufficientLabels(
                    f"partition {p} has {len(idx)} labelled nodes of class {c}; need >= 3"
                )
        minority = min(by_class, key=lambda c: (len(by_class[c]), c))
        majority = FRAUD if minority == NON_FRAUD else NON_FRAUD
        n_total = len(by_class[NON_FRAUD]) + len(by_class[FRAUD])
        sizes = _allocate(n_total, ratios, minimum=2)
        minor = _allocate(len(by_class[minority]), ratios, minimum=1)
        major = sizes - minor
        while major.min() < 1:
            i, j = int(np.argmin(major)), int(np.argmax(major))
            major[i] += 1
            major[j] -= 1
        pieces = {}
        for c, counts in ((minority, minor), (majority, major)):
            perm = rng.permutation(by_class[c])
            bounds = np.cumsum(counts)[:-1]
            pieces[c] = np.split(perm, bounds)
        for k, s in enumerate(SPLITS):
            m = np.zeros(len(labels), dtype=bool)
            m[pieces[minority][k]] = True
            m[pieces[majority][k]] = True
            node[(p, s)] = m
    perm = rng.permutation(graph.n_base_edges)
    bounds = np.cumsum(_allocate(graph.n_base_edges, ratios))[:-1]
    edge = {}
    for s, idx in zip(SPLITS, np.split(perm, bounds)):
        m = np.zeros(graph.n_base_edges, dtype=bool)
        m[idx] = True
        edge[s] = m
    return SplitMasks(node, edge)


def standardize(features, rows=None):
    """Column-wise z-scores using population statistics of ``rows``.

    Returns ``(standardized, mean, std)``; zero-variance columns get std 1 so
    they map to 0 on the fitting rows.
    """
    x = np.asarray(features, dtype=np.float64)
    fit = x if rows is None else x[rows]
    if fit.shape[0] < 2:
        raise DegenerateInput(f"standardisation needs >= 2 rows, got {fit.shape[0]}")
    mean = fit.mean(axis=0)
    std = fit.std(axis=0)
    std[std == 0] = 1.0
    return (x - mean) / std, mean, std


class GraphStandardizer(TransformerMixin, BaseEstimator):
    """Standardise U, V and edge features with statistics from training rows.

    ``fit`` takes the graph and optionally its :class:`SplitMasks`; with masks,
    nodes in the validation and test splits and edges outside the training edge
    split are left out of the statistics.
    """

    def __init__(self, with_edges=True):
        self.with_edges = with_edges

    def fit(self, graph, splits=None):
        rows = {"u": None, "v": None, "e": None}
        if splits is not None:
            rows["u"] = splits.fit_rows("u")
            rows["v"] = splits.fit_rows("v")
            rows["e"] = splits.edge_mask("train")
        _, self.mean_u_, self.scale_u_ = standardize(graph.u_features, rows["u"])
        _, self.mean_v_, self.scale_v_ = standardize(graph.v_features, rows["v"])
        if self.with_edges and graph.d_e and graph.n_base_edges >= 2:
            e = graph._e_features
            _, self.mean_e_, self.scale_e_ = standardize(e, rows["e"])
        else:
            self.mean_e_ = np.zeros(graph.d_e)
            self.scale_e_ = np.ones(graph.d_e)
        return self

    def transform(self, graph):
        check_is_fitted(self, "mean_u_")
        out = BipartiteGraph(
            (graph.u_features - self.mean_u_) / self.scale_u_,
            (graph.v_features - self.mean_v_) / self.scale_v_,
            np.stack([graph._edge_u, graph._edge_v], axis=1),
            (graph._e_features - self.mean_e_) / self.scale_e_,
            graph.u_labels, graph.v_labels,
        )
        if graph.is_view:
            out = BipartiteGraph._view(out, graph._active)
        return out

    _STATS = ("mean_u_", "scale_u_", "mean_v_", "scale_v_", "mean_e_", "scale_e_")

    def save(self, path):
        check_is_fitted(self, "mean_u_")
        with open(path, "wb") as fh:
            np.savez(fh, with_edges=self.with_edges, **{k: getattr(self, k) for k in self._STATS})

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            out = cls(with_edges=bool(data["with_edges"]))
            for k in cls._STATS:
                setattr(out, k, data[k])
        return out
