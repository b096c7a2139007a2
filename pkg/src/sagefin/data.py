"""Loading Elliptic++-style CSV files and generating synthetic fraud graphs."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .exceptions import DanglingEdge, InvalidConfig, SchemaMismatch
from .graph import FRAUD, NON_FRAUD, PARTITIONS, UNKNOWN, BipartiteGraph

SCHEMA_FILE = "schema.json"


@dataclass
class EllipticSchema:
    """Layout of an Elliptic++-shaped dataset directory.

    Transactions form partition U and wallet addresses partition V. Feature
    files start with an id column, optionally followed by a time-step column
    that is parsed and ignored. ``aggregated_columns`` is a ``[start, stop)``
    range over the transaction feature columns that is dropped before
    training. Each edge inherits the retained features of its transaction
    unless ``edge_features == "columns"``, in which case the edge files carry
    their own feature columns after the two id columns.
    """

    tx_features: str = "txs_features.csv"
    tx_classes: str = "txs_classes.csv"
    wallet_features: str = "wallets_features.csv"
    wallet_classes: str = "wallets_classes.csv"
    edge_files: list = field(default_factory=lambda: [
        ["AddrTx_edgelist.csv", "wallet", "tx"],
        ["TxAddr_edgelist.csv", "tx", "wallet"],
    ])
    tx_time_column: bool = True
    wallet_time_column: bool = True
    n_tx_features: int | None = 165
    n_wallet_features: int | None = 56
    aggregated_columns: list | None = field(default_factory=lambda: [93, 165])
    edge_features: str = "transaction"
    label_map: dict = field(default_factory=lambda: {"1": "fraud", "2": "non-fraud",
                                                      "3": "unknown", "unknown": "unknown"})

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class Dataset:
    """A loaded graph plus the external ids of its nodes."""

    graph: BipartiteGraph
    u_ids: np.ndarray
    v_ids: np.ndarray
    summary: dict


_LABEL_CODES = {"fraud": FRAUD, "non-fraud": NON_FRAUD, "unknown": UNKNOWN}


def _read_features(path, has_time, expected, what):
    df = pd.read_csv(path, dtype={0: str}, float_precision="round_trip")
    start = 2 if has_time else 1
    feats = df.columns[start:]
    if expected is not None and len(feats) != expected:
        extra = feats[expected] if len(feats) > expected else None
        raise SchemaMismatch(
            f"{what}: expected {expected} feature columns, found {len(feats)}"
            + (f" (first unexpected column {extra!r})" if extra is not None else "")
        )
    ids = df.iloc[:, 0].astype(str)
    keep = ~ids.duplicated(keep="last")
    ids, x = ids[keep].to_numpy(), df.loc[keep, feats]
    bad = [c for c in feats if not pd.api.types.is_numeric_dtype(x[c])]
    if bad:
        raise SchemaMismatch(f"{what}: non-numeric feature column {bad[0]!r}")
    return ids, x.to_numpy(dtype=np.float64), list(feats)


def _read_labels(path, ids, label_map, what):
    labels = np.full(len(ids), UNKNOWN, dtype=np.int8)
    if not os.path.exists(path):
        return labels
    df = pd.read_csv(path, dtype=str)
    if df.shape[1] < 2:
        raise SchemaMismatch(f"{what}: label file needs an id and a class column")
    classes = df.iloc[:, 1].astype(str).str.strip()
    unknown = ~classes.isin(list(label_map))
    if unknown.any():
        row = int(np.flatnonzero(unknown.to_numpy())[0])
        raise SchemaMismatch(f"{what}: row {row} has unknown class {classes.iloc[row]!r}")
    codes = classes.map({k: _LABEL_CODES[v] for k, v in label_map.items()}).to_numpy(np.int8)
    pos = pd.Series(np.arange(len(ids)), index=pd.Index(ids))
    where = df.iloc[:, 0].astype(str).map(pos)
    found = where.notna().to_numpy()
    labels[where[found].to_numpy(np.int64)] = codes[found]
    return labels


def load_elliptic(data_dir, schema=None):
    """Build a graph from an Elliptic++-style directory.

    If ``data_dir`` holds a ``schema.json`` it is used when ``schema`` is None.
    """
    if schema is None:
        path = os.path.join(data_dir, SCHEMA_FILE)
        schema = EllipticSchema.from_json(path) if os.path.exists(path) else EllipticSchema()
    p = lambda name: os.path.join(data_dir, name)  # noqa: E731

    tx_ids, tx_x, tx_cols = _read_features(p(schema.tx_features), schema.tx_time_column,
                                           schema.n_tx_features, "transactions")
    if schema.aggregated_columns:
        lo, hi = schema.aggregated_columns
        keep = [i for i in range(tx_x.shape[1]) if not lo <= i < hi]
        tx_x = tx_x[:, keep]
    w_ids, w_x, _ = _read_features(p(schema.wallet_features), schema.wallet_time_column,
                                   schema.n_wallet_features, "wallets")
    tx_pos = pd.Series(np.arange(len(tx_ids)), index=pd.Index(tx_ids))
    w_pos = pd.Series(np.arange(len(w_ids)), index=pd.Index(w_ids))

    edges, e_feats = [], []
    for fname, first, second in schema.edge_files:
        if not os.path.exists(p(fname)):
            continue
        df = pd.read_csv(p(fname), dtype={0: str, 1: str}, float_precision="round_trip")
        cols = {first: df.iloc[:, 0].astype(str), second: df.iloc[:, 1].astype(str)}
        tx_idx = cols["tx"].map(tx_pos)
        w_idx = cols["wallet"].map(w_pos)
        missing = tx_idx.isna() | w_idx.isna()
        if missing.any():
            row = int(np.flatnonzero(missing.to_numpy())[0])
            raise DanglingEdge(
                f"{fname}: row {row} ({df.iloc[row, 0]}, {df.iloc[row, 1]}) "
                "references an undeclared node"
            )
        pair = np.stack([tx_idx.to_numpy(np.int64), w_idx.to_numpy(np.int64)], axis=1)
        edges.append(pair)
        if schema.edge_features == "columns":
            e_feats.append(df.iloc[:, 2:].to_numpy(dtype=np.float64))
        else:
            e_feats.append(tx_x[pair[:, 0]])
    if edges:
        edges = np.concatenate(edges)
        e_feats = np.concatenate(e_feats)
    else:
        edges = np.empty((0, 2), dtype=np.int64)
        e_feats = np.empty((0, tx_x.shape[1]))

    graph = BipartiteGraph(
        tx_x, w_x, edges, e_feats,
        _read_labels(p(schema.tx_classes), tx_ids, schema.label_map, "transaction classes"),
        _read_labels(p(schema.wallet_classes), w_ids, schema.label_map, "wallet classes"),
    )
    summary = summarize_graph(graph)
    summary["u"]["raw_features"] = len(tx_cols)
    return Dataset(graph, np.asarray(tx_ids), np.asarray(w_ids), summary)


def summarize_graph(graph):
    """Per-partition feature and label counts (mirrors the dataset overview table)."""
    out = {}
    n_nodes = {"u": graph.n_u, "v": graph.n_v}
    widths = {"u": graph.d_u, "v": graph.d_v}
    for part in PARTITIONS:
        labels = graph.labels(part)
        n = n_nodes[part]
        counts = {"non_fraud": int(np.sum(labels == NON_FRAUD)),
                  "fraud": int(np.sum(labels == FRAUD)),
                  "unknown": int(np.sum(labels == UNKNOWN))}
        out[part] = {"nodes": n, "features": widths[part], **counts,
                     **{f"{k}_pct": round(100.0 * v / n) if n else 0 for k, v in counts.items()}}
    out["edges"] = graph.n_edges
    out["edge_features"] = graph.d_e
    return out


def summarize_degrees(graph):
    """Exact degree histograms: ``{partition: [(degree, count), ...]}``."""
    out = {}
    for part in PARTITIONS:
        deg = graph.degrees(part)
        values, counts = np.unique(deg, return_counts=True)
        out[part] = [(int(d), int(c)) for d, c in zip(values, counts)]
    return out


def write_degree_table(histogram, path):
    with open(path, "w") as fh:
        fh.write("degree,count\n")
        for d, c in histogram:
            fh.write(f"{d},{c}\n")


@dataclass
class SyntheticConfig:
    """Planted-anomaly generator settings.

    Background nodes belong to ``n_communities`` groups; nodes of the same group
    share a feature centroid and are linked with probability ``edge_density``.
    ``cross_edge_rate`` adds that fraction of extra uniformly random edges.
    Each fraud cluster joins ``cluster_size`` U nodes and ``cluster_size`` V nodes
    with probability ``cluster_density``. Fraud nodes borrow the centroid of a
    random community (so they look ordinary one at a time), have their features
    shifted by ``shift`` feature standard deviations, and only link inside their
    cluster. Edge features are noise, shifted the same way on fraud edges.
    """

    n_u: int = 400
    n_v: int = 400
    d_u: int = 8
    d_v: int = 8
    d_e: int = 4
    n_communities: int = 40
    edge_density: float = 0.8
    cross_edge_rate: float = 0.02
    n_clusters: int = 3
    cluster_size: int = 10
    cluster_density: float = 0.6
    shift: float = 3.0
    feature_noise: float = 0.5
    label_fraction: float = 0.3
    seed: int = 0

    def validate(self):
        for name in ("n_u", "n_v", "d_u", "d_v", "d_e", "n_communities"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.n_clusters < 0 or self.cluster_size <= 0:
            raise InvalidConfig("n_clusters must be >= 0 and cluster_size > 0")
        if self.n_clusters * self.cluster_size > min(self.n_u, self.n_v):
            raise InvalidConfig("fraud clusters do not fit in the node partitions")
        if not 0 < self.label_fraction <= 1:
            raise InvalidConfig("label_fraction must lie in (0, 1]")
        for name in ("edge_density", "cluster_density"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidConfig(f"{name} must lie in [0, 1]")
        if self.cross_edge_rate < 0 or self.shift < 0 or self.feature_noise < 0:
            raise InvalidConfig("cross_edge_rate, shift and feature_noise must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class GroundTruth:
    """Planted fraud membership; never stored in the graph beyond revealed labels."""

    u_fraud: np.ndarray
    v_fraud: np.ndarray
    clusters: list

    def fraud(self, partition):
        return self.u_fraud if partition == "u" else self.v_fraud


def generate_synthetic(config=None):
    """Returns ``(graph, ground_truth)`` for a planted-anomaly graph."""
    cfg = (config or SyntheticConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    k = cfg.n_communities
    fraud_u = np.zeros(cfg.n_u, dtype=bool)
    fraud_v = np.zeros(cfg.n_v, dtype=bool)
    clusters = []
    perm_u, perm_v = rng.permutation(cfg.n_u), rng.permutation(cfg.n_v)
    for c in range(cfg.n_clusters):
        cu = np.sort(perm_u[c * cfg.cluster_size:(c + 1) * cfg.cluster_size])
        cv = np.sort(perm_v[c * cfg.cluster_size:(c + 1) * cfg.cluster_size])
        fraud_u[cu] = True
        fraud_v[cv] = True
        clusters.append((cu, cv))

    comm_u = rng.integers(0, k, size=cfg.n_u)
    comm_v = rng.integers(0, k, size=cfg.n_v)
    cent_u = rng.normal(size=(k, cfg.d_u))
    cent_v = rng.normal(size=(k, cfg.d_v))
    sd = np.sqrt(1.0 + cfg.feature_noise ** 2)
    x_u = cent_u[comm_u] + cfg.feature_noise * rng.normal(size=(cfg.n_u, cfg.d_u))
    x_v = cent_v[comm_v] + cfg.feature_noise * rng.normal(size=(cfg.n_v, cfg.d_v))
    x_u[fraud_u] += cfg.shift * sd
    x_v[fraud_v] += cfg.shift * sd

    edges = []
    for c in range(k):
        us = np.flatnonzero((comm_u == c) & ~fraud_u)
        vs = np.flatnonzero((comm_v == c) & ~fraud_v)
        if len(us) and len(vs):
            hit = rng.random((len(us), len(vs))) < cfg.edge_density
            iu, iv = np.nonzero(hit)
            edges.append(np.stack([us[iu], vs[iv]], axis=1))
    n_background = sum(len(e) for e in edges)
    normal_u, normal_v = np.flatnonzero(~fraud_u), np.flatnonzero(~fraud_v)
    n_cross = int(round(cfg.cross_edge_rate * n_background))
    if n_cross:
        edges.append(np.stack([rng.choice(normal_u, n_cross), rng.choice(normal_v, n_cross)], 1))
    fraud_edges = []
    for cu, cv in clusters:
        hit = rng.random((len(cu), len(cv))) < cfg.cluster_density
        iu, iv = np.nonzero(hit)
        fraud_edges.append(np.stack([cu[iu], cv[iv]], axis=1))
    edges = np.concatenate(edges + fraud_edges) if edges or fraud_edges else np.empty((0, 2), int)
    # collapse accidental duplicates from the random cross edges
    edges = np.unique(edges, axis=0)
    is_fraud_edge = fraud_u[edges[:, 0]] & fraud_v[edges[:, 1]]
    e_x = rng.normal(size=(len(edges), cfg.d_e))
    e_x[is_fraud_edge] += cfg.shift

    def reveal(fraud, n):
        labels = np.full(n, UNKNOWN, dtype=np.int8)
        known = rng.random(n) < cfg.label_fraction
        labels[known] = fraud[known].astype(np.int8)
        return labels

    graph = BipartiteGraph(x_u, x_v, edges, e_x, reveal(fraud_u, cfg.n_u),
                           reveal(fraud_v, cfg.n_v))
    return graph, GroundTruth(fraud_u, fraud_v, clusters)


def export_csv(graph, out_dir, ground_truth=None):
    """Write ``graph`` in the Elliptic++ layout (plus ``schema.json``)."""
    os.makedirs(out_dir, exist_ok=True)
    tx_ids = [f"tx{i}" for i in range(graph.n_u)]
    w_ids = [f"w{i}" for i in range(graph.n_v)]
    inv = {FRAUD: "1", NON_FRAUD: "2", UNKNOWN: "3"}

    def frame(ids, x, id_col, prefix):
        df = pd.DataFrame(x, columns=[f"{prefix}_{j}" for j in range(x.shape[1])])
        df.insert(0, id_col, ids)
        return df

    fmt = "%.17g"
    frame(tx_ids, graph.u_features, "txId", "feature").to_csv(
        os.path.join(out_dir, "txs_features.csv"), index=False, float_format=fmt)
    frame(w_ids, graph.v_features, "address", "feature").to_csv(
        os.path.join(out_dir, "wallets_features.csv"), index=False, float_format=fmt)
    pd.DataFrame({"txId": tx_ids, "class": [inv[int(y)] for y in graph.u_labels]}).to_csv(
        os.path.join(out_dir, "txs_classes.csv"), index=False)
    pd.DataFrame({"address": w_ids, "class": [inv[int(y)] for y in graph.v_labels]}).to_csv(
        os.path.join(out_dir, "wallets_classes.csv"), index=False)
    edf = pd.DataFrame(graph.e_features, columns=[f"edge_feature_{j}" for j in range(graph.d_e)])
    edf.insert(0, "txId", [tx_ids[i] for i in graph.edge_u])
    edf.insert(0, "address", [w_ids[i] for i in graph.edge_v])
    edf.to_csv(os.path.join(out_dir, "AddrTx_edgelist.csv"), index=False, float_format=fmt)
    EllipticSchema(
        edge_files=[["AddrTx_edgelist.csv", "wallet", "tx"]],
        tx_time_column=False, wallet_time_column=False,
        n_tx_features=graph.d_u, n_wallet_features=graph.d_v,
        aggregated_columns=None, edge_features="columns",
    ).to_json(os.path.join(out_dir, SCHEMA_FILE))
    if ground_truth is not None:
        rows = [("u", tx_ids[i], int(f)) for i, f in enumerate(ground_truth.u_fraud)]
        rows += [("v", w_ids[i], int(f)) for i, f in enumerate(ground_truth.v_fraud)]
        pd.DataFrame(rows, columns=["partition", "id", "fraud"]).to_csv(
            os.path.join(out_dir, "ground_truth.csv"), index=False)
