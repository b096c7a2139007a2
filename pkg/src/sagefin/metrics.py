"""Confusion-count metrics and evaluation of a fitted detector on a split."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyMask
from .graph import PARTITIONS
from .network import sample_negative_edges


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(y_true & y_pred)), int(np.sum(~y_true & y_pred)),
                   int(np.sum(y_true & ~y_pred)), int(np.sum(~y_true & ~y_pred)))

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def as_dict(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def node_metrics(detector, graph, splits, split, partition, latent=None):
    mask = splits.node_mask(partition, split) & (graph.labels(partition) >= 0)
    if not mask.any():
        raise EmptyMask(f"no labelled {partition} nodes in the {split} split")
    pred = detector.predict(graph, partition, latent=latent)
    return Metrics.from_predictions(graph.labels(partition)[mask] == 1, pred[mask])


def edge_metrics(detector, graph, splits, split, seed=0, latent=None):
    """Held-out edges of ``split`` against freshly sampled non-edges."""
    positives = graph.edges[splits.edge_mask(split)[graph.edge_ids]]
    if len(positives) == 0:
        raise EmptyMask(f"no edges in the {split} split")
    rng = np.random.default_rng(seed)
    negatives = sample_negative_edges(graph, detector.negative_ratio, rng, len(positives))
    pairs = np.concatenate([positives, negatives])
    truth = np.r_[np.ones(len(positives), bool), np.zeros(len(negatives), bool)]
    proba = detector.edge_proba(graph, pairs, latent=latent)
    return Metrics.from_predictions(truth, proba >= detector.threshold)


def evaluate(detector, graph, splits, split="test", seed=0):
    """Node metrics for both partitions plus edge-prediction metrics."""
    latent = detector.transform(graph)
    out = {p: node_metrics(detector, graph, splits, split, p, latent) for p in PARTITIONS}
    out["edge"] = edge_metrics(detector, graph, splits, split, seed, latent)
    return out


def format_table(results, digits=3):
    """Plain-text table: wallet and transaction precision/recall/F1, then edge F1.

    ``results`` maps a model name to the dict returned by :func:`evaluate`;
    ``"edge"`` may be missing for feature-only baselines.
    """
    header = ("Model", "Wallet P", "Wallet R", "Wallet F1",
              "Tx P", "Tx R", "Tx F1", "Edge F1")
    rows = [header]
    fmt = f"{{:.{digits}f}}"
    for name, res in results.items():
        row = [name]
        for p in ("v", "u"):
            m = res[p]
            row += [fmt.format(m.precision), fmt.format(m.recall), fmt.format(m.f1)]
        row.append(fmt.format(res["edge"].f1) if "edge" in res else "-")
        rows.append(tuple(row))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
