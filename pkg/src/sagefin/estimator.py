"""Scikit-learn style front end for training and applying SAGE-FIN."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimensionMismatch, NonFiniteLoss, UntrainedModel
from .graph import PARTITIONS, BipartiteGraph, check_partition
from .metrics import Metrics
from .network import SageFinConfig, SageFinNetwork, sample_negative_edges
from .nn import Adam, sigmoid
from .preprocessing import SplitMasks, make_splits

logger = logging.getLogger(__name__)


def check_graph(graph, dims=None):
    """Reject anything that is not a BipartiteGraph with the expected widths."""
    if not isinstance(graph, BipartiteGraph):
        raise TypeError(f"expected a BipartiteGraph, got {type(graph).__name__}")
    if dims is not None and (graph.d_u, graph.d_v, graph.d_e) != tuple(dims):
        raise DimensionMismatch(
            f"graph widths {(graph.d_u, graph.d_v, graph.d_e)} differ from fitted {tuple(dims)}"
        )
    return graph


@dataclass
class TrainReport:
    """Per-epoch losses and validation scores, plus the selected epoch."""

    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    test: dict = field(default_factory=dict)

    def add(self, epoch, loss, val):
        self.epochs.append({"epoch": epoch, "loss": loss.as_dict(), "val": val})

    def to_jsonl(self):
        lines = [json.dumps(rec, sort_keys=True) for rec in self.epochs]
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {"epochs": self.epochs, "best_epoch": self.best_epoch, "test": self.test}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["epochs"]), int(d["best_epoch"]), dict(d.get("test", {})))


class SageFinDetector(BaseEstimator):
    """Semi-supervised fraud detector for bipartite transaction graphs.

    Full-graph training: every epoch draws fresh negative pairs, evaluates the
    composite loss on the training masks, back-propagates and takes one Adam
    step. The parameters with the best mean validation F1 over both partitions
    are kept.

    Parameters
    ----------
    n_layers : int, default=4
        Total BEAN layers; half encode, half decode features.
    hidden_dim, latent_dim : int, default=32
    mlp_depth : int, default=4
        Dense layers in the structure decoder and in each classifier head.
    negative_ratio : int, default=5
        Sampled non-edges per training edge.
    lambda_feat, lambda_struct, lambda_class : float, default=1.0
        Loss weights for reconstruction, edge prediction and node classification.
    aggregator : {"mean", "mean+max"}, default="mean"
    reconstruct_edges : bool, default=True
    learning_rate : float, default=0.005
    epochs : int, default=200
    threshold : float, default=0.5
        Decision threshold on predicted probabilities.
    random_state : int, default=0
        Seeds initialisation, negative sampling and (when ``fit`` builds them) splits.
    """

    def __init__(self, n_layers=4, hidden_dim=32, latent_dim=32, mlp_depth=4, negative_ratio=5,
                 lambda_feat=1.0, lambda_struct=1.0, lambda_class=1.0, aggregator="mean",
                 reconstruct_edges=True, learning_rate=0.005, epochs=200, threshold=0.5,
                 random_state=0):
        self.n_layers = n_layers
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.mlp_depth = mlp_depth
        self.negative_ratio = negative_ratio
        self.lambda_feat = lambda_feat
        self.lambda_struct = lambda_struct
        self.lambda_class = lambda_class
        self.aggregator = aggregator
        self.reconstruct_edges = reconstruct_edges
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.threshold = threshold
        self.random_state = random_state

    def _config(self):
        return SageFinConfig(
            n_layers=self.n_layers, hidden_dim=self.hidden_dim, latent_dim=self.latent_dim,
            mlp_depth=self.mlp_depth, negative_ratio=self.negative_ratio,
            lambda_feat=self.lambda_feat, lambda_struct=self.lambda_struct,
            lambda_class=self.lambda_class, aggregator=self.aggregator,
            reconstruct_edges=self.reconstruct_edges, seed=self.random_state,
        ).validate()

    # -- training --------------------------------------------------------------

    def fit(self, graph, splits=None):
        check_graph(graph)
        config = self._config()
        if splits is None:
            splits = make_splits(graph, seed=self.random_state)
        self.network_ = SageFinNetwork((graph.d_u, graph.d_v, graph.d_e), config)
        self.optimizer_ = Adam(self.learning_rate)
        self.splits_ = splits
        self.report_ = TrainReport()
        rng = np.random.default_rng([self.random_state, 1])

        with splits.sealed():
            train_masks = {p: splits.node_mask(p, "train") for p in PARTITIONS}
            positives = graph.edges[splits.edge_mask("train")[graph.edge_ids]]
            val_pos = graph.edges[splits.edge_mask("val")[graph.edge_ids]]
            val_neg = sample_negative_edges(graph, self.negative_ratio,
                                            np.random.default_rng([self.random_state, 2]),
                                            len(val_pos))
            best_score, best_state = -np.inf, None
            for epoch in range(self.epochs):
                negatives = sample_negative_edges(graph, self.negative_ratio, rng, len(positives))
                self.network_.zero_grad()
                loss = self.network_.loss(graph, train_masks, positives, negatives, training=True)
                terms = loss.as_dict()
                if not all(np.isfinite(v) for v in terms.values()):
                    raise NonFiniteLoss(f"non-finite loss at epoch {epoch}: {terms}", terms)
                self.optimizer_.step(self.network_.parameters(), self.network_.gradients())
                val = self._validation_scores(graph, splits, val_pos, val_neg)
                self.report_.add(epoch, loss, val)
                if val["node_f1"] >= best_score:
                    best_score, best_state = val["node_f1"], self.network_.state_dict()
                    self.report_.best_epoch = epoch
                logger.debug("epoch %d loss %.5f val %s", epoch, loss.total, val)
        if best_state is not None:
            self.network_.load_state_dict(best_state)
        self.classes_ = np.array([0, 1])
        return self

    def _validation_scores(self, graph, splits, val_pos, val_neg):
        latent = self.transform(graph)
        out = {}
        f1s = []
        for p in PARTITIONS:
            mask = splits.node_mask(p, "val") & (graph.labels(p) >= 0)
            if mask.any():
                pred = self.predict(graph, p, latent=latent)
                m = Metrics.from_predictions(graph.labels(p)[mask] == 1, pred[mask])
                out[f"f1_{p}"] = m.f1
                f1s.append(m.f1)
        out["node_f1"] = float(np.mean(f1s)) if f1s else 0.0
        if len(val_pos):
            pairs = np.concatenate([val_pos, val_neg])
            truth = np.r_[np.ones(len(val_pos), bool), np.zeros(len(val_neg), bool)]
            proba = self.edge_proba(graph, pairs, latent=latent)
            out["edge_f1"] = Metrics.from_predictions(truth, proba >= self.threshold).f1
        return out

    # -- inference -------------------------------------------------------------

    def _check(self, graph):
        if not hasattr(self, "network_"):
            raise UntrainedModel("this SageFinDetector is not fitted yet")
        check_is_fitted(self, "network_")
        return check_graph(graph, self.network_.dims)

    def transform(self, graph):
        """Encoder latents (inference mode) as a LayerState."""
        self._check(graph)
        latent, _ = self.network_.encode(graph, training=False)
        return latent

    def reconstruct(self, graph, latent=None):
        latent = self.transform(graph) if latent is None else latent
        recon, _ = self.network_.decode_features(graph, latent, training=False)
        return recon

    def decision_function(self, graph, partition="v", latent=None):
        check_partition(partition)
        latent = self.transform(graph) if latent is None else latent
        logits, _ = self.network_.node_logits(latent, partition)
        return logits

    def predict_proba(self, graph, partition="v", latent=None):
        p = sigmoid(self.decision_function(graph, partition, latent))
        return np.stack([1 - p, p], axis=1)

    def predict(self, graph, partition="v", latent=None):
        return (self.predict_proba(graph, partition, latent)[:, 1] >= self.threshold).astype(int)

    def edge_proba(self, graph, pairs, latent=None):
        latent = self.transform(graph) if latent is None else latent
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs) == 0:
            return np.empty(0)
        logits, _ = self.network_.edge_logits(latent, pairs)
        return sigmoid(logits)

    def score(self, graph, partition="v", split="val"):
        """F1 on the labelled nodes of ``split`` in ``partition``."""
        splits = self.splits_
        mask = splits.node_mask(partition, split) & (graph.labels(partition) >= 0)
        pred = self.predict(graph, partition)
        return Metrics.from_predictions(graph.labels(partition)[mask] == 1, pred[mask]).f1

    # -- persistence -----------------------------------------------------------

    def save(self, path):
        self._check_fitted()
        extra = {"params": self.get_params(), "report": self.report_.to_dict()}
        self.network_.save(path, self.optimizer_, extra)

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise UntrainedModel("this SageFinDetector is not fitted yet")

    @classmethod
    def load(cls, path, splits=None):
        network, opt_state, extra = SageFinNetwork.load(path)
        est = cls(**extra["params"])
        est.network_ = network
        est.optimizer_ = Adam(est.learning_rate)
        if opt_state is not None:
            est.optimizer_.load_state_dict(opt_state)
        est.report_ = TrainReport.from_dict(extra["report"])
        est.classes_ = np.array([0, 1])
        if splits is not None:
            est.splits_ = splits if isinstance(splits, SplitMasks) else SplitMasks.load(splits)
        return est
