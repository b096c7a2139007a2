"""Feature-only logistic regression, for comparison with the graph model."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InsufficientLabels
from .graph import PARTITIONS
from .metrics import Metrics
from .nn import bce_with_logits, sigmoid


class LogisticBaseline(ClassifierMixin, BaseEstimator):
    """Binary logistic regression fitted by full-batch gradient descent."""

    def __init__(self, learning_rate=0.1, max_iter=2000, l2=0.0, threshold=0.5, tol=1e-8):
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.l2 = l2
        self.threshold = threshold
        self.tol = tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.array([0, 1])
        y = np.asarray(y, dtype=np.float64)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        if len(np.unique(y)) < 2:
            raise InsufficientLabels("logistic regression needs both classes")
        w = np.zeros(X.shape[1])
        b = 0.0
        prev = np.inf
        for self.n_iter_ in range(1, self.max_iter + 1):
            loss, g = bce_with_logits(X @ w + b, y)
            loss += 0.5 * self.l2 * float(w @ w)
            w -= self.learning_rate * (X.T @ g + self.l2 * w)
            b -= self.learning_rate * float(g.sum())
            if prev - loss < self.tol:
                break
            prev = loss
        self.coef_, self.intercept_ = w, b
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.stack([1 - p, p], axis=1)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= self.threshold).astype(int)


def logistic_baseline(graph, splits, split="test", **params):
    """Fit one baseline per partition on its training nodes; score ``split``."""
    out = {}
    for p in PARTITIONS:
        labels = graph.labels(p)
        x = graph.features(p)
        train = splits.node_mask(p, "train") & (labels >= 0)
        held = splits.node_mask(p, split) & (labels >= 0)
        if not train.any() or len(np.unique(labels[train])) < 2:
            raise InsufficientLabels(f"partition {p} lacks labelled training nodes of both classes")
        model = LogisticBaseline(**params).fit(x[train], labels[train])
        out[p] = Metrics.from_predictions(labels[held] == 1, model.predict(x[held]))
    return out
