"""Dense layers, losses and the Adam optimiser, each with an explicit backward pass.

Forward functions return ``(output, cache)``; the matching backward takes the
cache and the upstream gradient, accumulates parameter gradients in place and
returns the gradient with respect to the input. Everything is float64.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from .exceptions import DegenerateBatch, DimensionMismatch, MissingForwardCache


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _require(cache):
    if cache is None:
        raise MissingForwardCache("backward called without a forward cache")
    return cache


class Linear:
    """Affine map ``x @ weight + bias``."""

    def __init__(self, in_dim, out_dim, rng=None, bias_init=0.0):
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = glorot_uniform(rng, in_dim, out_dim)
        self.bias = np.full(out_dim, float(bias_init))
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def parameters(self):
        return [("weight", self.weight, self.grad_weight), ("bias", self.bias, self.grad_bias)]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionMismatch(f"linear layer expects {self.in_dim} columns, got {x.shape}")
        return x @ self.weight + self.bias, x

    def backward(self, cache, dout):
        x = _require(cache)
        self.grad_weight += x.T @ dout
        self.grad_bias += dout.sum(axis=0)
        return dout @ self.weight.T


class BatchNorm:
    """Per-column batch normalisation over the rows of a partition."""

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.grad_gamma = np.zeros(dim)
        self.grad_beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    @property
    def dim(self):
        return self.gamma.shape[0]

    def parameters(self):
        return [("gamma", self.gamma, self.grad_gamma), ("beta", self.beta, self.grad_beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, training, update_stats=True):
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionMismatch(f"batch norm expects {self.dim} columns, got {x.shape}")
        if training:
            n = x.shape[0]
            if n < 2:
                raise DegenerateBatch(f"batch norm in training mode needs >= 2 rows, got {n}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            if update_stats:
                m = self.momentum
                self.running_mean *= 1 - m
                self.running_mean += m * mean
                self.running_var *= 1 - m
                self.running_var += m * var * n / (n - 1)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return self.gamma * xhat + self.beta, (xhat, inv_std, training)

    def backward(self, cache, dout):
        xhat, inv_std, training = _require(cache)
        self.grad_gamma += (dout * xhat).sum(axis=0)
        self.grad_beta += dout.sum(axis=0)
        dxhat = dout * self.gamma
        if not training:
            return dxhat * inv_std
        n = dout.shape[0]
        return inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


def relu(x):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(cache, dout):
    return np.where(_require(cache), dout, 0.0)


def sigmoid(z):
    return expit(z)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy on logits and its gradient.

    Uses ``max(z, 0) - z t + log1p(exp(-|z|))`` so large logits stay finite.
    An empty input gives a loss of 0.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise DimensionMismatch(f"logits {logits.shape} vs targets {targets.shape}")
    n = logits.size
    if n == 0:
        return 0.0, np.zeros_like(logits)
    per = np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(per.sum() / n), (sigmoid(logits) - targets) / n


def mse(x, target):
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.shape != target.shape:
        raise DimensionMismatch(f"prediction {x.shape} vs target {target.shape}")
    if x.size == 0:
        return 0.0, np.zeros_like(x)
    diff = x - target
    return float((diff * diff).sum() / x.size), 2.0 * diff / x.size


class MLP:
    """Dense stack with ReLU between layers and a linear output."""

    def __init__(self, dims, rng, bias_init=0.0):
        if len(dims) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        self.layers = [Linear(a, b, rng, bias_init) for a, b in zip(dims[:-1], dims[1:])]

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += [(f"{i}.{name}", p, g) for name, p, g in layer.parameters()]
        return out

    def forward(self, x):
        caches = []
        for i, layer in enumerate(self.layers):
            x, c = layer.forward(x)
            if i < len(self.layers) - 1:
                x, mask = relu(x)
            else:
                mask = None
            caches.append((c, mask))
        return x, caches

    def backward(self, caches, dout):
        for layer, (c, mask) in zip(reversed(self.layers), reversed(_require(caches))):
            if mask is not None:
                dout = relu_backward(mask, dout)
            dout = layer.backward(c, dout)
        return dout


class Adam:
    """Adam with bias correction. Moment buffers are kept per parameter slot."""

    def __init__(self, learning_rate=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if len(params) != len(grads):
            raise DimensionMismatch("params and grads differ in length")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise DimensionMismatch(f"parameter {p.shape} vs gradient {g.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        state = {"t": self.t, "learning_rate": self.learning_rate, "beta1": self.beta1,
                 "beta2": self.beta2, "eps": self.eps}
        if self.m is not None:
            state["m"] = [m.copy() for m in self.m]
            state["v"] = [v.copy() for v in self.v]
        return state

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.learning_rate = float(state["learning_rate"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.m = [np.array(m) for m in state["m"]] if "m" in state else None
        self.v = [np.array(v) for v in state["v"]] if "v" in state else None
