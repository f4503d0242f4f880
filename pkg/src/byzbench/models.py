"""Flat-parameter classification models with closed-form gradients.

Parameters live in a single float64 vector laid out row-major, weights before
biases, layer by layer. flatten/unflatten round-trips are bitwise exact, which
keeps simulated training deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


def _log_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (log-sum-exp per row, shifted logits) computed stably."""
    shift = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=1, keepdims=True)) + logits.max(axis=1, keepdims=True)
    return lse[:, 0], shift


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and the logit gradient (probs - onehot) / batch."""
    lse, shift = _log_softmax(logits)
    batch = logits.shape[0]
    loss = float(np.mean(lse - logits[np.arange(batch), y]))
    probs = np.exp(shift)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(batch), y] -= 1.0
    return loss, probs / batch


class SoftmaxRegression:
    """Multinomial logistic regression: (d + 1) * C parameters."""

    def __init__(self, dim: int, n_classes: int):
        self.dim = dim
        self.n_classes = n_classes

    @property
    def n_params(self) -> int:
        return (self.dim + 1) * self.n_classes

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        del rng  # convex objective: the zero start is canonical and deterministic
        return np.zeros(self.n_params)

    def unflatten(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if params.shape != (self.n_params,):
            raise DimensionMismatch(f"expected {self.n_params} params, got {params.shape}")
        cut = self.dim * self.n_classes
        return params[:cut].reshape(self.dim, self.n_classes), params[cut:]

    def flatten(self, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
        return np.concatenate([weights.ravel(), bias])

    def logits(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        weights, bias = self.unflatten(params)
        return features @ weights + bias

    def loss_and_gradient(self, params, features, y) -> tuple[float, np.ndarray]:
        weights, bias = self.unflatten(np.asarray(params, dtype=np.float64))
        loss, g_logits = _cross_entropy(features @ weights + bias, y)
        grad_w = features.T @ g_logits
        grad_b = g_logits.sum(axis=0)
        return loss, self.flatten(grad_w, grad_b)

    def predict(self, params, features) -> np.ndarray:
        return np.argmax(self.logits(params, features), axis=1)

    def accuracy(self, params, features, y) -> float:
        return float(np.mean(self.predict(params, features) == y))


class OneHiddenMLP:
    """One ReLU hidden layer: (d + 1) * h + (h + 1) * C parameters.

    The ReLU subgradient at zero is taken as zero.
    """

    def __init__(self, dim: int, hidden: int, n_classes: int):
        self.dim = dim
        self.hidden = hidden
        self.n_classes = n_classes

    @property
    def n_params(self) -> int:
        return (self.dim + 1) * self.hidden + (self.hidden + 1) * self.n_classes

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w1 = rng.standard_normal((self.dim, self.hidden)) * np.sqrt(2.0 / self.dim)
        w2 = rng.standard_normal((self.hidden, self.n_classes)) * np.sqrt(2.0 / self.hidden)
        return self.flatten(w1, np.zeros(self.hidden), w2, np.zeros(self.n_classes))

    def unflatten(self, params: np.ndarray):
        if params.shape != (self.n_params,):
            raise DimensionMismatch(f"expected {self.n_params} params, got {params.shape}")
        d, h, c = self.dim, self.hidden, self.n_classes
        parts = np.split(params, [d * h, d * h + h, d * h + h + h * c])
        return parts[0].reshape(d, h), parts[1], parts[2].reshape(h, c), parts[3]

    def flatten(self, w1, b1, w2, b2) -> np.ndarray:
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def logits(self, params: np.ndarray, features: np.ndarray) -> np.ndarray:
        w1, b1, w2, b2 = self.unflatten(params)
        hidden = np.maximum(features @ w1 + b1, 0.0)
        return hidden @ w2 + b2

    def loss_and_gradient(self, params, features, y) -> tuple[float, np.ndarray]:
        w1, b1, w2, b2 = self.unflatten(np.asarray(params, dtype=np.float64))
        pre = features @ w1 + b1
        hidden = np.maximum(pre, 0.0)
        loss, g_logits = _cross_entropy(hidden @ w2 + b2, y)
        grad_w2 = hidden.T @ g_logits
        grad_b2 = g_logits.sum(axis=0)
        g_hidden = (g_logits @ w2.T) * (pre > 0.0)
        grad_w1 = features.T @ g_hidden
        grad_b1 = g_hidden.sum(axis=0)
        return loss, self.flatten(grad_w1, grad_b1, grad_w2, grad_b2)

    def predict(self, params, features) -> np.ndarray:
        return np.argmax(self.logits(params, features), axis=1)

    def accuracy(self, params, features, y) -> float:
        return float(np.mean(self.predict(params, features) == y))


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "softmax"
    hidden: int = 32

    def __post_init__(self):
        if self.kind not in ("softmax", "mlp1"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")


def build_model(spec: ModelSpec, dim: int, n_classes: int):
    if spec.kind == "softmax":
        return SoftmaxRegression(dim, n_classes)
    return OneHiddenMLP(dim, spec.hidden, n_classes)
