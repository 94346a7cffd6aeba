"""Small differentiable models with closed-form per-sample gradients.

Parameters are always one flat ``float64`` vector; the layout per kind is:

* ``scalar-quadratic`` (dims ``[d]``): ``w``; loss ``||w - x||^2 / 2`` where each
  sample ``x`` is a target point.
* ``linear-regression`` (dims ``[p]``): ``[coef (p), bias]``; squared loss ``(x.w + b - y)^2 / 2``.
* ``logistic-regression`` (dims ``[p, K]``): ``[W (K x p) row-major, bias (K)]``;
  softmax cross-entropy.
* ``mlp-1-hidden`` (dims ``[p, h, K]``): ``[W1 (h x p), b1 (h), W2 (K x h), b2 (K)]``;
  tanh hidden layer, softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

MODEL_KINDS = ("scalar-quadratic", "linear-regression", "logistic-regression", "mlp-1-hidden")
_EXPECTED_DIMS = {"scalar-quadratic": 1, "linear-regression": 1, "logistic-regression": 2, "mlp-1-hidden": 3}
_LOSSES = {"scalar-quadratic": "squared", "linear-regression": "squared",
           "logistic-regression": "cross-entropy", "mlp-1-hidden": "cross-entropy"}


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    dims: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        dims = tuple(int(v) for v in self.dims)
        if len(dims) != _EXPECTED_DIMS[self.kind] or any(v < 1 for v in dims):
            raise ValueError(f"{self.kind} needs {_EXPECTED_DIMS[self.kind]} positive dims, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def loss(self) -> str:
        return _LOSSES[self.kind]

    @property
    def is_classifier(self) -> bool:
        return self.loss == "cross-entropy"

    @property
    def num_params(self) -> int:
        if self.kind == "scalar-quadratic":
            return self.dims[0]
        if self.kind == "linear-regression":
            return self.dims[0] + 1
        if self.kind == "logistic-regression":
            p, K = self.dims
            return K * p + K
        p, h, K = self.dims
        return h * p + h + K * h + K


def init_params(spec: ModelSpec, rng: np.random.Generator | None = None, scale: float = 0.0) -> np.ndarray:
    """Zeros, or ``N(0, scale^2)`` entries when ``scale > 0``."""
    if scale > 0:
        if rng is None:
            raise ValueError("random init needs an rng")
        return rng.normal(0.0, scale, spec.num_params)
    return np.zeros(spec.num_params)


def _unpack_mlp(spec, w):
    p, h, K = spec.dims
    i = 0
    W1 = w[i:i + h * p].reshape(h, p); i += h * p
    b1 = w[i:i + h]; i += h
    W2 = w[i:i + K * h].reshape(K, h); i += K * h
    b2 = w[i:i + K]
    return W1, b1, W2, b2


def _forward(spec: ModelSpec, w, X):
    if spec.kind == "linear-regression":
        return X @ w[:-1] + w[-1]
    if spec.kind == "logistic-regression":
        p, K = spec.dims
        return X @ w[:K * p].reshape(K, p).T + w[K * p:]
    W1, b1, W2, b2 = _unpack_mlp(spec, w)
    return np.tanh(X @ W1.T + b1) @ W2.T + b2


def _check_batch(spec, w, X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (spec.num_params,):
        raise ValueError(f"expected {spec.num_params} parameters, got {w.shape}")
    return w, X, (None if y is None else np.asarray(y))


def loss(spec: ModelSpec, w, X, y=None) -> float:
    """Mean loss over the batch."""
    w, X, y = _check_batch(spec, w, X, y)
    if spec.kind == "scalar-quadratic":
        return float(0.5 * np.mean(np.sum((w - X) ** 2, axis=1)))
    out = _forward(spec, w, X)
    if spec.kind == "linear-regression":
        return float(0.5 * np.mean((out - y) ** 2))
    logp = log_softmax(out, axis=1)
    return float(-np.mean(logp[np.arange(X.shape[0]), y.astype(int)]))


def per_sample_gradients(spec: ModelSpec, w, X, y=None) -> np.ndarray:
    """Gradient of each sample's loss, shape ``(n, num_params)``."""
    w, X, y = _check_batch(spec, w, X, y)
    n = X.shape[0]
    if spec.kind == "scalar-quadratic":
        return w[None, :] - X
    if spec.kind == "linear-regression":
        r = (_forward(spec, w, X) - y)[:, None]
        return np.hstack([r * X, r])
    if spec.kind == "logistic-regression":
        p, K = spec.dims
        delta = softmax(_forward(spec, w, X), axis=1)
        delta[np.arange(n), y.astype(int)] -= 1.0
        gW = delta[:, :, None] * X[:, None, :]
        return np.hstack([gW.reshape(n, K * p), delta])
    W1, b1, W2, b2 = _unpack_mlp(spec, w)
    H = np.tanh(X @ W1.T + b1)
    delta2 = softmax(H @ W2.T + b2, axis=1)
    delta2[np.arange(n), y.astype(int)] -= 1.0
    delta1 = (delta2 @ W2) * (1.0 - H**2)
    gW1 = (delta1[:, :, None] * X[:, None, :]).reshape(n, -1)
    gW2 = (delta2[:, :, None] * H[:, None, :]).reshape(n, -1)
    return np.hstack([gW1, delta1, gW2, delta2])


def gradient(spec: ModelSpec, w, X, y=None) -> np.ndarray:
    """Mean gradient over the batch."""
    return per_sample_gradients(spec, w, X, y).mean(axis=0)


def accuracy(spec: ModelSpec, w, X, y) -> float:
    """Classification accuracy; NaN for regression-type models."""
    if not spec.is_classifier:
        return float("nan")
    w, X, y = _check_batch(spec, w, X, y)
    return float(np.mean(np.argmax(_forward(spec, w, X), axis=1) == y))
