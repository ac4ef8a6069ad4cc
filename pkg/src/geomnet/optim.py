"""Cross-entropy losses and the SGD-with-momentum update."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .layers import softmax

EPS = 1e-12


class LossValue(NamedTuple):
    mean_loss: float
    grad_logits: np.ndarray  # d(mean_loss)/d(logits), [N, K]


def binary_cross_entropy(a: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of binary labels ``y`` under predictions ``a``.

    Predictions are clamped to ``[EPS, 1 - EPS]`` before taking logs.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != y.shape:
        raise ShapeError(f"predictions {a.shape} and labels {y.shape} differ")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("binary labels must be 0 or 1")
    a = np.clip(a, EPS, 1.0 - EPS)
    terms = y * np.log(a) + (1.0 - y) * np.log(1.0 - a)
    return float(-T.reduce_sum(terms, axis=0) / a.size)


def softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> LossValue:
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError(f"logits must be [N>=1, K], got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DomainError(f"labels must lie in [0, {k})")
    p = softmax(logits)
    picked = np.maximum(p[np.arange(n), labels], EPS)
    mean_loss = float(-T.reduce_sum(np.log(picked), axis=0) / n)
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return LossValue(mean_loss, grad / n)


def sgd_momentum_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, mu: float) -> None:
    """Classical momentum, in place: ``v <- mu*v - lr*g``; ``w <- w + v``."""
    if not (param.shape == grad.shape == velocity.shape):
        raise ShapeError(f"shape mismatch: param {param.shape}, grad {grad.shape}, velocity {velocity.shape}")
    if lr < 0 or not 0 <= mu < 1:
        raise DomainError(f"need lr >= 0 and 0 <= mu < 1, got lr={lr}, mu={mu}")
    velocity *= mu
    velocity -= lr * grad
    param += velocity
