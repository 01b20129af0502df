"""Training losses (graph ops) and their plain-array metric twins."""

from __future__ import annotations

import numpy as np

from .autograd import ShapeError, Tensor, _result, mean, stable_sigmoid


def bce_with_logits(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Weighted binary cross-entropy computed from logits (stable form).

    loss = mean(w_i * (max(z,0) - z*y + log(1 + exp(-|z|)))); the per-sample
    weights follow the unnormalized convention, so doubling every weight
    doubles the loss.
    """
    z = logits.values
    y = np.asarray(targets, dtype=z.dtype)
    if z.shape != y.shape:
        raise ShapeError(f"bce: logits {z.shape} vs targets {y.shape}")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=z.dtype)
    if w.shape != y.shape:
        raise ShapeError(f"bce: weights {w.shape} vs targets {y.shape}")
    per_sample = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out_values = np.asarray((w * per_sample).mean(), dtype=z.dtype)
    n = y.size

    def backward(g):
        if logits.requires_grad:
            logits._accumulate(g * w * (stable_sigmoid(z) - y) / n)

    return _result(out_values, (logits,), backward)


def mse_loss(pred: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error as a graph op composition."""
    y = np.asarray(targets, dtype=pred.values.dtype)
    if pred.shape != y.shape:
        raise ShapeError(f"mse: predictions {pred.shape} vs targets {y.shape}")
    diff = pred - Tensor(y)
    return mean(diff * diff)


# plain-array versions for metrics / reporting -------------------------------

_BCE_EPS = 1e-12


def weighted_bce(probs, targets, weights=None) -> float:
    """BCE on probabilities (clamped away from 0/1 for finiteness)."""
    p = np.clip(np.asarray(probs, dtype=np.float64), _BCE_EPS, 1.0 - _BCE_EPS)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"bce: predictions {p.shape} vs targets {y.shape}")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(np.mean(-w * (y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def mse(preds, targets) -> float:
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"mse: predictions {p.shape} vs targets {y.shape}")
    return float(np.mean((p - y) ** 2))


def loss(kind: str, pred, target, weights=None) -> float:
    """Metric-space dispatcher over the two training objectives."""
    if kind == "weighted_bce":
        return weighted_bce(pred, target, weights)
    if kind == "mse":
        return mse(pred, target)
    raise ValueError(f"unknown loss kind {kind!r}")
