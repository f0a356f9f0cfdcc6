"""Elementwise activations and loss functions with analytic gradients."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ValidationError

LEAKY_SLOPE = 0.2

ACTIVATION_KINDS = ("relu", "leaky_relu", "sigmoid", "tanh")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x >= 0.0, x, LEAKY_SLOPE * x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ValidationError(f"unknown activation {kind!r}, want one of {ACTIVATION_KINDS}")


def activation_backward(x: np.ndarray, kind: str, dy: np.ndarray) -> np.ndarray:
    """Gradient through the activation evaluated at pre-activation x."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return dy * (x > 0.0)
    if kind == "leaky_relu":
        return dy * np.where(x >= 0.0, 1.0, LEAKY_SLOPE)
    if kind == "sigmoid":
        s = sigmoid(x)
        return dy * s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(x)
        return dy * (1.0 - t * t)
    raise ValidationError(f"unknown activation {kind!r}")


def sigmoid_ce_with_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean of max(l, 0) - l*t + log(1 + exp(-|l|)); stable for any logit magnitude."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise DimensionError(f"logits shape {logits.shape} != targets shape {targets.shape}")
    if targets.size and (targets.min() < 0.0 or targets.max() > 1.0):
        raise ValidationError("targets must lie in [0, 1]")
    per = np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    return float(per.mean())


def sigmoid_ce_with_logits_backward(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d(mean CE)/d(logits) = (sigmoid(l) - t) / N."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise DimensionError(f"logits shape {logits.shape} != targets shape {targets.shape}")
    return (sigmoid(logits) - targets) / logits.size


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean CE of [N, K] logits against integer labels [N]; returns (loss, d_logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"want [N, K] logits and [N] labels, got {logits.shape}, {labels.shape}")
    if labels.size == 0:
        return 0.0, np.zeros_like(logits)
    p = softmax(logits, axis=1)
    n = logits.shape[0]
    picked = np.clip(p[np.arange(n), labels], 1e-300, None)
    loss = float(-np.log(picked).mean())
    grad = p
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def smooth_l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean smooth-L1 (Huber, delta=1) and its gradient wrt pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    d = pred - target
    small = np.abs(d) < 1.0
    per = np.where(small, 0.5 * d * d, np.abs(d) - 0.5)
    grad = np.where(small, d, np.sign(d)) / pred.size
    return float(per.mean()), grad
