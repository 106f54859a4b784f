"""Loss functions. Each returns ``(value, gradient w.r.t. its first argument)``."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError

PROB_CLIP = 1e-7
DEFAULT_WEIGHTS = (1.5, 0.5, 1.8, 1.0)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _same(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: prediction {a.shape} vs target {b.shape}")


def bce(p: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy on probabilities clipped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same(p, y, "bce")
    n = p.size
    if n == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    grad = np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0) / n
    return float(loss), grad


def mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray | None = None):
    """Mean squared error over entries where ``mask`` is true.

    Masked entries (and NaN targets under them) add nothing to the value or
    the gradient; a fully masked input has loss 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _same(pred, target, "mse")
    m = np.ones(pred.shape, bool) if mask is None else np.asarray(mask, bool)
    _same(pred, m, "mse mask")
    n = int(m.sum())
    if n == 0:
        return 0.0, np.zeros_like(pred)
    diff = np.where(m, pred - np.where(m, target, 0.0), 0.0)
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def cross_entropy(logits: np.ndarray, classes: np.ndarray):
    """Softmax cross-entropy; the true-class probability is clipped before the log."""
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes, dtype=int)
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs classes {classes.shape}")
    n = len(classes)
    if n == 0:
        return 0.0, np.zeros_like(logits)
    p = softmax(logits)
    rows = np.arange(n)
    py = p[rows, classes]
    loss = -np.mean(np.log(np.clip(py, PROB_CLIP, 1.0 - PROB_CLIP)))
    grad = p.copy()
    grad[rows, classes] -= 1.0
    inside = (py > PROB_CLIP) & (py < 1.0 - PROB_CLIP)
    grad *= inside[:, None] / n
    return float(loss), grad


def weighted_sum(losses: Sequence[float], weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    if len(losses) != len(weights):
        raise ShapeError(f"{len(losses)} losses vs {len(weights)} weights")
    return float(sum(w * l for w, l in zip(weights, losses)))
