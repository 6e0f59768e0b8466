"""Training losses; each returns (scalar loss, gradient wrt prediction)."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements; gradient 2*(pred - target)/n."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse needs at least one element")
    err = pred - target
    loss = float(np.mean(err * err))
    return loss, 2.0 * err / err.size


def cross_entropy_loss(pred: np.ndarray, target: np.ndarray, clip: float = 1e-12):
    """Cross entropy against one-hot rows of probabilities, averaged per row."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"cross entropy shapes differ: {pred.shape} vs {target.shape}")
    rows = pred.shape[0] if pred.ndim > 1 else 1
    p = np.clip(pred, clip, 1.0)
    loss = float(-(target * np.log(p)).sum() / rows)
    grad = -(target / p) / rows
    return loss, grad


LOSSES = {"mse": mse_loss, "cross_entropy": cross_entropy_loss}
