"""Central-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from ..errors import NumericError, StateError
from .losses import LOSSES
from .model import flatten_params


def grad_check(model, x, target, loss: str = "mse", seed: int | None = None,
               h: float = 1e-5, atol: float = 1e-6) -> float:
    """Compare every parameter's analytic gradient against central differences.

    The model runs in train mode so batchnorm and dropout paths are
    exercised; dropout masks must be frozen by a seed. Returns the worst
    relative error across all parameters. Elements where both gradients sit
    below atol count as matching: central differences cannot resolve
    magnitudes under their cancellation noise floor (about 1e-11 here), and
    mathematically-zero gradients (a conv bias feeding batchnorm) would
    otherwise report pure noise.
    """
    if model.has_train_dropout() and seed is None:
        raise StateError("model contains train-mode dropout; a seed is required")
    loss_fn = LOSSES[loss]
    if not isinstance(x, tuple):  # composite models take tuple inputs
        x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)

    def eval_loss():
        y = model.forward(x, mode="train", seed=seed, commit_state=False)
        return loss_fn(y, target)

    _, dpred = eval_loss()
    grads, _ = model.backward(dpred)

    analytic = dict(flatten_params(grads))
    worst = 0.0
    for path, param in flatten_params(model.params):
        if path not in analytic:
            continue  # non-trainable state such as batchnorm running stats
        a_grad = analytic[path]
        if not np.all(np.isfinite(a_grad)):
            raise NumericError(f"non-finite analytic gradient at {path}")
        flat = param.reshape(-1)
        a_flat = a_grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = eval_loss()
            flat[i] = orig - h
            lm, _ = eval_loss()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError(f"non-finite loss while perturbing {path}")
            numeric = (lp - lm) / (2.0 * h)
            diff = abs(a_flat[i] - numeric)
            if diff == 0.0 or (abs(a_flat[i]) < atol and abs(numeric) < atol):
                continue
            rel = diff / max(abs(a_flat[i]), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
