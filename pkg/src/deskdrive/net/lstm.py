"""Gated LSTM cell: forward step and the backward-through-time pieces.

Gate order everywhere is input, forget, output, candidate. Weight matrices
act on the concatenation [x, h] and biases start at zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


def _sigmoid(z):
    # numerically safe on both tails
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LstmState:
    """Hidden and cell vectors of equal length."""

    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.h.shape != self.c.shape or self.h.ndim != 1:
            raise ShapeError(f"h and c must be equal-length vectors, got {self.h.shape} and {self.c.shape}")
        if not (np.isfinite(self.h).all() and np.isfinite(self.c).all()):
            raise ValueError("LSTM state must be finite")

    @classmethod
    def zeros(cls, units: int) -> "LstmState":
        return cls(np.zeros(units), np.zeros(units))


def cell_forward(x, h_prev, c_prev, params):
    """One gated step on a batch: x (N,D), h/c (N,U) -> (h, c, cache)."""
    z = np.concatenate([x, h_prev], axis=1)
    i = _sigmoid(z @ params["wi"] + params["bi"])
    f = _sigmoid(z @ params["wf"] + params["bf"])
    o = _sigmoid(z @ params["wo"] + params["bo"])
    g = np.tanh(z @ params["wg"] + params["bg"])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = (z, i, f, o, g, c_prev, tc, x.shape[1])
    return h, c, cache


def cell_backward(dh, dc_in, cache, params, grads):
    """Backward for one step. Accumulates weight grads into `grads` and
    returns (dx, dh_prev, dc_prev)."""
    z, i, f, o, g, c_prev, tc, d_in = cache
    do = dh * tc
    dc = dc_in + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f

    dzi = di * i * (1.0 - i)
    dzf = df * f * (1.0 - f)
    dzo = do * o * (1.0 - o)
    dzg = dg * (1.0 - g * g)

    grads["wi"] += z.T @ dzi
    grads["wf"] += z.T @ dzf
    grads["wo"] += z.T @ dzo
    grads["wg"] += z.T @ dzg
    grads["bi"] += dzi.sum(axis=0)
    grads["bf"] += dzf.sum(axis=0)
    grads["bo"] += dzo.sum(axis=0)
    grads["bg"] += dzg.sum(axis=0)

    dz = dzi @ params["wi"].T + dzf @ params["wf"].T \
        + dzo @ params["wo"].T + dzg @ params["wg"].T
    return dz[:, :d_in], dz[:, d_in:], dc_prev


def lstm_step(x, state: LstmState, weights: dict):
    """Single-vector step: x (D,) with state (U,) -> (h, new LstmState)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"input must be a vector, got shape {x.shape}")
    units = state.h.shape[0]
    expect = x.shape[0] + units
    if weights["wi"].shape != (expect, units):
        raise ShapeError(
            f"gate weights must be ({expect}, {units}), got {weights['wi'].shape}")
    h, c, _ = cell_forward(x[None, :], state.h[None, :], state.c[None, :], weights)
    new_state = LstmState(h[0].copy(), c[0].copy())
    return h[0], new_state
