"""Bias-corrected Adam over nested parameter trees.

A parameter tree is a list of per-layer dicts whose leaves are float64
arrays; time-distributed layers nest another such list under "layers".
Gradient trees mirror the structure but may omit non-trainable leaves
(batchnorm running statistics), which pass through unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ShapeError


def tree_zeros_like(params):
    if isinstance(params, list):
        return [tree_zeros_like(p) for p in params]
    if isinstance(params, dict):
        return {k: tree_zeros_like(v) for k, v in params.items()}
    return np.zeros_like(params)


def tree_copy(params):
    if isinstance(params, list):
        return [tree_copy(p) for p in params]
    if isinstance(params, dict):
        return {k: tree_copy(v) for k, v in params.items()}
    return params.copy()


@dataclass(frozen=True)
class AdamState:
    m: list
    v: list
    step_count: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, alpha: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(m=tree_zeros_like(params), v=tree_zeros_like(params),
                     step_count=0, alpha=alpha, beta1=beta1, beta2=beta2,
                     epsilon=epsilon)


def adam_update(params, grads, state: AdamState):
    """One Adam step. Returns (new params, new state); inputs untouched."""
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    def walk(p, g, m, v):
        if isinstance(p, list):
            out = [walk(pi, gi, mi, vi) for pi, gi, mi, vi in zip(p, g, m, v)]
            return [o[0] for o in out], [o[1] for o in out], [o[2] for o in out]
        if isinstance(p, dict):
            np_, nm, nv = {}, {}, {}
            for key, pv in p.items():
                if g is not None and key in g:
                    np_[key], nm[key], nv[key] = walk(pv, g[key], m[key], v[key])
                else:
                    np_[key], nm[key], nv[key] = (
                        tree_copy(pv), tree_copy(m[key]), tree_copy(v[key]))
            return np_, nm, nv
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not mirror parameter {p.shape}")
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * (g * g)
        step = state.alpha * (m2 / bc1) / (np.sqrt(v2 / bc2) + state.epsilon)
        return p - step, m2, v2

    new_params, new_m, new_v = walk(params, grads, state.m, state.v)
    return new_params, replace(state, m=new_m, v=new_v, step_count=t)
