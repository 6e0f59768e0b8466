"""Layer set: specs, shape algebra, forward and backward passes.

Arrays are batch-first float64. Images are (N, H, W, C); sequences are
(N, T, ...). Convolution is valid (no padding) cross-correlation.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError, StateError
from . import lstm as lstm_ops

KINDS = ("conv2d", "relu", "maxpool", "batchnorm", "dense", "dropout",
         "softmax", "flatten", "lstm", "time_distributed")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    stride: int = 1
    filters: int = 0
    units: int = 0
    rate: float = 0.0
    return_sequences: bool = False
    momentum: float = 0.9
    eps: float = 1e-5
    layers: tuple["LayerSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.kind == "conv2d" and (self.kernel < 1 or self.filters < 1):
            raise ValueError("conv2d needs kernel >= 1 and filters >= 1")
        if self.kind == "maxpool" and self.kernel < 1:
            raise ValueError("maxpool needs kernel >= 1")
        if self.kind == "dense" and self.units < 1:
            raise ValueError("dense needs units >= 1")
        if self.kind == "lstm" and self.units < 1:
            raise ValueError("lstm needs units >= 1")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.kind == "time_distributed" and not self.layers:
            raise ValueError("time_distributed needs wrapped layers")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items()}
        d["layers"] = [s.to_dict() for s in self.layers]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        d["layers"] = tuple(cls.from_dict(s) for s in d.get("layers", []))
        return cls(**d)


def conv2d(filters: int, kernel: int = 3, stride: int = 1) -> LayerSpec:
    return LayerSpec("conv2d", kernel=kernel, stride=stride, filters=filters)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def maxpool(kernel: int = 2, stride: int | None = None) -> LayerSpec:
    return LayerSpec("maxpool", kernel=kernel, stride=kernel if stride is None else stride)


def batchnorm(momentum: float = 0.9, eps: float = 1e-5) -> LayerSpec:
    return LayerSpec("batchnorm", momentum=momentum, eps=eps)


def dense(units: int) -> LayerSpec:
    return LayerSpec("dense", units=units)


def dropout(rate: float = 0.1) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def lstm(units: int, return_sequences: bool = False) -> LayerSpec:
    return LayerSpec("lstm", units=units, return_sequences=return_sequences)


def time_distributed(*layers: LayerSpec) -> LayerSpec:
    return LayerSpec("time_distributed", layers=tuple(layers))


# ---------------------------------------------------------------------------
# shape algebra

def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Sample (unbatched) output shape; raises ShapeError when incompatible."""
    k, s = spec.kernel, spec.stride
    if spec.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (H, W, C), got {in_shape}")
        h, w, _ = in_shape
        if h < k or w < k:
            raise ShapeError(f"conv2d kernel {k} exceeds input {h}x{w}")
        return ((h - k) // s + 1, (w - k) // s + 1, spec.filters)
    if spec.kind == "maxpool":
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (H, W, C), got {in_shape}")
        h, w, c = in_shape
        if h < k or w < k:
            raise ShapeError(f"pool window {k} exceeds input {h}x{w}")
        return ((h - k) // s + 1, (w - k) // s + 1, c)
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat vector, got {in_shape}")
        return (spec.units,)
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "lstm":
        if len(in_shape) != 2:
            raise ShapeError(f"lstm expects (T, D), got {in_shape}")
        t, _ = in_shape
        return (t, spec.units) if spec.return_sequences else (spec.units,)
    if spec.kind == "time_distributed":
        if len(in_shape) < 2:
            raise ShapeError(f"time_distributed expects (T, ...), got {in_shape}")
        inner = in_shape[1:]
        for child in spec.layers:
            inner = output_shape(child, inner)
        return (in_shape[0],) + inner
    # relu, batchnorm, dropout, softmax keep their input shape
    return tuple(in_shape)


TRAINABLE_KEYS = {
    "conv2d": ("w", "b"),
    "dense": ("w", "b"),
    "batchnorm": ("gamma", "beta"),
    "lstm": ("wi", "wf", "wo", "wg", "bi", "bf", "bo", "bg"),
}


def init_layer_params(spec: LayerSpec, in_shape: tuple[int, ...],
                      rng: np.random.Generator) -> dict:
    """Fan-in-scaled uniform weights, zero biases, identity batchnorm."""
    if spec.kind == "conv2d":
        k, c, f = spec.kernel, in_shape[2], spec.filters
        limit = np.sqrt(6.0 / (k * k * c))
        return {"w": rng.uniform(-limit, limit, (k, k, c, f)),
                "b": np.zeros(f)}
    if spec.kind == "dense":
        d = in_shape[0]
        limit = np.sqrt(6.0 / d)
        return {"w": rng.uniform(-limit, limit, (d, spec.units)),
                "b": np.zeros(spec.units)}
    if spec.kind == "batchnorm":
        c = in_shape[-1]
        return {"gamma": np.ones(c), "beta": np.zeros(c),
                "running_mean": np.zeros(c), "running_var": np.ones(c)}
    if spec.kind == "lstm":
        d, u = in_shape[1], spec.units
        limit = np.sqrt(6.0 / (d + u))
        p = {}
        for gate in ("wi", "wf", "wo", "wg"):
            p[gate] = rng.uniform(-limit, limit, (d + u, u))
        for gate in ("bi", "bf", "bo", "bg"):
            p[gate] = np.zeros(u)
        return p
    if spec.kind == "time_distributed":
        children = []
        inner = in_shape[1:]
        for child in spec.layers:
            children.append(init_layer_params(child, inner, rng))
            inner = output_shape(child, inner)
        return {"layers": children}
    return {}


# ---------------------------------------------------------------------------
# forward

def layer_forward(spec: LayerSpec, params: dict, x: np.ndarray,
                  mode: str = "infer", rng: np.random.Generator | None = None):
    """Run one layer on a batch. Returns (output, cache).

    Train-mode batchnorm puts its refreshed running stats in cache["state"];
    the caller decides whether to commit them.
    """
    kind = spec.kind

    if kind == "conv2d":
        return _conv_forward(spec, params, x)

    if kind == "relu":
        return np.maximum(x, 0.0), {"x": x}

    if kind == "maxpool":
        return _maxpool_forward(spec, x)

    if kind == "batchnorm":
        return _batchnorm_forward(spec, params, x, mode)

    if kind == "dense":
        if x.ndim != 2 or x.shape[1] != params["w"].shape[0]:
            raise ShapeError(
                f"dense expected (N, {params['w'].shape[0]}), got {x.shape}")
        return x @ params["w"] + params["b"], {"x": x}

    if kind == "dropout":
        if mode != "train" or spec.rate == 0.0:
            return x, {"mask": None}
        if rng is None:
            raise StateError("train-mode dropout requires a seeded generator")
        mask = rng.random(x.shape) >= spec.rate
        scale = 1.0 / (1.0 - spec.rate)
        return x * mask * scale, {"mask": mask, "scale": scale}

    if kind == "softmax":
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, {"y": y}

    if kind == "flatten":
        return x.reshape(x.shape[0], -1), {"shape": x.shape}

    if kind == "lstm":
        return _lstm_forward(spec, params, x)

    if kind == "time_distributed":
        return _td_forward(spec, params, x, mode, rng)

    raise ValueError(f"unknown layer kind {kind!r}")


def _conv_forward(spec, params, x):
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (N, H, W, C), got {x.shape}")
    n, h, w, c = x.shape
    k, s, f = spec.kernel, spec.stride, spec.filters
    if params["w"].shape != (k, k, c, f):
        raise ShapeError(
            f"conv2d weights expected {(k, k, c, f)}, got {params['w'].shape}")
    if h < k or w < k:
        raise ShapeError(f"conv2d kernel {k} exceeds input {h}x{w}")
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, k * k * c)
    wf = params["w"].reshape(k * k * c, f)
    y = (cols @ wf + params["b"]).reshape(n, oh, ow, f)
    return y, {"cols": cols, "x_shape": x.shape, "oh": oh, "ow": ow}


def _maxpool_forward(spec, x):
    if x.ndim != 4:
        raise ShapeError(f"maxpool expects (N, H, W, C), got {x.shape}")
    n, h, w, c = x.shape
    k, s = spec.kernel, spec.stride
    if h < k or w < k:
        raise ShapeError(f"pool window {k} exceeds input {h}x{w}")
    oh = (h - k) // s + 1
    ow = (w - k) // s + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    vf = win.reshape(n, oh, ow, c, k * k)
    idx = vf.argmax(axis=-1)
    y = np.take_along_axis(vf, idx[..., None], axis=-1)[..., 0]
    return y, {"idx": idx, "x_shape": x.shape}


_BN_SUM = {2: "nc->c", 4: "nhwc->c"}
_BN_SQ = {2: "nc,nc->c", 4: "nhwc,nhwc->c"}


def _batchnorm_forward(spec, params, x, mode):
    c = x.shape[-1]
    if params["gamma"].shape != (c,):
        raise ShapeError(
            f"batchnorm expected {params['gamma'].shape[0]} channels, got {c}")
    if x.ndim not in _BN_SUM:
        raise ShapeError(f"batchnorm expects (N, C) or (N, H, W, C), got {x.shape}")
    axes = tuple(range(x.ndim - 1))
    m_count = x.size // c
    if mode == "train":
        # single-pass channel reductions; var = E[x^2] - mu^2
        mu = np.einsum(_BN_SUM[x.ndim], x) / m_count
        var = np.einsum(_BN_SQ[x.ndim], x, x) / m_count - mu * mu
        np.maximum(var, 0.0, out=var)
        inv = 1.0 / np.sqrt(var + spec.eps)
        xhat = x - mu
        xhat *= inv
        m = spec.momentum
        state = {"running_mean": m * params["running_mean"] + (1 - m) * mu,
                 "running_var": m * params["running_var"] + (1 - m) * var}
        cache = {"train": True, "xhat": xhat, "inv": inv,
                 "m_count": m_count, "axes": axes, "state": state}
    else:
        inv = 1.0 / np.sqrt(params["running_var"] + spec.eps)
        xhat = x - params["running_mean"]
        xhat *= inv
        cache = {"train": False, "xhat": xhat, "inv": inv, "axes": axes}
    out = xhat * params["gamma"]
    out += params["beta"]
    return out, cache


def _lstm_forward(spec, params, x):
    if x.ndim != 3:
        raise ShapeError(f"lstm expects (N, T, D), got {x.shape}")
    n, t, d = x.shape
    u = spec.units
    if params["wi"].shape != (d + u, u):
        raise ShapeError(
            f"lstm weights expected {(d + u, u)}, got {params['wi'].shape}")
    h = np.zeros((n, u))
    c = np.zeros((n, u))
    hs = np.empty((n, t, u))
    steps = []
    for ti in range(t):
        h, c, cache = lstm_ops.cell_forward(x[:, ti, :], h, c, params)
        hs[:, ti, :] = h
        steps.append(cache)
    y = hs if spec.return_sequences else h
    return y, {"steps": steps, "x_shape": x.shape}


def _td_forward(spec, params, x, mode, rng):
    if x.ndim < 3:
        raise ShapeError(f"time_distributed expects (N, T, ...), got {x.shape}")
    n, t = x.shape[:2]
    z = x.reshape((n * t,) + x.shape[2:])
    caches = []
    for child, cp in zip(spec.layers, params["layers"]):
        z, cache = layer_forward(child, cp, z, mode, rng)
        caches.append(cache)
    y = z.reshape((n, t) + z.shape[1:])
    return y, {"children": caches, "n": n, "t": t}


# ---------------------------------------------------------------------------
# backward

def layer_backward(spec: LayerSpec, params: dict, cache: dict, grad_out: np.ndarray):
    """Exact gradients of layer_forward. Returns (grad_input, grad_params)."""
    kind = spec.kind

    if kind == "conv2d":
        return _conv_backward(spec, params, cache, grad_out)

    if kind == "relu":
        return grad_out * (cache["x"] > 0), {}

    if kind == "maxpool":
        return _maxpool_backward(spec, cache, grad_out), {}

    if kind == "batchnorm":
        return _batchnorm_backward(spec, params, cache, grad_out)

    if kind == "dense":
        x = cache["x"]
        return (grad_out @ params["w"].T,
                {"w": x.T @ grad_out, "b": grad_out.sum(axis=0)})

    if kind == "dropout":
        mask = cache["mask"]
        if mask is None:
            return grad_out, {}
        return grad_out * mask * cache["scale"], {}

    if kind == "softmax":
        y = cache["y"]
        dot = (grad_out * y).sum(axis=-1, keepdims=True)
        return y * (grad_out - dot), {}

    if kind == "flatten":
        return grad_out.reshape(cache["shape"]), {}

    if kind == "lstm":
        return _lstm_backward(spec, params, cache, grad_out)

    if kind == "time_distributed":
        return _td_backward(spec, params, cache, grad_out)

    raise ValueError(f"unknown layer kind {kind!r}")


def _conv_backward(spec, params, cache, grad_out):
    n, h, w, c = cache["x_shape"]
    k, s, f = spec.kernel, spec.stride, spec.filters
    oh, ow = cache["oh"], cache["ow"]
    g = grad_out.reshape(n * oh * ow, f)
    wf = params["w"].reshape(k * k * c, f)
    dw = (cache["cols"].T @ g).reshape(k, k, c, f)
    db = g.sum(axis=0)
    dcols = (g @ wf.T).reshape(n, oh, ow, k, k, c)
    dx = np.zeros((n, h, w, c))
    for di in range(k):
        for dj in range(k):
            dx[:, di:di + s * oh:s, dj:dj + s * ow:s, :] += dcols[:, :, :, di, dj, :]
    return dx, {"w": dw, "b": db}


def _maxpool_backward(spec, cache, grad_out):
    n, h, w, c = cache["x_shape"]
    k, s = spec.kernel, spec.stride
    idx = cache["idx"]
    oh, ow = idx.shape[1], idx.shape[2]
    if k == s:
        # non-overlapping windows tile the input: route each gradient to its
        # argmax slot with reshapes instead of a scatter
        gwin = np.zeros((n, oh, ow, c, k * k))
        np.put_along_axis(gwin, idx[..., None], grad_out[..., None], axis=-1)
        tiles = gwin.reshape(n, oh, ow, c, k, k).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros((n, h, w, c))
        dx[:, :oh * k, :ow * k, :] = tiles.reshape(n, oh * k, ow * k, c)
        return dx
    ni, oi, oj, ci = np.indices((n, oh, ow, c))
    rows = oi * s + idx // k
    cols = oj * s + idx % k
    dx = np.zeros((n, h, w, c))
    np.add.at(dx, (ni, rows, cols, ci), grad_out)
    return dx


def _batchnorm_backward(spec, params, cache, grad_out):
    xhat, inv, axes = cache["xhat"], cache["inv"], cache["axes"]
    nd = grad_out.ndim
    dgamma = np.einsum(_BN_SQ[nd], grad_out, xhat)
    dbeta = np.einsum(_BN_SUM[nd], grad_out)
    if not cache["train"]:
        return grad_out * (params["gamma"] * inv), {"gamma": dgamma, "beta": dbeta}
    m = cache["m_count"]
    g = params["gamma"]
    # dxhat = grad_out * gamma folded into the channel sums
    sum_dxhat = dbeta * g
    sum_dxhat_xhat = dgamma * g
    dx = grad_out * g
    dx -= xhat * (sum_dxhat_xhat / m)
    dx -= sum_dxhat / m
    dx *= inv
    return dx, {"gamma": dgamma, "beta": dbeta}


def _lstm_backward(spec, params, cache, grad_out):
    n, t, d = cache["x_shape"]
    u = spec.units
    grads = {key: np.zeros_like(params[key]) for key in TRAINABLE_KEYS["lstm"]}
    dx = np.empty((n, t, d))
    dh_next = np.zeros((n, u))
    dc_next = np.zeros((n, u))
    for ti in reversed(range(t)):
        if spec.return_sequences:
            dh = grad_out[:, ti, :] + dh_next
        else:
            dh = (grad_out + dh_next) if ti == t - 1 else dh_next
        dx_t, dh_next, dc_next = lstm_ops.cell_backward(
            dh, dc_next, cache["steps"][ti], params, grads)
        dx[:, ti, :] = dx_t
    return dx, grads


def _td_backward(spec, params, cache, grad_out):
    n, t = cache["n"], cache["t"]
    g = grad_out.reshape((n * t,) + grad_out.shape[2:])
    child_grads = [None] * len(spec.layers)
    for i in reversed(range(len(spec.layers))):
        g, child_grads[i] = layer_backward(
            spec.layers[i], params["layers"][i], cache["children"][i], g)
    return g.reshape((n, t) + g.shape[1:]), {"layers": child_grads}
