"""Sequential model container and the binary weight-file format.

Weight files carry an 8-byte magic, a JSON manifest (layer specs and tensor
shapes), then all tensors as little-endian float64 in manifest order.
Round-trips are bit-exact.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import ShapeError, StorageError
from .layers import (LayerSpec, init_layer_params, layer_backward,
                     layer_forward, output_shape)

MAGIC = b"ETGW0001"


def flatten_params(params, prefix: str = ""):
    """Deterministic (path, array) listing of a parameter tree."""
    out = []
    for i, layer in enumerate(params):
        for key in sorted(layer):
            val = layer[key]
            path = f"{prefix}{i}.{key}"
            if isinstance(val, list):
                out.extend(flatten_params(val, prefix=path + "."))
            else:
                out.append((path, val))
    return out


def _has_train_dropout(specs) -> bool:
    for s in specs:
        if s.kind == "dropout" and s.rate > 0:
            return True
        if s.kind == "time_distributed" and _has_train_dropout(s.layers):
            return True
    return False


class Model:
    """Ordered layer stack with its parameters and shape chain."""

    def __init__(self, specs, input_shape, seed: int = 0, params=None):
        self.specs = tuple(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        shapes = [self.input_shape]
        for spec in self.specs:
            shapes.append(output_shape(spec, shapes[-1]))
        self.layer_shapes = shapes
        self.output_shape = shapes[-1]
        if params is None:
            rng = np.random.default_rng(seed)
            params = [init_layer_params(s, i, rng)
                      for s, i in zip(self.specs, shapes)]
        self.params = params
        self._caches = None
        self._fwd_mode = None
        self._fwd_len = None

    # -- forward / backward -------------------------------------------------

    def forward(self, x, mode: str = "infer", seed: int | None = None,
                commit_state: bool | None = None, upto: int | None = None):
        """Batched forward pass; caches are retained for backward()."""
        x = np.asarray(x, dtype=float)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"expected input (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        if commit_state is None:
            commit_state = mode == "train"
        rng = np.random.default_rng(seed) if seed is not None else None
        n_layers = len(self.specs) if upto is None else upto
        caches = []
        for spec, p in zip(self.specs[:n_layers], self.params[:n_layers]):
            x, cache = layer_forward(spec, p, x, mode, rng)
            caches.append(cache)
            if commit_state and "state" in cache:
                p.update(cache["state"])
        self._caches = caches
        self._fwd_mode = mode
        self._fwd_len = n_layers
        return x

    def backward(self, grad_out):
        """Gradients for the most recent forward. Returns (param grads, input grad)."""
        if self._caches is None:
            raise ShapeError("backward() requires a prior forward()")
        g = np.asarray(grad_out, dtype=float)
        grads = [None] * len(self.specs)
        for i in reversed(range(self._fwd_len)):
            g, layer_grads = layer_backward(self.specs[i], self.params[i],
                                            self._caches[i], g)
            grads[i] = layer_grads
        for i in range(self._fwd_len, len(self.specs)):
            grads[i] = {}
        return grads, g

    def predict(self, sample, mode: str = "infer"):
        y = self.forward(np.asarray(sample, dtype=float)[None, ...], mode=mode)
        return y[0]

    @staticmethod
    def collate(inputs):
        return np.stack([np.asarray(x, dtype=float) for x in inputs])

    # -- introspection ------------------------------------------------------

    def param_count(self) -> int:
        return sum(int(np.prod(a.shape)) for _, a in flatten_params(self.params))

    def has_train_dropout(self) -> bool:
        return _has_train_dropout(self.specs)

    # -- persistence ----------------------------------------------------------

    def manifest(self) -> dict:
        return {"model": "sequential",
                "specs": [s.to_dict() for s in self.specs],
                "input_shape": list(self.input_shape)}

    def save(self, path) -> None:
        save_weights(path, self.manifest(), flatten_params(self.params))

    @classmethod
    def from_manifest(cls, manifest: dict, tensors: dict) -> "Model":
        specs = [LayerSpec.from_dict(d) for d in manifest["specs"]]
        model = cls(specs, manifest["input_shape"], seed=0)
        _assign_tensors(model.params, tensors)
        return model


def _assign_tensors(params, tensors: dict, prefix: str = "") -> None:
    for path, arr in flatten_params(params, prefix):
        if path not in tensors:
            raise StorageError(f"weight file is missing tensor {path}")
        loaded = tensors[path]
        if loaded.shape != arr.shape:
            raise StorageError(
                f"tensor {path} shape {loaded.shape} != expected {arr.shape}")
        arr[...] = loaded


def save_weights(path, manifest: dict, tensors) -> None:
    """Write magic + manifest + float64 blob atomically."""
    manifest = dict(manifest)
    manifest["tensors"] = [{"name": p, "shape": list(a.shape)} for p, a in tensors]
    mjson = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(mjson)))
            fh.write(mjson)
            for _, a in tensors:
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except OSError as e:
        raise StorageError(f"failed writing weights to {path}: {e}") from e


def load_weights(path):
    """Read a weight file. Returns (manifest, {name: array})."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != MAGIC:
                raise StorageError(f"{path} is not a weight file (bad magic {magic!r})")
            (mlen,) = struct.unpack("<Q", fh.read(8))
            manifest = json.loads(fh.read(mlen).decode())
            blob = fh.read()
    except OSError as e:
        raise StorageError(f"failed reading weights from {path}: {e}") from e
    tensors = {}
    off = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
        off += count * 8
    return manifest, tensors


def load_model(path):
    """Load any saved model; dispatches on the manifest's model field."""
    manifest, tensors = load_weights(path)
    if manifest["model"] == "sequential":
        return Model.from_manifest(manifest, tensors)
    if manifest["model"] == "throttle":
        from ..pilots.models import ThrottleNet
        return ThrottleNet.from_manifest(manifest, tensors)
    raise StorageError(f"unknown model type {manifest['model']!r}")
