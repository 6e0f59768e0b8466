"""The three pilot model architectures.

Steering and traffic-light models are plain sequential CNNs. The throttle
model is a composite: a conv encoder applied per frame of the window, each
frame's features joined with its 7-value sensor vector, two stacked LSTM
layers, and a scalar head.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigError, ShapeError
from ..net import (Model, LayerSpec, batchnorm, conv2d, dense, dropout,
                   flatten, lstm, maxpool, relu, softmax)
from ..net.model import flatten_params, save_weights
from ..steering_bins import N_BINS

SENSOR_DIM = 7  # 4 ultrasonic bits + 3 IMU axes


@dataclass(frozen=True)
class SteeringModelConfig:
    height: int = 64
    width: int = 64
    blocks: int = 4
    filters: tuple[int, ...] = (8, 16, 32, 32)
    dense_units: int = 64
    dropout_rate: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["filters"] = tuple(d.get("filters", (8, 16, 32, 32)))
        return cls(**d)


@dataclass(frozen=True)
class TrafficModelConfig:
    height: int = 150
    width: int = 150
    blocks: int = 3
    filters: tuple[int, ...] = (8, 16, 32)
    dense_units: int = 64
    dropout_rate: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["filters"] = tuple(d.get("filters", (8, 16, 32)))
        return cls(**d)


@dataclass(frozen=True)
class ThrottleModelConfig:
    window: int = 5
    height: int = 64
    width: int = 64
    hidden: int = 32
    encoder_filters: tuple[int, int] = (8, 16)
    dropout_rate: float = 0.1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_filters"] = list(self.encoder_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["encoder_filters"] = tuple(d.get("encoder_filters", (8, 16)))
        return cls(**d)


def build_steering_model(cfg: SteeringModelConfig = SteeringModelConfig(),
                         seed: int = 0) -> Model:
    """Encoder of conv/batchnorm/relu/pool blocks, then a dense decoder to
    10 softmax steering bins."""
    if cfg.blocks > len(cfg.filters):
        raise ConfigError(f"{cfg.blocks} blocks need {cfg.blocks} filter counts")
    specs: list[LayerSpec] = []
    for i in range(cfg.blocks):
        specs += [conv2d(cfg.filters[i], kernel=3, stride=1),
                  batchnorm(), relu(), maxpool(2, 2)]
    specs += [flatten(), dense(cfg.dense_units), relu(),
              dropout(cfg.dropout_rate), dense(N_BINS), softmax()]
    try:
        return Model(specs, (cfg.height, cfg.width, 3), seed=seed)
    except ShapeError as e:
        raise ConfigError(
            f"resolution {cfg.height}x{cfg.width} too small for {cfg.blocks} pooling blocks: {e}") from e


def build_traffic_model(cfg: TrafficModelConfig = TrafficModelConfig(),
                        seed: int = 0) -> Model:
    """Stride-2 conv blocks repeated, then a dense head over {red, green}."""
    if cfg.blocks > len(cfg.filters):
        raise ConfigError(f"{cfg.blocks} blocks need {cfg.blocks} filter counts")
    specs: list[LayerSpec] = []
    for i in range(cfg.blocks):
        specs += [conv2d(cfg.filters[i], kernel=3, stride=2), relu(), maxpool(2, 2)]
    specs += [flatten(), dense(cfg.dense_units), relu(),
              dropout(cfg.dropout_rate), dense(2), softmax()]
    try:
        return Model(specs, (cfg.height, cfg.width, 3), seed=seed)
    except ShapeError as e:
        raise ConfigError(
            f"resolution {cfg.height}x{cfg.width} too small for {cfg.blocks} blocks: {e}") from e


def _child_seed(seed: int | None, idx: int) -> int | None:
    if seed is None:
        return None
    return int(np.random.SeedSequence([seed & (2 ** 62 - 1), idx]).generate_state(1)[0])


class ThrottleNet:
    """Windowed throttle regressor: per-frame conv encoder, sensor concat,
    two stacked LSTMs, scalar head emitting normalized throttle."""

    def __init__(self, cfg: ThrottleModelConfig = ThrottleModelConfig(), seed: int = 0):
        if cfg.window < 2:
            raise ConfigError(f"window must be >= 2, got {cfg.window}")
        self.cfg = cfg
        f1, f2 = cfg.encoder_filters
        enc = [conv2d(f1, kernel=3, stride=2), relu(), maxpool(2, 2),
               conv2d(f2, kernel=3, stride=2), relu(), maxpool(2, 2), flatten()]
        try:
            self.encoder = Model(enc, (cfg.height, cfg.width, 3),
                                 seed=_child_seed(seed, 0))
        except ShapeError as e:
            raise ConfigError(f"frame resolution too small for the encoder: {e}") from e
        feat = self.encoder.output_shape[0]
        core = [lstm(cfg.hidden, return_sequences=True),
                lstm(cfg.hidden, return_sequences=False)]
        self.core = Model(core, (cfg.window, feat + SENSOR_DIM),
                          seed=_child_seed(seed, 1))
        head = [dropout(cfg.dropout_rate), relu(), dense(1)]
        self.head = Model(head, (cfg.hidden,), seed=_child_seed(seed, 2))
        self.feat_dim = feat
        self._nt = None

    # parameter tree is the three sub-models' lists concatenated
    @property
    def params(self):
        return self.encoder.params + self.core.params + self.head.params

    @params.setter
    def params(self, tree):
        ne, nc = len(self.encoder.specs), len(self.core.specs)
        self.encoder.params = tree[:ne]
        self.core.params = tree[ne:ne + nc]
        self.head.params = tree[ne + nc:]

    def has_train_dropout(self) -> bool:
        return (self.encoder.has_train_dropout() or self.core.has_train_dropout()
                or self.head.has_train_dropout())

    def forward(self, x, mode: str = "infer", seed: int | None = None,
                commit_state: bool | None = None):
        frames, sensors = x
        frames = np.asarray(frames, dtype=float)
        sensors = np.asarray(sensors, dtype=float)
        w = self.cfg.window
        if frames.ndim != 5 or frames.shape[1] != w:
            raise ShapeError(
                f"expected frames (N, {w}, {self.cfg.height}, {self.cfg.width}, 3), got {frames.shape}")
        if sensors.shape != (frames.shape[0], w, SENSOR_DIM):
            raise ShapeError(
                f"expected sensors (N, {w}, {SENSOR_DIM}), got {sensors.shape}")
        n = frames.shape[0]
        feats = self.encoder.forward(
            frames.reshape((n * w,) + frames.shape[2:]), mode,
            _child_seed(seed, 0), commit_state)
        z = np.concatenate([feats.reshape(n, w, self.feat_dim), sensors], axis=2)
        hl = self.core.forward(z, mode, _child_seed(seed, 1), commit_state)
        y = self.head.forward(hl, mode, _child_seed(seed, 2), commit_state)
        self._nt = (n, w)
        return y

    def backward(self, grad_out):
        n, w = self._nt
        head_grads, dhl = self.head.backward(grad_out)
        core_grads, dz = self.core.backward(dhl)
        dfeat = dz[:, :, :self.feat_dim].reshape(n * w, self.feat_dim)
        enc_grads, dframes = self.encoder.backward(dfeat)
        grads = enc_grads + core_grads + head_grads
        return grads, (dframes.reshape((n, w) + dframes.shape[1:]),
                       dz[:, :, self.feat_dim:])

    def predict_window(self, frames, sensors) -> float:
        """Single window: frames (W, H, W, 3), sensors (W, 7) -> normalized throttle."""
        y = self.forward((np.asarray(frames, dtype=float)[None],
                          np.asarray(sensors, dtype=float)[None]), mode="infer")
        return float(y[0, 0])

    @staticmethod
    def collate(inputs):
        frames = np.stack([f for f, _ in inputs])
        sensors = np.stack([s for _, s in inputs])
        return frames, sensors

    def param_count(self) -> int:
        return sum(int(np.prod(a.shape)) for _, a in flatten_params(self.params))

    # -- persistence -----------------------------------------------------

    def manifest(self) -> dict:
        return {"model": "throttle",
                "config": self.cfg.to_dict(),
                "encoder_specs": [s.to_dict() for s in self.encoder.specs],
                "core_specs": [s.to_dict() for s in self.core.specs],
                "head_specs": [s.to_dict() for s in self.head.specs]}

    def save(self, path) -> None:
        tensors = (flatten_params(self.encoder.params, "encoder.")
                   + flatten_params(self.core.params, "core.")
                   + flatten_params(self.head.params, "head."))
        save_weights(path, self.manifest(), tensors)

    @classmethod
    def from_manifest(cls, manifest: dict, tensors: dict) -> "ThrottleNet":
        net = cls(ThrottleModelConfig.from_dict(manifest["config"]), seed=0)
        for model, prefix in ((net.encoder, "encoder."), (net.core, "core."),
                              (net.head, "head.")):
            for path, arr in flatten_params(model.params, prefix):
                if path not in tensors:
                    raise ShapeError(f"weight file is missing tensor {path}")
                arr[...] = tensors[path]
        return net
