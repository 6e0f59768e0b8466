"""Inference-side pilot operations: steering bins, throttle windows, smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RangeError, StateError
from ..steering_bins import N_BINS, bin_to_u
from ..world import CameraFrame, SensorSnapshot
from .models import SENSOR_DIM, ThrottleNet
from .preprocess import PreprocessMode, area_resize, fit_to_model

PWM_MIN, PWM_MAX = 220, 420
PWM_SPAN = PWM_MAX - PWM_MIN


@dataclass(frozen=True)
class SteeringOutput:
    """Softmax bin probabilities with the argmax bin mapped to a command."""

    bins: np.ndarray
    chosen_bin: int
    steer_u: float

    def __post_init__(self):
        if self.bins.shape != (N_BINS,):
            raise ValueError(f"expected {N_BINS} bins, got {self.bins.shape}")
        if abs(float(self.bins.sum()) - 1.0) > 1e-9:
            raise ValueError("bin probabilities must sum to 1")
        if self.chosen_bin != int(np.argmax(self.bins)):
            raise ValueError("chosen_bin must be the argmax bin")
        if abs(self.steer_u - bin_to_u(self.chosen_bin)) > 1e-12:
            raise ValueError("steer_u must follow the bin mapping")


@dataclass(frozen=True)
class ThrottleWindow:
    """The last W (frame, sensor snapshot) pairs, oldest first."""

    frames: tuple[CameraFrame, ...]
    sensors: tuple[SensorSnapshot, ...]

    def __post_init__(self):
        if len(self.frames) != len(self.sensors):
            raise ValueError("frames and sensors must pair up")
        ts = [f.t for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("window timestamps must strictly increase")

    def __len__(self) -> int:
        return len(self.frames)


def sensor_vector(snap: SensorSnapshot) -> np.ndarray:
    """4 ultrasonic bits then 3 IMU axes."""
    return np.array(list(snap.ultra) + list(snap.accel), dtype=float)


def predict_steering(model, frame: CameraFrame,
                     mode: PreprocessMode = PreprocessMode()) -> SteeringOutput:
    """Preprocess, forward in infer mode, map the argmax bin to u in [-1, 1]."""
    h, w = model.input_shape[0], model.input_shape[1]
    prepared = fit_to_model(frame, mode, h, w)
    probs = model.predict(prepared.pixels)
    b = int(np.argmax(probs))
    return SteeringOutput(bins=probs, chosen_bin=b, steer_u=bin_to_u(b))


def normalized_to_pwm(y: float) -> int:
    """Scale [0, 1] throttle to the PWM range, clamped and rounded."""
    y = min(max(y, 0.0), 1.0)
    return PWM_MIN + int(round(y * PWM_SPAN))


def pwm_to_normalized(pwm: int) -> float:
    return (pwm - PWM_MIN) / PWM_SPAN


def predict_throttle(model: ThrottleNet, window: ThrottleWindow) -> int:
    """Forward the full window (recurrent state starts fresh) and scale to PWM."""
    if len(window) != model.cfg.window:
        raise StateError(
            f"throttle window has {len(window)} entries, model needs {model.cfg.window}")
    h, w = model.cfg.height, model.cfg.width
    frames = np.stack([
        f.pixels if f.pixels.shape[:2] == (h, w) else area_resize(f.pixels, h, w)
        for f in window.frames])
    sensors = np.stack([sensor_vector(s) for s in window.sensors])
    if sensors.shape[1] != SENSOR_DIM:
        raise StateError(f"sensor vectors must have {SENSOR_DIM} values")
    return normalized_to_pwm(model.predict_window(frames, sensors))


def smooth_throttle(prev_pwm: int, raw_pwm: int, max_delta: int = 20) -> int:
    """Clamp the new command to within max_delta of the previous one."""
    for name, val in (("prev_pwm", prev_pwm), ("raw_pwm", raw_pwm)):
        if not PWM_MIN <= val <= PWM_MAX:
            raise RangeError(f"{name} {val} outside [{PWM_MIN}, {PWM_MAX}]")
    return min(max(raw_pwm, prev_pwm - max_delta), prev_pwm + max_delta)


LIGHT_LABELS = ("red", "green")


def classify_light(model, frame: CameraFrame) -> tuple[str, float]:
    """Two-way softmax argmax with its probability; downscales when needed."""
    h, w = model.input_shape[0], model.input_shape[1]
    px = frame.pixels
    if px.shape[:2] != (h, w):
        px = area_resize(px, h, w)
    probs = model.predict(px)
    idx = int(np.argmax(probs))
    return LIGHT_LABELS[idx], float(probs[idx])
