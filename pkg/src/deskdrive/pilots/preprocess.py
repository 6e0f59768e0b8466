"""Frame preprocessing: area-average downscale, colorspace change, color masks."""
from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from ..errors import ConfigError
from ..world import CameraFrame

COLORSPACES = ("rgb", "hsv", "hsv_masked")


@dataclass(frozen=True)
class PreprocessMode:
    """How frames are transformed before they reach a model.

    hsv_masked boosts the value channel of pixels inside the yellow and
    white bands, which brightens lane lines.
    """

    colorspace: str = "rgb"
    out_size: tuple[int, int] | None = None  # (height, width)
    yellow_hue: tuple[float, float] = (0.10, 0.20)
    yellow_s_min: float = 0.25
    white_s_max: float = 0.15
    white_v_min: float = 0.75
    gain: float = 1.35

    def __post_init__(self):
        if self.colorspace not in COLORSPACES:
            raise ConfigError(f"unknown colorspace {self.colorspace!r}")
        lo, hi = self.yellow_hue
        if not (0.0 <= lo <= hi <= 1.0):
            raise ConfigError(f"yellow hue band {self.yellow_hue} outside [0, 1]")
        for v in (self.yellow_s_min, self.white_s_max, self.white_v_min):
            if not 0.0 <= v <= 1.0:
                raise ConfigError("mask thresholds must lie in [0, 1]")
        if self.gain < 1.0:
            raise ConfigError(f"gain must be >= 1, got {self.gain}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["out_size"] = list(self.out_size) if self.out_size else None
        d["yellow_hue"] = list(self.yellow_hue)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessMode":
        d = dict(d)
        if d.get("out_size"):
            d["out_size"] = tuple(d["out_size"])
        if "yellow_hue" in d:
            d["yellow_hue"] = tuple(d["yellow_hue"])
        return cls(**d)


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix of interval overlaps for exact area averaging."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for i in range(n_out):
        a, b = i * scale, (i + 1) * scale
        k0, k1 = int(np.floor(a)), min(int(np.ceil(b)), n_in)
        for k in range(k0, k1):
            w[i, k] = min(b, k + 1) - max(a, k)
    return w / scale


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter resize of an (H, W, C) image; exact for any size ratio."""
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img
    wh = _box_weights(h, out_h)
    ww = _box_weights(w, out_w)
    tmp = np.einsum("hj,jwc->hwc", wh, img)
    return np.einsum("wk,hkc->hwc", ww, tmp)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV, all channels in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    safe = np.where(delta > 0, delta, 1.0)
    h = np.select(
        [delta == 0, maxc == r, maxc == g],
        [np.zeros_like(maxc),
         ((g - b) / safe) % 6.0,
         (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    ) / 6.0
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def preprocess_frame(frame: CameraFrame, mode: PreprocessMode = PreprocessMode()) -> CameraFrame:
    """Downscale (area average) then apply the configured colorspace transform."""
    px = frame.pixels
    if mode.out_size is not None:
        px = area_resize(px, mode.out_size[0], mode.out_size[1])
    if mode.colorspace == "rgb":
        return CameraFrame(pixels=np.clip(px, 0.0, 1.0), t=frame.t)

    hsv = rgb_to_hsv(px)
    if mode.colorspace == "hsv_masked":
        h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
        yellow = (h >= mode.yellow_hue[0]) & (h <= mode.yellow_hue[1]) \
            & (s >= mode.yellow_s_min)
        white = (s <= mode.white_s_max) & (v >= mode.white_v_min)
        band = yellow | white
        hsv[..., 2] = np.where(band, np.minimum(v * mode.gain, 1.0), v)
    return CameraFrame(pixels=np.clip(hsv, 0.0, 1.0), t=frame.t)


def fit_to_model(frame: CameraFrame, mode: PreprocessMode, height: int, width: int) -> CameraFrame:
    """Preprocess with the output size pinned to a model's input resolution."""
    if mode.out_size != (height, width):
        mode = replace(mode, out_size=(height, width))
    return preprocess_frame(frame, mode)
