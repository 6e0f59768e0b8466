"""Input-gradient saliency for the steering model, with line-overlap scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StateError
from .steering_bins import N_BINS
from .world import CameraFrame


@dataclass(frozen=True)
class Heatmap:
    """Per-pixel attention in [0, 1]; max is 1 unless the map is all zero."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ShapeError(f"heatmap must be 2-D, got {v.shape}")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape


def saliency_map(model, frame: CameraFrame, target: int | str = "chosen_bin") -> Heatmap:
    """Gradient of the target bin's pre-softmax score wrt input pixels.

    Absolute value, max over channels, normalized by the maximum. The model
    runs in infer mode so the map is deterministic.
    """
    px = frame.pixels
    if px.shape[:2] != tuple(model.input_shape[:2]):
        raise ShapeError(
            f"frame {px.shape[:2]} does not match model input {model.input_shape[:2]}")
    has_softmax = model.specs[-1].kind == "softmax"
    upto = len(model.specs) - 1 if has_softmax else len(model.specs)
    scores = model.forward(px[None, ...], mode="infer", upto=upto)
    if target == "chosen_bin":
        bin_idx = int(np.argmax(scores[0]))
    else:
        bin_idx = int(target)
        if not 0 <= bin_idx < N_BINS:
            raise ValueError(f"bin index {bin_idx} outside 0..{N_BINS - 1}")
    seed_grad = np.zeros_like(scores)
    seed_grad[0, bin_idx] = 1.0
    _, grad_input = model.backward(seed_grad)
    sal = np.abs(grad_input[0]).max(axis=-1)
    peak = sal.max()
    if peak > 0:
        sal = sal / peak
    return Heatmap(values=sal)


def overlay(frame: CameraFrame, heatmap: Heatmap, alpha: float = 0.6) -> CameraFrame:
    """Blend the heatmap into the red channel: out = (1-a*h)*pixel + a*h*red."""
    if heatmap.shape != frame.pixels.shape[:2]:
        raise ShapeError(
            f"heatmap {heatmap.shape} does not match frame {frame.pixels.shape[:2]}")
    h = heatmap.values[..., None]
    red = np.array([1.0, 0.0, 0.0])
    out = (1.0 - alpha * h) * frame.pixels + alpha * h * red
    return CameraFrame(pixels=np.clip(out, 0.0, 1.0), t=frame.t)


def dilate_mask(mask: np.ndarray, radius: int = 2) -> np.ndarray:
    """Binary dilation with a square structuring element of the given radius."""
    out = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(max(0, dy), min(h, h + dy))
            yd = slice(max(0, -dy), min(h, h - dy))
            xs = slice(max(0, dx), min(w, w + dx))
            xd = slice(max(0, -dx), min(w, w - dx))
            out[yd, xd] |= mask[ys, xs]
    return out


def line_overlap_score(heatmap: Heatmap, line_mask: np.ndarray) -> float:
    """Fraction of the top-decile heatmap pixels that land inside the mask."""
    if line_mask.shape != heatmap.shape:
        raise ShapeError(
            f"mask {line_mask.shape} does not match heatmap {heatmap.shape}")
    vals = heatmap.values.reshape(-1)
    if not np.any(vals > 0):
        raise StateError("line overlap is undefined for an all-zero heatmap")
    k = math.ceil(vals.size / 10)
    top_idx = np.argsort(-vals, kind="stable")[:k]
    inside = line_mask.reshape(-1)[top_idx]
    return float(inside.mean())


def heatmap_to_png_bytes(heatmap: Heatmap) -> bytes:
    import io
    from PIL import Image
    arr = np.clip(np.round(heatmap.values * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()
