"""Tub persistence: one JSON record plus one PNG frame per drive-loop tick.

Layout: manifest.json, record_%06d.json, frame_%06d.png. Writes are
temp-then-rename so a tub never holds a half-written record.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, IntegrityError, StorageError, ValidationError
from .steering_bins import N_BINS, one_hot, u_to_bin
from .world import CameraFrame

RECORD_KEYS = ("img", "steer_u", "steering_bin", "throttle_pwm", "ultra",
               "imu", "mode", "t", "seq")
MODES = ("manual", "autopilot")


@dataclass(frozen=True)
class TubRecord:
    img: str
    steer_u: float
    steering_bin: int
    throttle_pwm: int
    ultra: tuple[int, int, int, int]
    imu: tuple[float, float, float]
    mode: str
    t: float
    seq: int

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["ultra"] = list(self.ultra)
        d["imu"] = list(self.imu)
        return {k: d[k] for k in RECORD_KEYS}

    @classmethod
    def from_json_dict(cls, d: dict) -> "TubRecord":
        return cls(img=d["img"], steer_u=d["steer_u"],
                   steering_bin=d["steering_bin"], throttle_pwm=d["throttle_pwm"],
                   ultra=tuple(d["ultra"]), imu=tuple(d["imu"]),
                   mode=d["mode"], t=d["t"], seq=d["seq"])


def _validate_record(rec: TubRecord, pwm_min: int, pwm_max: int) -> None:
    if not -1.0 <= rec.steer_u <= 1.0:
        raise ValidationError(f"steer_u {rec.steer_u} outside [-1, 1]")
    if not 0 <= rec.steering_bin < N_BINS:
        raise ValidationError(f"steering_bin {rec.steering_bin} outside 0..{N_BINS - 1}")
    if rec.steering_bin != u_to_bin(rec.steer_u):
        raise ValidationError(
            f"steering_bin {rec.steering_bin} inconsistent with steer_u {rec.steer_u}")
    if not pwm_min <= rec.throttle_pwm <= pwm_max:
        raise ValidationError(
            f"throttle_pwm {rec.throttle_pwm} outside [{pwm_min}, {pwm_max}]")
    if len(rec.ultra) != 4 or any(u not in (0, 1) for u in rec.ultra):
        raise ValidationError(f"ultra must be 4 binary values, got {rec.ultra}")
    if len(rec.imu) != 3:
        raise ValidationError(f"imu must have 3 axes, got {rec.imu}")
    if rec.mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {rec.mode!r}")


def frame_to_png_bytes(frame: CameraFrame) -> bytes:
    import io
    arr = np.clip(np.round(frame.pixels * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_array(data: bytes) -> np.ndarray:
    import io
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=float) / 255.0


class Tub:
    """A drive recording directory; single writer, any number of readers."""

    def __init__(self, path, manifest: dict):
        self.path = Path(path)
        self.manifest = manifest
        self._next_seq = self.record_count()

    @classmethod
    def create(cls, path, resolution=(64, 64), channels: int = 3,
               preprocess: str = "rgb", config_hash: str = "", seed: int = 0,
               pwm_min: int = 220, pwm_max: int = 420) -> "Tub":
        p = Path(path)
        p.mkdir(parents=True, exist_ok=True)
        if list(p.glob("record_*.json")):
            raise StorageError(f"refusing to create a tub over existing records in {p}")
        manifest = {"resolution": list(resolution), "channels": channels,
                    "preprocess": preprocess, "config_hash": config_hash,
                    "seed": seed, "pwm_min": pwm_min, "pwm_max": pwm_max}
        _atomic_write(p / "manifest.json",
                      json.dumps(manifest, indent=2).encode())
        return cls(p, manifest)

    @classmethod
    def open(cls, path) -> "Tub":
        p = Path(path)
        mpath = p / "manifest.json"
        if not mpath.exists():
            raise IntegrityError(f"{p} has no manifest.json")
        manifest = json.loads(mpath.read_text())
        return cls(p, manifest)

    def record_count(self) -> int:
        return len(list(self.path.glob("record_*.json")))

    def append_record(self, frame: CameraFrame, steer_u: float, throttle_pwm: int,
                      ultra, imu, mode: str, t: float) -> int:
        """Write the frame PNG then the JSON record; returns the assigned seq."""
        seq = self._next_seq
        img_name = f"frame_{seq:06d}.png"
        rec = TubRecord(img=img_name, steer_u=float(steer_u),
                        steering_bin=u_to_bin(float(steer_u)),
                        throttle_pwm=int(throttle_pwm),
                        ultra=tuple(int(u) for u in ultra),
                        imu=tuple(float(v) for v in imu),
                        mode=mode, t=float(t), seq=seq)
        _validate_record(rec, self.manifest.get("pwm_min", 220),
                         self.manifest.get("pwm_max", 420))
        try:
            _atomic_write(self.path / img_name, frame_to_png_bytes(frame))
            _atomic_write(self.path / f"record_{seq:06d}.json",
                          json.dumps(rec.to_json_dict()).encode())
        except OSError as e:
            raise StorageError(f"failed to append record {seq}: {e}") from e
        self._next_seq += 1
        return seq

    def read_record(self, seq: int) -> TubRecord:
        rp = self.path / f"record_{seq:06d}.json"
        if not rp.exists():
            raise IntegrityError(f"record {seq} missing from {self.path}")
        return TubRecord.from_json_dict(json.loads(rp.read_text()))

    def read_frame(self, rec: TubRecord) -> np.ndarray:
        ip = self.path / rec.img
        if not ip.exists():
            raise IntegrityError(f"image for seq {rec.seq} missing: {rec.img}")
        return png_bytes_to_array(ip.read_bytes())

    def records(self) -> list[TubRecord]:
        return [self.read_record(i) for i in range(self.record_count())]


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# dataset assembly

def load_dataset(tub: Tub, target: str = "steering"):
    """Supervised pairs from a tub, ordered by seq.

    steering: (image, one-hot bin); throttle: windowed, see window_sequences.
    Synthetic generation covers the traffic-light model, so that target is
    refused here.
    """
    if target == "steering":
        out = []
        for rec in tub.records():
            out.append((tub.read_frame(rec), one_hot(rec.steering_bin)))
        return out
    if target == "throttle":
        return window_sequences(tub, w=5)
    if target == "traffic":
        raise DataError(
            "traffic datasets come from the synthetic light generator, not tubs")
    raise DataError(f"unknown dataset target {target!r}")


def window_sequences(tub: Tub, w: int):
    """Sliding windows of w consecutive records, stride 1.

    Each item is ((frames (w,H,W,3), sensors (w,7)), normalized final throttle).
    """
    if w < 2:
        raise DataError(f"window length must be >= 2, got {w}")
    recs = tub.records()
    n = len(recs)
    if n < w:
        raise DataError(f"tub has {n} records, fewer than window {w}")
    pwm_min = tub.manifest.get("pwm_min", 220)
    pwm_span = tub.manifest.get("pwm_max", 420) - pwm_min
    frames = [tub.read_frame(r) for r in recs]
    sensors = [list(r.ultra) + list(r.imu) for r in recs]
    out = []
    for i in range(n - w + 1):
        fwin = np.stack(frames[i:i + w])
        swin = np.array(sensors[i:i + w], dtype=float)
        y = (recs[i + w - 1].throttle_pwm - pwm_min) / pwm_span
        out.append(((fwin, swin), y))
    return out


def split_dataset(dataset, val_fraction: float, seed: int):
    """Seeded shuffle then split; returns (train, val), disjoint and exhaustive."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    data = list(dataset)
    n = len(data)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    if n >= 2:
        n_val = min(max(n_val, 1), n - 1)
    val_idx = set(order[:n_val].tolist())
    train = [data[i] for i in range(n) if i not in val_idx]
    val = [data[i] for i in range(n) if i in val_idx]
    return train, val


def windows_from_snapshots(frames, snapshots) -> tuple[np.ndarray, np.ndarray]:
    """Stack live (frame, snapshot) history into model inputs."""
    f = np.stack([fr.pixels for fr in frames])
    s = np.array([list(sn.ultra) + list(sn.accel) for sn in snapshots], dtype=float)
    return f, s
