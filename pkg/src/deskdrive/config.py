"""One configuration document for the whole stack, with strict loading."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .loop import LoopConfig
from .pilots import (ExpertConfig, PreprocessMode, SteeringModelConfig,
                     ThrottleModelConfig, TrafficModelConfig, TrainConfig)
from .vehicle import Battery, VehicleParams
from .world import CameraConfig, Obstacle, TrafficLight, World, build_track

ENV_CONFIG = "ETG_CONFIG"


def _strict_build(cls, d: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {where} config: {e}") from e


@dataclass(frozen=True)
class BatteryConfig:
    chemistry: str = "lipo"
    capacity_As: float | None = None
    charge: float | None = None
    draw_coeff_A: float = 20.0

    def build(self) -> Battery:
        if self.chemistry == "lipo":
            return Battery.lipo(self.capacity_As or 14400.0, self.charge,
                                self.draw_coeff_A)
        if self.chemistry == "nimh":
            return Battery.nimh(self.capacity_As or 6480.0, self.charge,
                                self.draw_coeff_A)
        raise ConfigError(f"unknown chemistry {self.chemistry!r}")


@dataclass(frozen=True)
class WorldConfig:
    track: str = "oval"
    points: tuple | None = None
    lane_width: float | None = None
    is_loop: bool = False
    line_style: tuple[str, str] = ("yellow", "white")
    obstacles: tuple = ()
    light: dict | None = None

    def build(self, seed: int = 0) -> World:
        spec = list(self.points) if self.points is not None else self.track
        track = build_track(spec, self.lane_width, self.is_loop,
                            tuple(self.line_style))
        light = None
        if self.light is not None:
            light = TrafficLight(**self.light)
        return World(track=track,
                     obstacles=tuple(Obstacle(*o) for o in self.obstacles),
                     light=light, rng_seed=seed)


# section name -> dataclass
_SECTIONS = {
    "vehicle": VehicleParams,
    "battery": BatteryConfig,
    "world": WorldConfig,
    "camera": CameraConfig,
    "loop": LoopConfig,
    "preprocess": PreprocessMode,
    "steering_model": SteeringModelConfig,
    "traffic_model": TrafficModelConfig,
    "throttle_model": ThrottleModelConfig,
    "expert": ExpertConfig,
    "train": TrainConfig,
}


@dataclass
class StackConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    preprocess: PreprocessMode = field(default_factory=PreprocessMode)
    steering_model: SteeringModelConfig = field(default_factory=SteeringModelConfig)
    traffic_model: TrafficModelConfig = field(default_factory=TrafficModelConfig)
    throttle_model: ThrottleModelConfig = field(default_factory=ThrottleModelConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "StackConfig":
        doc = dict(doc)
        known = set(_SECTIONS) | {"seed"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            if name not in doc:
                continue
            sub = doc[name]
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {name} must be an object")
            if name == "preprocess":
                kwargs[name] = PreprocessMode.from_dict(sub)
            elif name in ("steering_model", "traffic_model", "throttle_model"):
                kwargs[name] = section_cls.from_dict(sub)
            else:
                coerced = dict(sub)
                for key, val in coerced.items():
                    if isinstance(val, list) and key in ("line_style", "points",
                                                         "obstacles", "filters",
                                                         "encoder_filters"):
                        coerced[key] = tuple(tuple(v) if isinstance(v, list) else v
                                             for v in val)
                kwargs[name] = _strict_build(section_cls, coerced, name)
        if "seed" in doc:
            kwargs["seed"] = int(doc["seed"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path=None) -> "StackConfig":
        """Load from an explicit path, else $ETG_CONFIG, else defaults."""
        if path is None:
            path = os.environ.get(ENV_CONFIG)
        if path is None:
            return cls()
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        return cls.from_dict(json.loads(p.read_text()))

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            val = getattr(self, name)
            if hasattr(val, "to_dict"):
                out[name] = val.to_dict()
            else:
                out[name] = dataclasses.asdict(val)
        out["seed"] = self.seed
        return out

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def echo_to(self, out_dir) -> None:
        """Write the effective configuration next to a run's outputs."""
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        (p / "effective_config.json").write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
