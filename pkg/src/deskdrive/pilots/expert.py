"""Deterministic pure-pursuit demonstrator standing in for a human driver."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..vehicle import VehicleParams, VehicleState, velocity_to_pwm, wrap_angle
from ..world import World


@dataclass(frozen=True)
class ExpertConfig:
    lookahead_m: float = 1.0
    v_cruise: float = 2.5
    a_lat_max: float = 0.8
    v_min: float = 0.8


def expert_driver(world: World, state: VehicleState,
                  cfg: ExpertConfig = ExpertConfig(),
                  params: VehicleParams = VehicleParams()) -> tuple[float, int]:
    """Pure pursuit toward a lookahead point; speed set by track curvature.

    Returns (steer_u, throttle_pwm); left targets yield negative commands.
    """
    track = world.track
    if track is None:
        raise ConfigError("expert driver needs a track centerline")

    pos = np.array([[state.x, state.y]])
    _, _, s, _ = track.project(pos)
    s_target = track.wrap_s(float(s[0]) + cfg.lookahead_m)
    target = track.point_at(s_target)

    dx, dy = target[0] - state.x, target[1] - state.y
    ld = math.hypot(dx, dy)
    alpha = wrap_angle(math.atan2(dy, dx) - state.heading)
    kappa = 2.0 * math.sin(alpha) / max(ld, 1e-6)
    theta_deg = math.degrees(math.atan(kappa * params.d_w))
    denom = params.d_w * params.K_s * (1.0 + params.K_slip * state.v * state.v)
    steer_u = min(max(theta_deg / denom, -1.0), 1.0)

    # slow down in proportion to upcoming centerline curvature
    phi0 = track.tangent_at(float(s[0]))
    phi1 = track.tangent_at(track.wrap_s(float(s[0]) + cfg.lookahead_m))
    track_kappa = abs(wrap_angle(phi1 - phi0)) / cfg.lookahead_m
    v_target = min(cfg.v_cruise, math.sqrt(cfg.a_lat_max / max(track_kappa, 1e-9)))
    v_target = min(max(v_target, cfg.v_min), params.v_max)
    return steer_u, velocity_to_pwm(v_target, params)
