"""Kinematic RC-car model: steering law, PWM calibration, battery response.

All functions are pure; `step_vehicle` returns a new state and a new battery
rather than mutating its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import RangeError

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Normalize an angle to [-pi, pi)."""
    return (a + math.pi) % TWO_PI - math.pi


def clamp(x: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, x))


@dataclass(frozen=True)
class VehicleParams:
    """Static vehicle constants.

    d_w: wheelbase (m); K_s: steering ratio; K_slip: slip coefficient
    (s^2/m^2); the PWM endpoints calibrate the linear throttle map.
    """

    d_w: float = 0.325
    K_s: float = 15.0
    K_slip: float = 0.002
    max_steer_deg: float = 30.0
    pwm_min: int = 220
    pwm_max: int = 420
    v_max: float = 12.0
    tau_v: float = 0.6  # first-order speed response time constant, s

    def __post_init__(self) -> None:
        if self.d_w <= 0:
            raise ValueError(f"wheelbase must be positive, got {self.d_w}")
        if self.K_s <= 0:
            raise ValueError(f"steering ratio must be positive, got {self.K_s}")
        if not 0.0 < self.max_steer_deg < 90.0:
            raise ValueError(f"max_steer_deg must be in (0, 90), got {self.max_steer_deg}")
        if self.pwm_min >= self.pwm_max:
            raise ValueError(f"pwm_min {self.pwm_min} must be below pwm_max {self.pwm_max}")
        if self.v_max <= 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if self.tau_v <= 0:
            raise ValueError(f"tau_v must be positive, got {self.tau_v}")


@dataclass(frozen=True)
class VehicleState:
    """Pose and speed at simulation time t. Heading is normalized to [-pi, pi)."""

    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    v: float = 0.0
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.v < 0:
            raise ValueError(f"speed must be non-negative, got {self.v}")
        object.__setattr__(self, "heading", wrap_angle(self.heading))


class Chemistry(str, Enum):
    LIPO = "lipo"
    NIMH = "nimh"


# Default discharge curves, (state-of-charge, volts), ascending soc.
# LiPo holds voltage flat until a knee near empty; NiMH sags steadily.
LIPO_CURVE = ((0.0, 6.00), (0.05, 6.80), (0.2, 7.40), (1.0, 8.40))
NIMH_CURVE = ((0.0, 5.00), (0.2, 6.40), (0.5, 7.00), (0.8, 7.40), (1.0, 8.00))


@dataclass(frozen=True)
class Battery:
    """Battery pack with a chemistry-specific voltage curve.

    charge and capacity are ampere-seconds. draw_coeff_A scales current
    draw with commanded speed fraction.
    """

    chemistry: Chemistry
    capacity_As: float
    charge: float
    v_nominal: float
    curve: tuple[tuple[float, float], ...]
    draw_coeff_A: float = 20.0

    def __post_init__(self) -> None:
        if self.capacity_As <= 0:
            raise ValueError(f"capacity must be positive, got {self.capacity_As}")
        if not 0.0 <= self.charge <= self.capacity_As:
            raise ValueError(f"charge {self.charge} outside [0, {self.capacity_As}]")
        socs = [p[0] for p in self.curve]
        volts = [p[1] for p in self.curve]
        if socs != sorted(socs):
            raise ValueError("curve breakpoints must be sorted by state of charge")
        if any(v <= 0 for v in volts):
            raise ValueError("curve voltages must be strictly positive")

    @property
    def soc(self) -> float:
        return self.charge / self.capacity_As

    @classmethod
    def lipo(cls, capacity_As: float = 14400.0, charge: float | None = None,
             draw_coeff_A: float = 20.0) -> "Battery":
        """4 Ah 2S LiPo by default, full unless charge given."""
        return cls(Chemistry.LIPO, capacity_As,
                   capacity_As if charge is None else charge,
                   v_nominal=7.4, curve=LIPO_CURVE, draw_coeff_A=draw_coeff_A)

    @classmethod
    def nimh(cls, capacity_As: float = 6480.0, charge: float | None = None,
             draw_coeff_A: float = 20.0) -> "Battery":
        """1.8 Ah 6-cell NiMH by default."""
        return cls(Chemistry.NIMH, capacity_As,
                   capacity_As if charge is None else charge,
                   v_nominal=7.2, curve=NIMH_CURVE, draw_coeff_A=draw_coeff_A)


def pwm_to_velocity(pwm: int, params: VehicleParams = VehicleParams()) -> float:
    """Commanded speed for a throttle PWM; linear between the two calibration points."""
    if not params.pwm_min <= pwm <= params.pwm_max:
        raise RangeError(
            f"pwm {pwm} outside [{params.pwm_min}, {params.pwm_max}]")
    span = params.pwm_max - params.pwm_min
    return (pwm - params.pwm_min) * (params.v_max / span)


def velocity_to_pwm(v: float, params: VehicleParams = VehicleParams()) -> int:
    """Inverse of pwm_to_velocity, rounded half-up to the nearest PWM step."""
    if not 0.0 <= v <= params.v_max:
        raise RangeError(f"speed {v} outside [0, {params.v_max}]")
    span = params.pwm_max - params.pwm_min
    x = params.pwm_min + v * (span / params.v_max)
    # half-up; the 1e-9 nudge absorbs binary representation error of
    # decimal speeds so e.g. 6.03 m/s lands on the intended step
    return int(math.floor(x + 0.5 + 1e-9))


def ackerman_steering(u: float, v: float, params: VehicleParams = VehicleParams()) -> float:
    """Steering angle in degrees for a normalized command u in [-1, 1].

    theta = u * d_w * K_s * (1 + K_slip * v^2), clamped to the mechanical
    limit. Negative u steers left.
    """
    if not -1.0 <= u <= 1.0:
        raise ValueError(f"steering command {u} outside [-1, 1]")
    if v < 0:
        raise ValueError(f"speed must be non-negative, got {v}")
    theta = u * params.d_w * params.K_s * (1.0 + params.K_slip * v * v)
    return clamp(theta, -params.max_steer_deg, params.max_steer_deg)


def battery_voltage(b: Battery) -> float:
    """Terminal voltage from piecewise-linear interpolation of the curve at soc."""
    socs = np.array([p[0] for p in b.curve])
    volts = np.array([p[1] for p in b.curve])
    return float(np.interp(b.soc, socs, volts))


def step_vehicle(
    state: VehicleState,
    throttle_pwm: int,
    steer_u: float,
    dt: float,
    params: VehicleParams = VehicleParams(),
    battery: Battery | None = None,
) -> tuple[VehicleState, Battery]:
    """Advance the vehicle one step of dt seconds.

    Position integrates forward-Euler at the current speed; speed relaxes
    toward the battery-scaled commanded speed with time constant tau_v;
    the battery discharges in proportion to the commanded speed fraction.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if battery is None:
        battery = Battery.lipo()

    factor = clamp(battery_voltage(battery) / battery.v_nominal, 0.0, 1.0)
    commanded = pwm_to_velocity(throttle_pwm, params) * factor

    theta_rad = math.radians(ackerman_steering(steer_u, state.v, params))
    yaw_rate = (state.v / params.d_w) * math.tan(theta_rad)

    x = state.x + state.v * math.cos(state.heading) * dt
    y = state.y + state.v * math.sin(state.heading) * dt
    heading = wrap_angle(state.heading + yaw_rate * dt)
    v = state.v + (commanded - state.v) * (1.0 - math.exp(-dt / params.tau_v))
    v = max(0.0, v)

    draw = battery.draw_coeff_A * (commanded / params.v_max)
    charge = clamp(battery.charge - draw * dt, 0.0, battery.capacity_As)

    new_state = VehicleState(x=x, y=y, heading=heading, v=v, t=state.t + dt)
    return new_state, replace(battery, charge=charge)
