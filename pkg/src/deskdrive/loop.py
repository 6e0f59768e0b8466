"""The orchestrator: a dual-rate drive loop with recording, races, teleop.

In simulated time the loop and the sensor poller are interleaved by one
deterministic scheduler (event times compared exactly in integers, ties go
to the sensor). In wall-clock mode the poller runs on its own thread and
the loop paces itself with sleeps.
"""
from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .errors import ConfigError
from .pilots import (ExpertConfig, PreprocessMode, ThrottleWindow,
                     classify_light, expert_driver, normalized_to_pwm,
                     predict_steering, predict_throttle, smooth_throttle)
from .steering_bins import bin_to_u, u_to_bin
from .tub import Tub
from .vehicle import Battery, VehicleParams, VehicleState, battery_voltage, step_vehicle
from .world import (CameraConfig, SensorSnapshot, World, lane_offset,
                    render_camera, sample_imu, sample_ultrasonic,
                    synth_traffic_light, ULTRA_SIDES)

RACE_KINDS = ("none", "circuit", "drag")


@dataclass(frozen=True)
class LoopConfig:
    loop_hz: float = 25.0
    sensor_hz: float = 12.0
    mode: str = "manual"  # manual | autopilot
    record: bool = False
    race: str = "none"  # none | circuit | drag
    laps: int = 1
    green_at_s: float = 1.0
    green_debounce: int = 3
    seed: int = 0
    window: int = 5
    duration_s: float = 10.0
    realtime: bool = False
    cruise_pwm: int = 270
    quantize_steer: bool = True  # actuate bin centers so demos match autopilot
    allow_any_rate: bool = False
    imu_sigma: float = 0.05
    port: int = 8887

    def __post_init__(self):
        if self.mode not in ("manual", "autopilot"):
            raise ConfigError(f"mode must be manual or autopilot, got {self.mode!r}")
        if self.race not in RACE_KINDS:
            raise ConfigError(f"race must be one of {RACE_KINDS}, got {self.race!r}")
        if not self.allow_any_rate and not 20.0 <= self.loop_hz <= 30.0:
            raise ConfigError(
                f"loop_hz {self.loop_hz} outside [20, 30]; pass allow_any_rate to override")
        if self.sensor_hz <= 0 or self.sensor_hz > self.loop_hz:
            raise ConfigError(
                f"sensor_hz {self.sensor_hz} must be in (0, loop_hz]")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")


# ---------------------------------------------------------------------------
# sensor mailbox and poller

_SENTINEL = SensorSnapshot(ultra=(0, 0, 0, 0), accel=(0.0, 0.0, 0.0),
                           t=float("-inf"), seq=-1)


class SensorMailbox:
    """Single-slot latest-value mailbox; reads never block."""

    def __init__(self):
        self._lock = threading.Lock()
        self._snap = _SENTINEL

    def publish(self, snap: SensorSnapshot) -> None:
        with self._lock:
            if snap.seq <= self._snap.seq:
                raise ValueError("snapshot seq must strictly increase")
            self._snap = snap

    def read(self, now: float) -> tuple[SensorSnapshot, float]:
        """Latest snapshot and its staleness in seconds (inf before the first)."""
        with self._lock:
            snap = self._snap
        return snap, now - snap.t


class SensorPoller:
    """Samples ultrasonics and IMU into the mailbox at a fixed rate."""

    def __init__(self, world: World, mailbox: SensorMailbox, hz: float,
                 rng: np.random.Generator, sigma: float):
        if hz <= 0:
            raise ConfigError("sensor rate must be positive")
        self.world = world
        self.mailbox = mailbox
        self.period = 1.0 / hz
        self.rng = rng
        self.sigma = sigma
        self._prev_state: VehicleState | None = None
        self._seq = 0

    def poll(self, state: VehicleState, t: float) -> SensorSnapshot:
        ultra = tuple(sample_ultrasonic(self.world, state, side)
                      for side in ULTRA_SIDES)
        prev = self._prev_state if self._prev_state is not None else state
        accel = sample_imu(prev, state, self.period, self.rng, self.sigma)
        snap = SensorSnapshot(ultra=ultra, accel=accel, t=t, seq=self._seq)
        self.mailbox.publish(snap)
        self._prev_state = state
        self._seq += 1
        return snap


# ---------------------------------------------------------------------------
# race supervisor

@dataclass(frozen=True)
class RaceState:
    phase: str = "waiting_for_green"  # waiting_for_green | racing | finished
    laps_done: int = 0
    start_t: float | None = None
    finish_t: float | None = None
    green_streak: int = 0


def race_supervisor(rs: RaceState, light_label: str | None, lap_crossing: bool,
                    cfg: LoopConfig, t: float = 0.0) -> tuple[RaceState, int | None]:
    """Advance the race state machine; returns (state, forced PWM or None).

    Starts only after green_debounce consecutive green classifications;
    while waiting or after finishing the throttle is pinned to minimum.
    """
    if cfg.race == "none":
        return rs, None
    if rs.phase == "waiting_for_green":
        streak = rs.green_streak + 1 if light_label == "green" else 0
        if streak >= cfg.green_debounce:
            return replace(rs, phase="racing", green_streak=streak, start_t=t), None
        return replace(rs, green_streak=streak), 220
    if rs.phase == "racing":
        if lap_crossing:
            laps = rs.laps_done + 1
            if cfg.race == "circuit" and laps >= cfg.laps:
                return replace(rs, phase="finished", laps_done=laps, finish_t=t), 220
            if cfg.race == "drag":
                return replace(rs, phase="finished", laps_done=laps, finish_t=t), 220
            return replace(rs, laps_done=laps), None
        return rs, None
    return rs, 220  # finished


# ---------------------------------------------------------------------------
# run summary

@dataclass
class RunSummary:
    ticks: int = 0
    sim_seconds: float = 0.0
    achieved_hz: float = 0.0
    sensor_snapshots: int = 0
    records_written: int = 0
    laps: list[float] = field(default_factory=list)
    departures: int = 0
    collisions: int = 0
    max_abs_offset: float = 0.0
    pwm_deltas_max: int = 0
    final_battery_v: float = 0.0
    race_phase: str = "none"
    race_start_t: float | None = None
    race_finish_t: float | None = None
    mode: str = "manual"
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


VEHICLE_RADIUS = 0.12


def start_state_on_track(world: World, offset_m: float = 0.0,
                         s0: float = 0.0) -> VehicleState:
    p = world.track.point_at(s0)
    heading = world.track.tangent_at(s0)
    left = np.array([math.sin(heading), -math.cos(heading)])
    pos = p + offset_m * left
    return VehicleState(x=float(pos[0]), y=float(pos[1]), heading=heading, v=0.0, t=0.0)


class _ManualControls:
    """Last-writer-wins manual control state fed by teleop or scripts."""

    def __init__(self, record: bool):
        self.steer_u = 0.0
        self.throttle_norm = 0.0
        self.record = record
        self.mode_request: str | None = None

    def apply(self, msg: dict) -> None:
        if msg.get("type") == "control":
            self.steer_u = min(max(float(msg["steer"]), -1.0), 1.0)
            self.throttle_norm = min(max(float(msg["throttle"]), 0.0), 1.0)
            if "record" in msg:
                self.record = bool(msg["record"])
        elif msg.get("type") == "mode":
            self.mode_request = msg["mode"]

    def safe_stop(self) -> None:
        self.steer_u = 0.0
        self.throttle_norm = 0.0


def run_loop(cfg: LoopConfig, world: World, *,
             steering_model=None, throttle_model=None, traffic_model=None,
             preprocess: PreprocessMode | None = None,
             tub: Tub | None = None, server=None, expert: bool = False,
             expert_cfg: ExpertConfig | None = None,
             vehicle_params: VehicleParams | None = None,
             battery: Battery | None = None,
             cam_cfg: CameraConfig | None = None,
             start_state: VehicleState | None = None,
             control_source=None, on_tick=None) -> RunSummary:
    """Run the drive loop for cfg.duration_s and return a summary.

    Simulated-time runs (realtime=False) are bit-deterministic for a fixed
    (cfg, world). control_source, when given, is called once per tick with
    (tick_index, t) and may return a list of control messages.
    """
    params = vehicle_params or VehicleParams()
    batt = battery or Battery.lipo()
    cam = cam_cfg or CameraConfig()
    prep = preprocess or PreprocessMode()
    ecfg = expert_cfg or ExpertConfig()

    if cfg.mode == "autopilot":
        if steering_model is None:
            raise ConfigError("autopilot requires a steering model")
        if throttle_model is not None and throttle_model.cfg.window != cfg.window:
            raise ConfigError(
                f"throttle model window {throttle_model.cfg.window} != loop window {cfg.window}")
    if cfg.race != "none" and world.light is None:
        raise ConfigError("race mode needs a traffic light in the world")

    state = start_state or start_state_on_track(world)
    mailbox = SensorMailbox()
    imu_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed & (2 ** 62 - 1), 0x101]))
    light_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed & (2 ** 62 - 1), 0x11647]))
    poller = SensorPoller(world, mailbox, cfg.sensor_hz, imu_rng, cfg.imu_sigma)

    manual = _ManualControls(record=cfg.record)
    mode = cfg.mode
    race = RaceState() if cfg.race != "none" else RaceState(phase="none")
    prev_pwm = 220
    window: deque = deque(maxlen=cfg.window)
    summary = RunSummary(mode=mode, seed=cfg.seed)
    max_delta = 0

    s_prev = None
    lap_marks: list[float] = []
    departed_prev = False
    collided_prev = False

    loop_period = 1.0 / cfg.loop_hz
    n_ticks_total = 0
    wall_start = time.perf_counter()

    stop_event = threading.Event()
    poller_thread = None
    state_ref = {"state": state, "t": 0.0}

    if cfg.realtime:
        def _poll_forever():
            m = 0
            while not stop_event.is_set():
                target = wall_start + m / cfg.sensor_hz
                delay = target - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                if stop_event.is_set():
                    break
                poller.poll(state_ref["state"], m / cfg.sensor_hz)
                m += 1

        poller_thread = threading.Thread(target=_poll_forever, daemon=True)
        poller_thread.start()

    def do_tick(k: int, t: float) -> None:
        nonlocal state, batt, mode, race, prev_pwm, s_prev, max_delta
        nonlocal departed_prev, collided_prev, n_ticks_total

        # scripted light change
        if cfg.race != "none" and world.light is not None \
                and world.light.state == "red" and t >= cfg.green_at_s:
            world.light = replace(world.light, state="green")

        frame = render_camera(world, state, cam)
        snap, staleness = mailbox.read(t)

        # drain external controls
        msgs = []
        if control_source is not None:
            msgs.extend(control_source(k, t) or [])
        if server is not None:
            drained, disconnected = server.poll_controls()
            msgs.extend(drained)
            if disconnected and mode == "manual":
                manual.safe_stop()
        for msg in msgs:
            manual.apply(msg)
        if manual.mode_request in ("manual", "autopilot"):
            if manual.mode_request == "autopilot" and steering_model is None:
                pass  # cannot honor without a model; stay in manual
            else:
                mode = manual.mode_request
            manual.mode_request = None

        # steering / raw throttle
        model_raw_pwm = None
        if mode == "autopilot":
            steer = predict_steering(steering_model, frame, prep).steer_u
            if throttle_model is not None and len(window) == cfg.window:
                frames = tuple(f for f, _ in window)
                snaps = tuple(s for _, s in window)
                raw_pwm = predict_throttle(throttle_model, ThrottleWindow(frames, snaps))
                model_raw_pwm = raw_pwm
            else:
                raw_pwm = cfg.cruise_pwm
        elif expert:
            steer, raw_pwm = expert_driver(world, state, ecfg, params)
            if cfg.quantize_steer:
                steer = bin_to_u(u_to_bin(steer))
        else:
            steer = manual.steer_u
            raw_pwm = normalized_to_pwm(manual.throttle_norm)

        # race gating
        light_label = None
        if cfg.race != "none" and race.phase == "waiting_for_green":
            if traffic_model is not None:
                light_frame, _ = synth_traffic_light(light_rng, world.light.state)
                light_label, _ = classify_light(traffic_model, light_frame)
            else:
                light_label = world.light.state
        lap_crossing = False
        if s_prev is not None:
            _, _, s_arr, _ = world.track.project(np.array([[state.x, state.y]]))
            s_now = float(s_arr[0])
            if world.track.is_loop:
                l = world.track.length
                lap_crossing = s_prev > 0.75 * l and s_now < 0.25 * l
            else:
                lap_crossing = s_now >= world.track.length - 1e-6 > s_prev
            s_prev = s_now
        else:
            _, _, s_arr, _ = world.track.project(np.array([[state.x, state.y]]))
            s_prev = float(s_arr[0])

        race, gate = race_supervisor(race, light_label, lap_crossing, cfg, t)
        if lap_crossing and (cfg.race == "none" or race.phase in ("racing", "finished")):
            lap_marks.append(t)

        if gate is not None:
            if mode == "autopilot":
                pwm = smooth_throttle(prev_pwm, gate)
            else:
                pwm = gate
        elif mode == "autopilot":
            pwm = smooth_throttle(prev_pwm, raw_pwm)
        else:
            pwm = raw_pwm
        max_delta = max(max_delta, abs(pwm - prev_pwm))
        prev_pwm = pwm

        # record before stepping so the record matches the frame's pose
        recording = manual.record if mode == "manual" and not expert else cfg.record
        if tub is not None and recording:
            tub.append_record(frame, steer, pwm, snap.ultra, snap.accel,
                              "autopilot" if mode == "autopilot" else "manual", t)
            summary.records_written += 1

        window.append((frame, snap))

        prev_state = state
        state, batt = step_vehicle(state, pwm, steer, loop_period, params, batt)
        state_ref["state"] = state
        state_ref["t"] = state.t

        off = lane_offset(world, state)
        summary.max_abs_offset = max(summary.max_abs_offset, abs(off))
        departed = abs(off) > world.track.lane_width / 2
        if departed and not departed_prev:
            summary.departures += 1
        departed_prev = departed
        collided = any(math.hypot(state.x - ob.x, state.y - ob.y) <= ob.r + VEHICLE_RADIUS
                       for ob in world.obstacles)
        if collided and not collided_prev:
            summary.collisions += 1
        collided_prev = collided

        n_ticks_total += 1

        if server is not None:
            server.broadcast_telemetry(
                frame=frame, seq=k, t=t, steer_u=steer, throttle_pwm=pwm,
                snap=snap, mode=mode, race_phase=race.phase,
                fps=cfg.loop_hz if not cfg.realtime else
                    (n_ticks_total / max(time.perf_counter() - wall_start, 1e-9)),
                battery_v=battery_voltage(batt))
        if on_tick is not None:
            on_tick({"k": k, "t": t, "state": state, "frame": frame,
                     "snapshot": snap, "staleness": staleness, "pwm": pwm,
                     "steer": steer, "race": race, "offset": off,
                     "prev_state": prev_state, "raw_pwm": model_raw_pwm})

    # -- schedulers ---------------------------------------------------------
    k = m = 0
    hz_i = int(round(cfg.loop_hz * 1000))
    shz_i = int(round(cfg.sensor_hz * 1000))
    dur = cfg.duration_s
    if cfg.realtime:
        while k / cfg.loop_hz < dur:
            target = wall_start + k / cfg.loop_hz
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            do_tick(k, k / cfg.loop_hz)
            k += 1
        stop_event.set()
        if poller_thread is not None:
            poller_thread.join(timeout=2.0)
        summary.sensor_snapshots = poller._seq
    else:
        while True:
            tick_due = k / cfg.loop_hz < dur
            sensor_due = m / cfg.sensor_hz < dur
            if not tick_due and not sensor_due:
                break
            # exact integer comparison of m/sensor_hz <= k/loop_hz
            if sensor_due and (not tick_due or m * hz_i <= k * shz_i):
                poller.poll(state, m / cfg.sensor_hz)
                m += 1
            else:
                do_tick(k, k / cfg.loop_hz)
                k += 1
        summary.sensor_snapshots = m

    elapsed = time.perf_counter() - wall_start
    summary.ticks = k
    summary.sim_seconds = k / cfg.loop_hz
    summary.achieved_hz = (k / elapsed) if cfg.realtime else cfg.loop_hz
    summary.final_battery_v = battery_voltage(batt)
    summary.pwm_deltas_max = max_delta
    summary.race_phase = race.phase
    summary.race_start_t = race.start_t
    summary.race_finish_t = race.finish_t
    if lap_marks:
        starts = [race.start_t if race.start_t is not None else 0.0] + lap_marks[:-1]
        summary.laps = [b - a for a, b in zip(starts, lap_marks)]
    summary.mode = mode
    return summary
