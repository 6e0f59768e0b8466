"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to watch the lines appear.
The behavior-cloning fixture is shared across the cloning, smoothness, and
attention criteria, so the suite trains four steering models, one throttle
model, and one traffic-light model end to end.
"""
import json
import time

import numpy as np
import pytest

from deskdrive.loop import LoopConfig, run_loop
from deskdrive.net import (Model, batchnorm, conv2d, dense, dropout, flatten,
                           grad_check, lstm, maxpool, relu, softmax,
                           time_distributed)
from deskdrive.net.model import flatten_params, load_model
from deskdrive.pilots import (SteeringModelConfig, ThrottleModelConfig,
                              TrafficModelConfig, TrainConfig,
                              build_steering_model, build_throttle_model,
                              build_traffic_model, train)
from deskdrive.saliency import (Heatmap, dilate_mask, line_overlap_score,
                                saliency_map)
from deskdrive.tub import Tub, load_dataset, split_dataset, window_sequences
from deskdrive.vehicle import (Battery, VehicleParams, VehicleState,
                               ackerman_steering, battery_voltage,
                               pwm_to_velocity, step_vehicle, velocity_to_pwm)
from deskdrive.world import (CameraConfig, TrafficLight, World, build_track,
                             line_mask, render_camera, synth_light_dataset)

P = VehicleParams()
CRUISE = velocity_to_pwm(2.2)


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}"
          + (f" ({detail})" if detail else ""), flush=True)
    assert ok, f"{name}: {detail}"


def oval_world(seed: int) -> World:
    return World(track=build_track("oval"), rng_seed=seed)


# ---------------------------------------------------------------------------
# shared trained artifacts

@pytest.fixture(scope="module")
def expert_tub(tmp_path_factory):
    """2200-record oval demonstration tub driven by the expert oracle."""
    path = tmp_path_factory.mktemp("bc") / "tub"
    tub = Tub.create(path, resolution=(64, 64), seed=42)
    summary = run_loop(LoopConfig(mode="manual", record=True, duration_s=88.0,
                                  seed=42), oval_world(42), tub=tub, expert=True)
    assert summary.records_written >= 2000
    return tub


@pytest.fixture(scope="module")
def cloned_pilots(expert_tub):
    """Four steering models (training seeds 0..3) with their lap evaluations."""
    t0 = time.perf_counter()
    data = load_dataset(expert_tub, "steering")
    results = []
    for seed in range(4):
        model = build_steering_model(seed=seed)
        train(model, data, TrainConfig(epochs=15, batch=8, seed=seed))
        ticks = []
        summary = run_loop(
            LoopConfig(mode="autopilot", duration_s=35.0, seed=100 + seed,
                       cruise_pwm=CRUISE),
            oval_world(100 + seed), steering_model=model,
            on_tick=lambda i: ticks.append((i["t"], abs(i["offset"]))))
        lap_done = bool(summary.laps)
        clean = True
        if lap_done:
            first_lap_t = summary.laps[0]
            half = 0.8  # oval lane_width 1.6
            clean = all(off <= half for t, off in ticks if t <= first_lap_t)
        results.append({"model": model, "summary": summary,
                        "lap_done": lap_done, "clean": clean and lap_done})
    return {"results": results, "wall_s": time.perf_counter() - t0,
            "n_frames": expert_tub.record_count()}


@pytest.fixture(scope="module")
def throttle_model(expert_tub):
    windows = window_sequences(expert_tub, 5)[::3]
    model = build_throttle_model(ThrottleModelConfig(window=5), seed=0)
    train(model, windows, TrainConfig(epochs=4, batch=8, seed=0))
    return model


@pytest.fixture(scope="module")
def traffic_model():
    samples = synth_light_dataset(2000, seed=11)
    data = [(f.pixels, np.array([1.0, 0.0]) if lbl == "red" else np.array([0.0, 1.0]))
            for f, lbl in samples]
    t0 = time.perf_counter()
    model = build_traffic_model(seed=0)
    train(model, data, TrainConfig(epochs=4, batch=8, seed=0))
    return {"model": model, "data": data, "train_s": time.perf_counter() - t0}


# ---------------------------------------------------------------------------
# criteria

def test_gradient_suite():
    """Every layer kind, the LSTM over 4 steps, and both CNN architectures
    at 12x12 pass central-difference checks under 1e-4 (1e-8 when linear)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = {}

    def chk(name, model, x, t, seed=None, loss="mse"):
        worst[name] = grad_check(model, x, t, loss=loss, seed=seed)

    chk("linear", Model([dense(3)], (4,), seed=1),
        rng.normal(size=(2, 4)), rng.normal(size=(2, 3)))
    chk("conv2d", Model([conv2d(3, 3, 2)], (7, 7, 2), seed=1),
        rng.normal(size=(2, 7, 7, 2)), rng.normal(size=(2, 3, 3, 3)))
    chk("relu", Model([dense(5), relu(), dense(2)], (4,), seed=1),
        rng.normal(size=(2, 4)), rng.normal(size=(2, 2)))
    chk("maxpool", Model([maxpool(2, 2), flatten(), dense(2)], (6, 6, 2), seed=1),
        rng.normal(size=(2, 6, 6, 2)), rng.normal(size=(2, 2)))
    chk("batchnorm", Model([conv2d(2, 3, 1), batchnorm(), relu(), flatten(),
                            dense(2)], (6, 6, 1), seed=1),
        rng.normal(size=(3, 6, 6, 1)), rng.normal(size=(3, 2)))
    chk("dropout", Model([dense(8), dropout(0.3), dense(2)], (5,), seed=1),
        rng.normal(size=(2, 5)), rng.normal(size=(2, 2)), seed=7)
    chk("softmax", Model([dense(6), softmax()], (4,), seed=2),
        rng.normal(size=(2, 4)), np.eye(6)[[0, 3]])
    chk("flatten", Model([flatten(), dense(3)], (3, 4, 2), seed=1),
        rng.normal(size=(2, 3, 4, 2)), rng.normal(size=(2, 3)))
    chk("lstm_4step", Model([lstm(5, return_sequences=True)], (4, 3), seed=1),
        rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 5)))
    chk("time_distributed",
        Model([time_distributed(dense(4), relu(), dense(2))], (3, 5), seed=1),
        rng.normal(size=(2, 3, 5)), rng.normal(size=(2, 3, 2)))
    chk("steering_arch_12px",
        build_steering_model(SteeringModelConfig(
            height=12, width=12, blocks=2, filters=(4, 8), dense_units=16), seed=7),
        rng.uniform(size=(2, 12, 12, 3)), np.eye(10)[[3, 8]], seed=5)
    chk("traffic_arch_12px",
        build_traffic_model(TrafficModelConfig(
            height=12, width=12, blocks=1, filters=(4,), dense_units=8), seed=8),
        rng.uniform(size=(2, 12, 12, 3)), np.eye(2)[[0, 1]], seed=6)

    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items()
           if v >= (1e-8 if k == "linear" else 1e-4)}
    report("gradient-suite", not bad and elapsed < 60.0,
           f"worst={max(worst.values()):.2e} linear={worst['linear']:.2e} "
           f"runtime={elapsed:.1f}s")


def test_calibration_endpoints():
    """pwm 220 -> 0 m/s and 420 -> 12 m/s exactly; inverse round-trips
    within one step over all 201 integer PWM values."""
    exact = pwm_to_velocity(220, P) == 0.0 and pwm_to_velocity(420, P) == 12.0
    round_trip = all(
        abs(velocity_to_pwm(pwm_to_velocity(pwm, P), P) - pwm) <= 1
        for pwm in range(220, 421))
    report("calibration-endpoints", exact and round_trip,
           "220->0, 420->12, 201/201 round-trips within one step")


def test_steering_law_oracle():
    """The steering-angle law matches independent evaluation on a random
    grid at 1e-12, including the zero-slip reduction and the clamp."""
    rng = np.random.default_rng(123)
    worst = 0.0
    for i in range(100):
        u = float(rng.uniform(-1, 1))
        v = float(rng.uniform(0, 18))
        d_w = float(rng.uniform(0.1, 1.0))
        k_s = float(rng.uniform(1, 80))
        k_slip = 0.0 if i % 3 == 0 else float(rng.uniform(0, 0.01))
        lim = float(rng.uniform(5, 45))
        params = VehicleParams(d_w=d_w, K_s=k_s, K_slip=k_slip, max_steer_deg=lim)
        expected = max(-lim, min(lim, u * d_w * k_s * (1.0 + k_slip * v * v)))
        worst = max(worst, abs(ackerman_steering(u, v, params) - expected))
    report("steering-law-oracle", worst < 1e-12, f"max |err|={worst:.1e} over 100 cases")


def test_dual_rate_loop(tmp_path):
    """10 simulated seconds at 25/12 Hz: exactly 250 ticks, 120 +/- 1
    snapshots, and byte-identical tubs across two same-seed runs."""
    t0 = time.perf_counter()

    def one(path):
        tub = Tub.create(path, resolution=(64, 64), seed=9)
        summary = run_loop(LoopConfig(duration_s=10.0, seed=9, record=True),
                           oval_world(9), tub=tub, expert=True)
        files = {p.name: p.read_bytes() for p in path.iterdir()}
        return summary, files

    s1, f1 = one(tmp_path / "a")
    s2, f2 = one(tmp_path / "b")
    elapsed = time.perf_counter() - t0
    identical = f1.keys() == f2.keys() and all(f1[k] == f2[k] for k in f1)
    report("dual-rate-loop",
           s1.ticks == 250 and abs(s1.sensor_snapshots - 120) <= 1
           and identical and elapsed < 10.0,
           f"ticks={s1.ticks} snapshots={s1.sensor_snapshots} "
           f"identical={identical} runtime={elapsed:.1f}s")


def test_behavior_cloning(cloned_pilots):
    """Steering models trained 15 epochs on >= 2000 expert frames finish a
    full clean lap in at least 3 of 4 seeds."""
    clean = sum(1 for r in cloned_pilots["results"] if r["clean"])
    report("behavior-cloning",
           cloned_pilots["n_frames"] >= 2000 and clean >= 3,
           f"{clean}/4 seeds lapped cleanly on {cloned_pilots['n_frames']} frames; "
           f"wall={cloned_pilots['wall_s']:.0f}s (10-min desk target)")
    assert cloned_pilots["wall_s"] < 900.0


def test_throttle_smoothness(cloned_pilots, throttle_model):
    """Issued autopilot PWM deltas stay within 20 on every tick; the raw
    model's 95th-percentile delta stays inside the 60-step sanity band."""
    steer = next(r["model"] for r in cloned_pilots["results"] if r["clean"])
    pwms, raws = [], []

    def grab(i):
        pwms.append(i["pwm"])
        if i["raw_pwm"] is not None:
            raws.append(i["raw_pwm"])

    run_loop(LoopConfig(mode="autopilot", duration_s=30.0, seed=101,
                        cruise_pwm=CRUISE),
             oval_world(101), steering_model=steer,
             throttle_model=throttle_model, on_tick=grab)
    deltas = np.abs(np.diff(pwms))
    raw95 = float(np.percentile(np.abs(np.diff(raws)), 95))
    report("throttle-smoothness",
           deltas.size > 0 and int(deltas.max()) <= 20 and raw95 <= 60.0,
           f"max issued delta={int(deltas.max())} (<=20 on 100% of "
           f"{deltas.size} ticks), raw 95th pct={raw95:.1f} (<=60)")


def test_traffic_light(traffic_model):
    """Light classifier reaches 95% held-out accuracy and the supervisor
    gates the start: 220 under red, racing within 3 green ticks."""
    model = traffic_model["model"]
    _, val = split_dataset(traffic_model["data"], 0.2, seed=0)
    correct = sum(int(np.argmax(model.predict(x)) == np.argmax(y)) for x, y in val)
    accuracy = correct / len(val)

    light = TrafficLight(x=-5.0, y=-6.6, state="red")
    world = World(track=build_track("oval"), light=light, rng_seed=2)
    pwms, phases = [], []
    run_loop(LoopConfig(duration_s=6.0, seed=2, race="circuit", laps=1,
                        green_at_s=1.0), world, expert=True,
             traffic_model=model,
             on_tick=lambda i: (pwms.append(i["pwm"]),
                                phases.append(i["race"].phase)))
    held = all(p == 220 for p, ph in zip(pwms, phases)
               if ph == "waiting_for_green")
    waited = phases.count("waiting_for_green")
    # light turns green at tick 25; allow the 3-tick debounce window
    transition_ok = "racing" in phases and 25 <= phases.index("racing") <= 27
    report("traffic-light",
           accuracy >= 0.95 and held and transition_ok,
           f"accuracy={accuracy:.3f} held_220={held} "
           f"racing_at_tick={phases.index('racing') if 'racing' in phases else None} "
           f"train={traffic_model['train_s']:.0f}s (<5 min)")
    assert traffic_model["train_s"] < 300.0


def test_battery_property():
    """A speed-hold controller needs non-decreasing, eventually much higher
    PWM on NiMH; on LiPo the PWM stays in a 5-step band until near empty."""
    def hold_run(battery, v_target=4.0):
        pwms, socs = [], []
        state = VehicleState(v=v_target)
        b = battery
        while b.charge > 0:
            factor = min(max(battery_voltage(b) / b.v_nominal, 0.0), 1.0)
            pwm = velocity_to_pwm(min(v_target / max(factor, 1e-9), 12.0))
            pwms.append(pwm)
            socs.append(b.soc)
            state, b = step_vehicle(state, pwm, 0.0, 0.05, P, b)
        return np.array(pwms), np.array(socs)

    nimh_pwms, _ = hold_run(Battery.nimh(capacity_As=30.0))
    lipo_pwms, lipo_socs = hold_run(Battery.lipo(capacity_As=30.0))
    nimh_ok = bool(np.all(np.diff(nimh_pwms) >= 0)) \
        and nimh_pwms[-1] >= nimh_pwms[0] + 15
    early = lipo_pwms[lipo_socs >= 0.1]
    lipo_ok = int(early.max() - early.min()) <= 5
    report("battery-property", nimh_ok and lipo_ok,
           f"NiMH {nimh_pwms[0]}->{nimh_pwms[-1]} non-decreasing={nimh_ok}, "
           f"LiPo band={int(early.max() - early.min())} until soc 0.1")


def test_saliency_attends_lines(cloned_pilots):
    """Mean line-overlap of the lap-completing model's saliency across 50
    on-track frames beats a random-heatmap baseline by at least 2x."""
    model = next(r["model"] for r in cloned_pilots["results"] if r["clean"])
    cam = CameraConfig()
    states = []
    run_loop(LoopConfig(duration_s=62.0, seed=7), oval_world(7), expert=True,
             on_tick=lambda i: states.append(i["state"]) if i["k"] % 30 == 0 else None)
    states = states[:50]
    assert len(states) == 50
    rng = np.random.default_rng(0)
    scores, baseline = [], []
    for st in states:
        world = oval_world(7)
        frame = render_camera(world, st, cam)
        mask = dilate_mask(line_mask(world, st, cam), 2)
        scores.append(line_overlap_score(saliency_map(model, frame), mask))
        rand = Heatmap(values=rng.uniform(size=(cam.height, cam.width)))
        baseline.append(line_overlap_score(rand, mask))
    ratio = np.mean(scores) / np.mean(baseline)
    report("saliency-line-attention", ratio >= 2.0,
           f"mean={np.mean(scores):.3f} baseline={np.mean(baseline):.3f} "
           f"ratio={ratio:.2f} (>=2)")


def test_persistence(tmp_path):
    """Tub and weight files round-trip exactly; a seeded 100-tick run is
    byte-identical when repeated (golden-file property)."""
    # tub record + pixel round trip
    tub = Tub.create(tmp_path / "t", resolution=(64, 64), seed=1)
    frame = render_camera(oval_world(1), VehicleState(x=-5.0, y=-5.0), CameraConfig())
    tub.append_record(frame, -0.5, 300, (1, 0, 0, 1), (0.1, -0.2, 9.81),
                      "manual", 0.0)
    again = Tub.open(tmp_path / "t")
    rec = again.read_record(0)
    tub_ok = rec == tub.read_record(0) and np.array_equal(
        again.read_frame(rec), np.round(frame.pixels * 255.0) / 255.0)

    # weight file bit-exact round trip
    model = build_steering_model(SteeringModelConfig(
        height=32, width=32, blocks=2, filters=(4, 8), dense_units=16), seed=3)
    p1, p2 = tmp_path / "m1.etgw", tmp_path / "m2.etgw"
    model.save(p1)
    reloaded = load_model(p1)
    reloaded.save(p2)
    weights_ok = p1.read_bytes() == p2.read_bytes() and all(
        a.tobytes() == b.tobytes()
        for (_, a), (_, b) in zip(flatten_params(model.params),
                                  flatten_params(reloaded.params)))

    # golden 100-tick run: two runs, identical bytes, stable record schema
    def run_once(path):
        t = Tub.create(path, resolution=(64, 64), seed=31)
        run_loop(LoopConfig(duration_s=4.0, seed=31, record=True),
                 oval_world(31), tub=t, expert=True)
        return {p.name: p.read_bytes() for p in path.iterdir()}

    g1 = run_once(tmp_path / "g1")
    g2 = run_once(tmp_path / "g2")
    golden_ok = g1.keys() == g2.keys() and all(g1[k] == g2[k] for k in g1)
    first = json.loads(g1["record_000000.json"].decode())
    schema_ok = list(first) == ["img", "steer_u", "steering_bin", "throttle_pwm",
                                "ultra", "imu", "mode", "t", "seq"] \
        and first["img"] == "frame_000000.png" and first["seq"] == 0
    report("persistence", tub_ok and weights_ok and golden_ok and schema_ok,
           f"tub={tub_ok} weights={weights_ok} golden={golden_ok} schema={schema_ok}")
