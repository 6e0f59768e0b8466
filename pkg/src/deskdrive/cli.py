"""Command line entry point: sim, drive, train, eval, saliency, race."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import StackConfig
from .errors import StackError
from .loop import run_loop, start_state_on_track
from .net import load_model
from .pilots import (TrainConfig, build_steering_model, build_throttle_model,
                     build_traffic_model, classify_light, predict_steering, train)
from .saliency import (dilate_mask, heatmap_to_png_bytes, line_overlap_score,
                       overlay, saliency_map)
from .teleop import TeleopServer
from .tub import Tub, frame_to_png_bytes, load_dataset, window_sequences
from .world import CameraFrame, line_mask, render_camera, synth_light_dataset


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_stack(args) -> StackConfig:
    cfg = StackConfig.load(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "track", None):
        cfg.world = replace(cfg.world, track=args.track)
    return cfg


def _make_tub(cfg: StackConfig, out) -> Tub:
    return Tub.create(out, resolution=(cfg.camera.height, cfg.camera.width),
                      preprocess=cfg.preprocess.colorspace,
                      config_hash=cfg.config_hash(), seed=cfg.seed)


def cmd_sim(args) -> int:
    cfg = _load_stack(args)
    world = cfg.world.build(cfg.seed)
    loop_cfg = replace(cfg.loop, seed=cfg.seed, duration_s=args.seconds,
                       record=args.out is not None, realtime=False,
                       mode="autopilot" if args.driver == "autopilot" else "manual")
    tub = _make_tub(cfg, args.out) if args.out else None
    models = _load_models(args)
    summary = run_loop(
        loop_cfg, world, tub=tub, expert=args.driver == "expert",
        steering_model=models.get("steer"), throttle_model=models.get("throttle"),
        traffic_model=models.get("traffic"), preprocess=cfg.preprocess,
        vehicle_params=cfg.vehicle, battery=cfg.battery.build(),
        cam_cfg=cfg.camera, expert_cfg=cfg.expert)
    if args.out:
        cfg.echo_to(args.out)
        _write_json(Path(args.out) / "summary.json", summary.to_dict())
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return 0


def cmd_drive(args) -> int:
    cfg = _load_stack(args)
    world = cfg.world.build(cfg.seed)
    loop_cfg = replace(cfg.loop, seed=cfg.seed, duration_s=args.seconds,
                       realtime=True, mode="manual", port=args.port,
                       record=False)
    tub = _make_tub(cfg, args.out) if args.out else None
    models = _load_models(args)
    saliency_source = None
    if args.saliency and models.get("steer") is not None:
        saliency_source = _make_saliency_source(models["steer"], cfg)
    server = TeleopServer(host=args.host, port=args.port,
                          static_dir=args.static or _default_static(),
                          saliency_source=saliency_source)
    print(f"teleop server on {args.host}:{server.port}", flush=True)
    try:
        summary = run_loop(
            loop_cfg, world, tub=tub, server=server,
            steering_model=models.get("steer"), throttle_model=models.get("throttle"),
            preprocess=cfg.preprocess, vehicle_params=cfg.vehicle,
            battery=cfg.battery.build(), cam_cfg=cfg.camera)
    finally:
        server.close()
    if args.out:
        cfg.echo_to(args.out)
        _write_json(Path(args.out) / "summary.json", summary.to_dict())
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return 0


def _default_static():
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None


def _make_saliency_source(model, cfg: StackConfig):
    """Overlay-PNG provider for telemetry; skips frames that cannot map."""
    def source(frame: CameraFrame):
        try:
            fitted = _fit(frame, model, cfg)
            hm = saliency_map(model, fitted)
            return frame_to_png_bytes(overlay(fitted, hm))
        except StackError:
            return None
    return source


def _load_models(args) -> dict:
    out = {}
    for key, attr in (("steer", "steer_model"), ("throttle", "throttle_model"),
                      ("traffic", "traffic_model")):
        path = getattr(args, attr, None)
        if path:
            out[key] = load_model(path)
    return out


def cmd_train(args) -> int:
    cfg = _load_stack(args)
    hyper = TrainConfig(epochs=args.epochs, batch=args.batch, lr=args.lr,
                        loss=args.loss, seed=cfg.seed,
                        val_fraction=args.val_fraction)
    if args.target == "steering":
        model = build_steering_model(cfg.steering_model, seed=cfg.seed)
        data = load_dataset(Tub.open(args.tub), "steering")
    elif args.target == "throttle":
        model = build_throttle_model(replace(cfg.throttle_model, window=args.window),
                                     seed=cfg.seed)
        data = window_sequences(Tub.open(args.tub), args.window)
    elif args.target == "traffic":
        model = build_traffic_model(cfg.traffic_model, seed=cfg.seed)
        samples = synth_light_dataset(args.samples, cfg.seed,
                                      cfg.traffic_model.width, cfg.traffic_model.height)
        data = [(f.pixels, np.array([1.0, 0.0]) if lbl == "red" else np.array([0.0, 1.0]))
                for f, lbl in samples]
    else:  # pragma: no cover - argparse restricts choices
        raise StackError(f"unknown train target {args.target}")
    report = train(model, data, hyper)
    report.preprocess = cfg.preprocess.colorspace
    model.save(args.out)
    _write_json(str(args.out) + ".report.json", report.to_dict())
    print(json.dumps({"final_train_loss": report.train_loss[-1],
                      "final_val_loss": report.val_loss[-1],
                      "model": str(args.out)}, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_stack(args)
    world = cfg.world.build(cfg.seed)
    models = _load_models(args)
    if "steer" not in models:
        raise StackError("eval needs --steer-model")
    deltas: list[int] = []
    last_pwm = [220]

    def on_tick(info):
        deltas.append(abs(info["pwm"] - last_pwm[0]))
        last_pwm[0] = info["pwm"]

    loop_cfg = replace(cfg.loop, seed=cfg.seed, duration_s=args.seconds,
                       mode="autopilot", record=False, realtime=False)
    summary = run_loop(loop_cfg, world, steering_model=models["steer"],
                       throttle_model=models.get("throttle"),
                       preprocess=cfg.preprocess, vehicle_params=cfg.vehicle,
                       battery=cfg.battery.build(), cam_cfg=cfg.camera,
                       on_tick=on_tick)
    hist, edges = np.histogram(deltas, bins=[0, 1, 5, 10, 15, 20, 21, 1000])
    metrics = {
        "summary": summary.to_dict(),
        "laps_completed": len(summary.laps),
        "departures": summary.departures,
        "throttle_delta_histogram": {
            f"[{int(a)},{int(b)})": int(c) for a, b, c in zip(edges[:-1], edges[1:], hist)},
    }
    if "traffic" in models:
        samples = synth_light_dataset(400, cfg.seed + 1, cfg.traffic_model.width,
                                      cfg.traffic_model.height)
        correct = sum(classify_light(models["traffic"], f)[0] == lbl
                      for f, lbl in samples)
        metrics["light_accuracy"] = correct / len(samples)
    if args.out:
        cfg.echo_to(args.out)
        _write_json(Path(args.out) / "eval.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _color_threshold_mask(frame: CameraFrame) -> np.ndarray:
    """Line-pixel proxy for frames with no world geometry: bright or yellow."""
    px = frame.pixels
    white = px.min(axis=-1) > 0.8
    yellow = (px[..., 0] > 0.6) & (px[..., 1] > 0.5) & (px[..., 2] < 0.45)
    return white | yellow


def cmd_saliency(args) -> int:
    cfg = _load_stack(args)
    model = load_model(args.model)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = []
    if args.tub:
        tub = Tub.open(args.tub)
        lo, hi = (int(x) for x in args.range.split(":")) if args.range \
            else (0, min(tub.record_count(), 10))
        items = []
        for seq in range(lo, hi):
            rec = tub.read_record(seq)
            frame = CameraFrame(pixels=tub.read_frame(rec), t=rec.t)
            items.append((f"{seq:06d}", frame, _color_threshold_mask(frame)))
    else:
        world = cfg.world.build(cfg.seed)
        state = start_state_on_track(world)
        items = []
        from .vehicle import step_vehicle
        from .pilots import expert_driver
        batt = cfg.battery.build()
        for i in range(args.frames):
            frame = render_camera(world, state, cfg.camera)
            mask = line_mask(world, state, cfg.camera)
            items.append((f"{i:06d}", frame, mask))
            steer, pwm = expert_driver(world, state, cfg.expert, cfg.vehicle)
            state, batt = step_vehicle(state, pwm, steer, 0.2, cfg.vehicle, batt)
    for name, frame, mask in items:
        chosen = predict_steering(model, frame, cfg.preprocess)
        hm = saliency_map(model, _fit(frame, model, cfg), chosen.chosen_bin)
        (out_dir / f"heatmap_{name}.png").write_bytes(heatmap_to_png_bytes(hm))
        blended = overlay(_fit(frame, model, cfg), hm)
        (out_dir / f"overlay_{name}.png").write_bytes(frame_to_png_bytes(blended))
        mask_r = mask
        if mask_r.shape != hm.shape:
            mask_r = _resize_mask(mask_r, hm.shape)
        try:
            score = line_overlap_score(hm, dilate_mask(mask_r))
        except StackError:
            score = None
        scores.append({"frame": name, "bin": chosen.chosen_bin,
                       "line_overlap": score})
    _write_json(out_dir / "scores.json", scores)
    print(json.dumps({"frames": len(scores), "out": str(out_dir)}))
    return 0


def _fit(frame: CameraFrame, model, cfg: StackConfig) -> CameraFrame:
    from .pilots import fit_to_model
    return fit_to_model(frame, cfg.preprocess, model.input_shape[0], model.input_shape[1])


def _resize_mask(mask: np.ndarray, shape) -> np.ndarray:
    from .pilots import area_resize
    resized = area_resize(mask.astype(float)[..., None], shape[0], shape[1])
    return resized[..., 0] > 0.25


def cmd_race(args) -> int:
    cfg = _load_stack(args)
    wcfg = cfg.world
    if wcfg.light is None:
        track = wcfg.build(cfg.seed).track
        gate = track.point_at(0.0)
        wcfg = replace(wcfg, light={"x": float(gate[0]),
                                    "y": float(gate[1] - track.lane_width),
                                    "state": "red"})
    world = wcfg.build(cfg.seed)
    models = _load_models(args)
    loop_cfg = replace(cfg.loop, seed=cfg.seed, duration_s=args.seconds,
                       mode="autopilot" if args.steer_model else "manual",
                       race=args.mode, laps=args.laps, realtime=False,
                       record=False)
    summary = run_loop(loop_cfg, world, expert=not args.steer_model,
                       steering_model=models.get("steer"),
                       throttle_model=models.get("throttle"),
                       traffic_model=models.get("traffic"),
                       preprocess=cfg.preprocess, vehicle_params=cfg.vehicle,
                       battery=cfg.battery.build(), cam_cfg=cfg.camera,
                       expert_cfg=cfg.expert)
    if args.out:
        cfg.echo_to(args.out)
        _write_json(Path(args.out) / "summary.json", summary.to_dict())
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deskdrive",
                                description="desk-scale self-driving stack")
    p.add_argument("--config", help="stack configuration JSON (or $ETG_CONFIG)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sim", help="headless seeded run")
    sp.add_argument("--track", default=None)
    sp.add_argument("--driver", choices=["expert", "autopilot"], default="expert")
    sp.add_argument("--seconds", type=float, default=60.0)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", default=None, help="tub output directory")
    sp.add_argument("--steer-model")
    sp.add_argument("--throttle-model")
    sp.add_argument("--traffic-model")
    sp.set_defaults(fn=cmd_sim)

    dp = sub.add_parser("drive", help="teleop server for human driving")
    dp.add_argument("--host", default="127.0.0.1")
    dp.add_argument("--port", type=int, default=8887)
    dp.add_argument("--track", default=None)
    dp.add_argument("--seconds", type=float, default=3600.0)
    dp.add_argument("--seed", type=int, default=None)
    dp.add_argument("--out", default=None, help="tub output directory")
    dp.add_argument("--static", default=None, help="UI asset directory")
    dp.add_argument("--steer-model")
    dp.add_argument("--throttle-model")
    dp.add_argument("--saliency", action="store_true",
                    help="stream saliency overlays in telemetry (needs --steer-model)")
    dp.set_defaults(fn=cmd_drive)

    tp = sub.add_parser("train", help="train a pilot model")
    tp.add_argument("target", choices=["steering", "throttle", "traffic"])
    tp.add_argument("--tub")
    tp.add_argument("--samples", type=int, default=2000)
    tp.add_argument("--window", type=int, default=5)
    tp.add_argument("--epochs", type=int, default=10)
    tp.add_argument("--batch", type=int, default=32)
    tp.add_argument("--lr", type=float, default=1e-3)
    tp.add_argument("--loss", choices=["mse", "cross_entropy"], default="mse")
    tp.add_argument("--val-fraction", type=float, default=0.2)
    tp.add_argument("--seed", type=int, default=None)
    tp.add_argument("--out", required=True)
    tp.set_defaults(fn=cmd_train)

    ep = sub.add_parser("eval", help="closed-loop metrics for trained models")
    ep.add_argument("--track", default=None)
    ep.add_argument("--seconds", type=float, default=30.0)
    ep.add_argument("--seed", type=int, default=None)
    ep.add_argument("--steer-model", required=True)
    ep.add_argument("--throttle-model")
    ep.add_argument("--traffic-model")
    ep.add_argument("--out", default=None)
    ep.set_defaults(fn=cmd_eval)

    lp = sub.add_parser("saliency", help="heatmaps and line-overlap scores")
    lp.add_argument("--model", required=True)
    lp.add_argument("--tub")
    lp.add_argument("--range", help="lo:hi record range")
    lp.add_argument("--frames", type=int, default=10, help="frames to simulate")
    lp.add_argument("--track", default=None)
    lp.add_argument("--seed", type=int, default=None)
    lp.add_argument("--out", required=True)
    lp.set_defaults(fn=cmd_saliency)

    rp = sub.add_parser("race", help="wait-for-green circuit or drag run")
    rp.add_argument("--mode", choices=["circuit", "drag"], default="circuit")
    rp.add_argument("--laps", type=int, default=1)
    rp.add_argument("--track", default=None)
    rp.add_argument("--seconds", type=float, default=60.0)
    rp.add_argument("--seed", type=int, default=None)
    rp.add_argument("--steer-model")
    rp.add_argument("--throttle-model")
    rp.add_argument("--traffic-model")
    rp.add_argument("--out", default=None)
    rp.set_defaults(fn=cmd_race)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except StackError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
