import json

import pytest

from deskdrive.cli import main
from deskdrive.config import StackConfig
from deskdrive.errors import ConfigError
from deskdrive.pilots import SteeringModelConfig, build_steering_model
from deskdrive.tub import Tub


class TestConfig:
    def test_defaults_load(self):
        cfg = StackConfig()
        assert cfg.vehicle.pwm_min == 220
        assert cfg.loop.loop_hz == 25.0

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            StackConfig.from_dict({"warp_drive": {}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            StackConfig.from_dict({"vehicle": {"wheel_count": 6}})

    def test_round_trip(self):
        cfg = StackConfig.from_dict({"vehicle": {"K_s": 20.0},
                                     "world": {"track": "drag"},
                                     "seed": 5})
        doc = cfg.to_dict()
        again = StackConfig.from_dict(doc)
        assert again.vehicle.K_s == 20.0
        assert again.world.track == "drag"
        assert again.config_hash() == cfg.config_hash()

    def test_env_var_load(self, tmp_path, monkeypatch):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"seed": 77}))
        monkeypatch.setenv("ETG_CONFIG", str(p))
        assert StackConfig.load().seed == 77

    def test_echo_effective_config(self, tmp_path):
        cfg = StackConfig()
        cfg.echo_to(tmp_path)
        doc = json.loads((tmp_path / "effective_config.json").read_text())
        assert "vehicle" in doc and "loop" in doc


class TestCliDispatch:
    def test_unknown_subcommand_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_help_exits_0(self):
        assert main(["--help"]) == 0

    def test_subcommand_help_exits_0(self):
        for sub in ("sim", "drive", "train", "eval", "saliency", "race"):
            assert main([sub, "--help"]) == 0

    def test_sim_writes_expected_tub(self, tmp_path, capsys):
        out = tmp_path / "tub"
        code = main(["sim", "--track", "oval", "--driver", "expert",
                     "--seconds", "4", "--seed", "42", "--out", str(out)])
        assert code == 0
        tub = Tub.open(out)
        assert tub.record_count() == 100  # 4 s x 25 Hz
        assert (out / "summary.json").exists()
        assert (out / "effective_config.json").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["ticks"] == 100

    def test_sim_seed_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["sim", "--seconds", "2", "--seed", "3",
                         "--out", str(out)]) == 0
        for name in ("record_000010.json", "frame_000010.png"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_train_steering_and_eval(self, tmp_path):
        tub_dir = tmp_path / "tub"
        assert main(["sim", "--seconds", "4", "--seed", "1",
                     "--out", str(tub_dir)]) == 0
        model_path = tmp_path / "steer.etgw"
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "steering_model": {"height": 64, "width": 64, "blocks": 2,
                               "filters": [4, 8], "dense_units": 16}}))
        code = main(["--config", str(cfg_path), "train", "steering",
                     "--tub", str(tub_dir), "--epochs", "1", "--seed", "1",
                     "--out", str(model_path)])
        assert code == 0
        assert model_path.exists()
        report = json.loads((str(model_path) + ".report.json")
                            and (tmp_path / "steer.etgw.report.json").read_text())
        assert len(report["train_loss"]) == 1
        out_dir = tmp_path / "eval"
        code = main(["--config", str(cfg_path), "eval", "--steer-model",
                     str(model_path), "--seconds", "2", "--seed", "1",
                     "--out", str(out_dir)])
        assert code == 0
        metrics = json.loads((out_dir / "eval.json").read_text())
        assert "throttle_delta_histogram" in metrics

    def test_train_traffic_synthetic(self, tmp_path):
        model_path = tmp_path / "light.etgw"
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "traffic_model": {"height": 96, "width": 96, "blocks": 3,
                              "filters": [4, 8, 8], "dense_units": 16}}))
        code = main(["--config", str(cfg_path), "train", "traffic",
                     "--samples", "40", "--epochs", "1", "--seed", "2",
                     "--out", str(model_path)])
        assert code == 0
        assert model_path.exists()

    def test_saliency_command(self, tmp_path):
        model_path = tmp_path / "steer.etgw"
        build_steering_model(SteeringModelConfig(height=64, width=64, blocks=2,
                                                 filters=(4, 8), dense_units=16),
                             seed=0).save(model_path)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "steering_model": {"height": 64, "width": 64, "blocks": 2,
                               "filters": [4, 8], "dense_units": 16}}))
        out_dir = tmp_path / "sal"
        code = main(["--config", str(cfg_path), "saliency", "--model",
                     str(model_path), "--frames", "2", "--seed", "0",
                     "--out", str(out_dir)])
        assert code == 0
        assert (out_dir / "heatmap_000000.png").exists()
        assert (out_dir / "overlay_000001.png").exists()
        scores = json.loads((out_dir / "scores.json").read_text())
        assert len(scores) == 2

    def test_race_expert_completes(self, tmp_path, capsys):
        out = tmp_path / "race"
        code = main(["race", "--mode", "circuit", "--laps", "1",
                     "--seconds", "40", "--seed", "2", "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["race_phase"] == "finished"

    def test_missing_model_is_runtime_error(self, tmp_path):
        assert main(["eval", "--steer-model", str(tmp_path / "nope.etgw"),
                     "--seconds", "1"]) == 1
