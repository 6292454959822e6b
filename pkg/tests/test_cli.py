import json
import os
import subprocess
import sys

import numpy as np
import yaml

from pitchlab import epv, pitch_control as pc, sim, trainer
from pitchlab.cli import main
from pitchlab.reward import ShapingConfig, ShapingMode
from pitchlab.sim import ScenarioConfig
from pitchlab.trainer import ExperimentConfig
from pitchlab.vdn import TrainConfig


def micro_config_dict(weight=0.1, seeds=(1,)):
    cfg = ExperimentConfig(
        scenario=ScenarioConfig(n_defenders=1, n_attackers=1, difficulty=0.95,
                                max_episode_steps=40),
        reward=ShapingConfig(mode=ShapingMode.ADDITIVE, weight=weight,
                             gamma=0.99),
        train=TrainConfig(total_steps=60, learning_rate=1e-3, batch_size=8,
                          target_sync_period=30, buffer_capacity=64,
                          hidden=(8,), update_every=4, learn_start=8),
        seeds=seeds,
        eval_every=30,
        eval_episodes=2,
    )
    return cfg.to_dict()


def write_yaml(path, doc):
    with open(path, "w") as f:
        yaml.safe_dump(doc, f)
    return str(path)


def micro_run(tmp_path, **kw):
    cfg_path = write_yaml(tmp_path / "config.yaml", micro_config_dict(**kw))
    out_dir = tmp_path / "out"
    rc = main(["train", "--config", cfg_path, "--out", str(out_dir)])
    assert rc == 0
    runs = [d for d in os.listdir(out_dir) if d.startswith("run-")]
    assert len(runs) == 1
    return cfg_path, os.path.join(str(out_dir), runs[0])


# -- exit codes -------------------------------------------------------------------

def test_missing_config_exits_2_and_names_path(tmp_path, capsys):
    missing = str(tmp_path / "nope.yaml")
    rc = main(["train", "--config", missing, "--out", str(tmp_path)])
    assert rc == 2
    assert missing in capsys.readouterr().err


def test_non_mapping_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("- 1\n- 2\n")
    rc = main(["train", "--config", str(path), "--out", str(tmp_path)])
    assert rc == 2
    assert str(path) in capsys.readouterr().err


def test_unknown_config_field_exits_2(tmp_path, capsys):
    doc = micro_config_dict()
    doc["optimizer"] = "adam"
    cfg_path = write_yaml(tmp_path / "config.yaml", doc)
    rc = main(["train", "--config", cfg_path, "--out", str(tmp_path)])
    assert rc == 2
    assert "optimizer" in capsys.readouterr().err


def test_insufficient_fit_data_exits_3(tmp_path, capsys):
    events = tmp_path / "events.csv"
    events.write_text("x,k\n" + "".join(f"{0.1 * i},1\n" for i in range(20)))
    rc = main(["fit-pass-model", "--events", str(events),
               "--out", str(tmp_path / "params.json")])
    assert rc == 3
    assert "InsufficientDataError" in capsys.readouterr().err


# -- fit-pass-model ---------------------------------------------------------------

def test_fit_pass_model_recovers_parameters(tmp_path, capsys):
    rng = np.random.default_rng(5)
    true = pc.PassModelParams(sigma=0.45, lam=0.2)
    x, k = pc.sample_pass_events(true, 4000, rng)
    events = tmp_path / "events.csv"
    pc.save_pass_events(str(events), x, k)
    out = tmp_path / "params.json"
    rc = main(["fit-pass-model", "--events", str(events), "--out", str(out)])
    assert rc == 0
    assert "sigma=" in capsys.readouterr().out
    fitted = pc.PassModelParams.from_dict(json.loads(out.read_text()))
    assert abs(fitted.sigma - 0.45) < 0.45 * 0.15
    assert abs(fitted.lam - 0.2) < 0.1


# -- solve-epv --------------------------------------------------------------------

def test_solve_epv_writes_loadable_grid(tmp_path, capsys):
    out = tmp_path / "grid.json"
    rc = main(["solve-epv", "--out", str(out),
               "--grid-m", "8", "--grid-n", "6"])
    assert rc == 0
    assert str(out) in capsys.readouterr().out
    values, geom = epv.load_epv_grid(str(out))
    assert values.shape == (8, 6)
    assert geom["length"] == 105.0 and geom["width"] == 68.0
    oracle = epv.solve_epv(epv.default_chain(sim.PitchSpec(grid_m=8, grid_n=6)))
    assert np.array_equal(values, oracle)


# -- train / eval / replay / curve ---------------------------------------------------

def test_train_micro_run_artifacts(tmp_path, capsys):
    cfg_path, run_dir = micro_run(tmp_path)
    out = capsys.readouterr().out
    assert run_dir in out
    assert "mean goal difference" in out
    assert os.path.exists(os.path.join(run_dir, "config.json"))
    seed_dir = os.path.join(run_dir, "seed-1")
    assert os.path.exists(os.path.join(seed_dir, "metrics.jsonl"))
    assert os.path.exists(os.path.join(seed_dir, "ckpt_final.json"))


def test_train_baseline_flag_zeros_weight(tmp_path):
    cfg_path = write_yaml(tmp_path / "config.yaml", micro_config_dict(weight=0.1))
    out_dir = tmp_path / "out"
    rc = main(["train", "--config", cfg_path, "--out", str(out_dir),
               "--baseline"])
    assert rc == 0
    runs = [d for d in os.listdir(out_dir) if d.startswith("run-")]
    with open(os.path.join(out_dir, runs[0], "config.json")) as f:
        echoed = json.load(f)
    assert echoed["reward"]["weight"] == 0.0


def test_train_seeds_override(tmp_path):
    cfg_path = write_yaml(tmp_path / "config.yaml", micro_config_dict())
    out_dir = tmp_path / "out"
    rc = main(["train", "--config", cfg_path, "--out", str(out_dir),
               "--seeds", "5"])
    assert rc == 0
    runs = [d for d in os.listdir(out_dir) if d.startswith("run-")]
    run_dir = os.path.join(str(out_dir), runs[0])
    assert os.path.exists(os.path.join(run_dir, "seed-5", "metrics.jsonl"))
    with open(os.path.join(run_dir, "config.json")) as f:
        assert json.load(f)["seeds"] == [5]


def test_eval_checkpoint(tmp_path, capsys):
    cfg_path, run_dir = micro_run(tmp_path)
    capsys.readouterr()
    ckpt = os.path.join(run_dir, "seed-1", "ckpt_final.json")
    rc = main(["eval", "--checkpoint", ckpt, "--config", cfg_path,
               "--episodes", "2", "--seed", "3"])
    assert rc == 0
    assert "mean goal difference over 2 episodes" in capsys.readouterr().out


def test_replay_writes_step_rows(tmp_path, capsys):
    cfg_path, run_dir = micro_run(tmp_path)
    ckpt = os.path.join(run_dir, "seed-1", "ckpt_final.json")
    out = tmp_path / "episode.jsonl"
    rc = main(["replay", "--checkpoint", ckpt, "--config", cfg_path,
               "--seed", "2", "--out", str(out)])
    assert rc == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert rows
    assert set(rows[0]) == {"step", "positions", "ball", "carrier",
                            "terminal", "actions", "events"}
    assert rows[-1]["terminal"] is True
    assert len(rows[0]["actions"]) == 1


def test_curve_csv_from_run(tmp_path, capsys):
    cfg_path, run_dir = micro_run(tmp_path)
    out = tmp_path / "curve.csv"
    rc = main(["curve", "--runs", run_dir, "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,median,q25,q75"
    assert [int(line.split(",")[0]) for line in lines[1:]] == [0, 30, 60]


def test_curve_without_metrics_exits_3(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = main(["curve", "--runs", str(empty), "--out", str(tmp_path / "c.csv")])
    assert rc == 3
    assert "EmptyLogError" in capsys.readouterr().err


# -- render-field ----------------------------------------------------------------------

def test_render_epv_without_state(tmp_path, capsys):
    out = tmp_path / "epv.ppm"
    rc = main(["render-field", "--what", "epv", "--out", str(out),
               "--grid-m", "8", "--grid-n", "6"])
    assert rc == 0
    assert out.read_bytes().startswith(b"P6\n")


def test_render_control_from_saved_state(tmp_path):
    st = sim.reset(ScenarioConfig(n_defenders=2, n_attackers=3), 4)
    state_path = tmp_path / "state.json"
    sim.save_state(st, str(state_path))
    out = tmp_path / "control.ppm"
    rc = main(["render-field", "--what", "control", "--state", str(state_path),
               "--out", str(out)])
    assert rc == 0
    assert out.read_bytes().startswith(b"P6\n")


def test_render_overlay_with_mismatched_grid_exits_3(tmp_path, capsys):
    st = sim.reset(ScenarioConfig(n_defenders=1, n_attackers=1), 0)
    state_path = tmp_path / "state.json"
    sim.save_state(st, str(state_path))
    small = sim.PitchSpec(grid_m=4, grid_n=3)
    grid_path = tmp_path / "grid.json"
    epv.save_epv_grid(str(grid_path),
                      epv.solve_epv(epv.default_chain(small)), small)
    rc = main(["render-field", "--what", "overlay", "--state", str(state_path),
               "--epv-grid", str(grid_path), "--out", str(tmp_path / "x.ppm")])
    assert rc == 3
    assert "DimensionMismatchError" in capsys.readouterr().err


def test_render_without_state_or_checkpoint_exits_2(tmp_path, capsys):
    rc = main(["render-field", "--what", "control",
               "--out", str(tmp_path / "x.ppm")])
    assert rc == 2


def test_render_from_checkpoint_plays_forward(tmp_path):
    cfg_path, run_dir = micro_run(tmp_path)
    ckpt = os.path.join(run_dir, "seed-1", "ckpt_final.json")
    out = tmp_path / "scene.ppm"
    rc = main(["render-field", "--what", "overlay", "--checkpoint", ckpt,
               "--config", cfg_path, "--seed", "1", "--at-step", "10",
               "--out", str(out)])
    assert rc == 0
    assert out.read_bytes().startswith(b"P6\n")


# -- console entry point -------------------------------------------------------------

def test_installed_script_runs(tmp_path):
    out = tmp_path / "grid.json"
    proc = subprocess.run(
        [sys.executable, "-m", "pitchlab.cli", "solve-epv",
         "--out", str(out), "--grid-m", "4", "--grid-n", "3"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert out.exists()
