import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ouiscope.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, main
from ouiscope.config import load_grid_config, load_run_config
from ouiscope.network import load_checkpoint

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TRAIN = """
run_id: {run_id}
seed: 2
widths: [2, 8, 8, 2]
batch_size: 16
steps: {steps}
data: {{kind: spirals, n_per_class: 60}}
optimizer: {{learning_rate: {lr}, momentum: 0.9, weight_decay: 1.0e-3}}
observers: {{probe_size: 32, snapshot_every: 5, eval_every: 5}}
"""

GRID = """
run:
  run_id: g
  widths: [2, 8, 2]
  batch_size: 16
  steps: 40
  data: {{kind: spirals, n_per_class: 50}}
  optimizer: {{learning_rate: 0.1, momentum: 0.9, weight_decay: 1.0e-4}}
  observers: {{probe_size: 32, snapshot_every: 5, eval_every: 10}}
grid:
  axis: {axis}
  values: {values}
  seeds: [0, 1]
  fraction: 0.5
"""


def cfg_file(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def train_cfg(tmp_path, run_id="t", steps=50, lr=0.1, name="cfg.yaml"):
    return cfg_file(tmp_path, TRAIN.format(run_id=run_id, steps=steps, lr=lr), name)


def test_train_writes_log_sidecar_checkpoint(tmp_path):
    out = tmp_path / "out"
    assert main(["train", "--config", train_cfg(tmp_path), "--out", str(out)]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"t.csv", "t.json", "t.ckpt"}
    side = json.loads((out / "t.json").read_text())
    assert side["run_id"] == "t" and side["meta"]["total_steps"] == 50
    net, step = load_checkpoint(out / "t.ckpt")
    assert step == 50 and net.seed == 2


def test_train_is_byte_reproducible(tmp_path):
    cfg = train_cfg(tmp_path)
    main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b")])
    for name in ("t.csv", "t.json", "t.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_run(tmp_path):
    cfg = train_cfg(tmp_path)
    main(["train", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed-override", "9"])
    assert (tmp_path / "a" / "t.csv").read_bytes() != (tmp_path / "b" / "t.csv").read_bytes()


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.yaml"
    code = main(["train", "--config", str(missing)])
    assert code == EXIT_IO
    assert "nowhere.yaml" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    code = main(["train", "--config", cfg_file(tmp_path, "optimizer: {lr: 1}\n")])
    assert code == EXIT_CONFIG
    assert "optimizer.lr" in capsys.readouterr().err


def test_train_divergence_exit_code(tmp_path):
    out = tmp_path / "out"
    code = main(["train", "--config", train_cfg(tmp_path, lr=1e6), "--out", str(out)])
    assert code == EXIT_DIVERGED
    side = json.loads((out / "t.json").read_text())
    assert side["meta"]["diverged"] is True
    assert not (out / "t.ckpt").exists()


def test_screen_toy_grid(tmp_path):
    out = tmp_path / "screen"
    cfg = cfg_file(tmp_path, GRID.format(axis="weight_decay", values="[1.0e-4, 1.0e-2]"))
    assert main(["screen", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert len(list((out / "runs").glob("*.csv"))) == 4
    report = json.loads((out / "report.json").read_text())
    assert [c["value"] for c in report["configs"]] == [1e-4, 1e-2]
    assert len(report["runs"]) == 4
    assert "Spearman" in (out / "summary.txt").read_text()
    assert (out / "oui_trajectories.svg").read_text().startswith("<svg")


def test_screen_with_diverging_value_is_flagged(tmp_path):
    out = tmp_path / "screen"
    cfg = cfg_file(tmp_path, GRID.format(axis="learning_rate", values="[0.05, 1.0e6]"))
    assert main(["screen", "--config", cfg, "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["configs"][1]["diverged_seeds"] == [0, 1]
    assert any("diverged" in f for f in report["flags"])


def test_control_eta_zero_matches_baseline(tmp_path):
    text = TRAIN.format(run_id="c", steps=40, lr=0.1) + "controller: {eta: 0.0, wd_min: 1.0e-6, wd_max: 1.0e-1}\n"
    out = tmp_path / "ctl"
    assert main(["control", "--config", cfg_file(tmp_path, text), "--out", str(out)]) == EXIT_OK
    cmp = json.loads((out / "comparison.json").read_text())
    assert cmp["bit_identical_parameters"] is True
    assert cmp["max_abs_parameter_difference"] == 0.0
    assert cmp["bounds_respected"] is True
    a, _ = load_checkpoint(out / "controlled.ckpt")
    b, _ = load_checkpoint(out / "baseline.ckpt")
    assert np.array_equal(a.flat_parameters(), b.flat_parameters())


def test_control_requires_controller_section(tmp_path):
    assert main(["control", "--config", train_cfg(tmp_path)]) == EXIT_CONFIG


def test_report_regenerates_plots(tmp_path):
    runs = tmp_path / "runs"
    main(["train", "--config", train_cfg(tmp_path), "--out", str(runs)])
    assert main(["report", str(runs)]) == EXIT_OK
    svg = (runs / "report" / "t.svg").read_text()
    assert svg.startswith("<svg") and "mask change rate" in svg
    assert "t " in (runs / "report" / "summary.txt").read_text()
    first = svg
    main(["report", str(runs)])
    assert (runs / "report" / "t.svg").read_text() == first


def test_report_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty")]) == EXIT_IO
    assert "no run CSV" in capsys.readouterr().err


def test_report_corrupted_csv(tmp_path, capsys):
    runs = tmp_path / "runs"
    main(["train", "--config", train_cfg(tmp_path), "--out", str(runs)])
    lines = (runs / "t.csv").read_text().splitlines()
    lines[3] = "3,oui,layer0,not-a-number"
    (runs / "t.csv").write_text("\n".join(lines) + "\n")
    assert main(["report", str(runs)]) == EXIT_IO
    assert "t.csv:4" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ouiscope", "train", "--config", train_cfg(tmp_path, steps=10), "--out", str(tmp_path / "o")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "final val loss" in proc.stdout


@pytest.mark.parametrize("name", ["train.yaml", "saturation.yaml", "control.yaml"])
def test_released_run_configs_load(name):
    load_run_config(CONFIGS / name)


@pytest.mark.parametrize("name", ["screen_weight_decay.yaml", "smoke.yaml"])
def test_released_grid_configs_load(name):
    load_grid_config(CONFIGS / name)


def test_screen_rerun_gives_identical_report(tmp_path):
    cfg = cfg_file(tmp_path, GRID.format(axis="weight_decay", values="[1.0e-4, 1.0e-2]"))
    main(["screen", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["screen", "--config", cfg, "--out", str(tmp_path / "b")])
    for name in ("report.json", "summary.txt", "oui_trajectories.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "report.json").read_text())["format_version"] == 1


def test_control_inverted_bounds_fails_before_training(tmp_path, capsys):
    text = TRAIN.format(run_id="c", steps=40, lr=0.1) + "controller: {wd_min: 1.0e-1, wd_max: 1.0e-3}\n"
    out = tmp_path / "ctl"
    assert main(["control", "--config", cfg_file(tmp_path, text), "--out", str(out)]) == EXIT_CONFIG
    assert "inverted" in capsys.readouterr().err
    assert not out.exists()


def test_control_emits_weight_decay_plot(tmp_path):
    text = TRAIN.format(run_id="c", steps=40, lr=0.1) + "controller: {eta: 2.0, cadence: 5}\n"
    out = tmp_path / "ctl"
    assert main(["control", "--config", cfg_file(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert "per-layer weight decay" in (out / "wd_series.svg").read_text()
    cmp = json.loads((out / "comparison.json").read_text())
    assert cmp["convention"] == "oui_above_target_increases_decay"


def test_commands_do_not_touch_inputs(tmp_path):
    cfg = train_cfg(tmp_path)
    before = (tmp_path / "cfg.yaml").read_bytes()
    runs = tmp_path / "runs"
    main(["train", "--config", cfg, "--out", str(runs)])
    csv_before = (runs / "t.csv").read_bytes()
    main(["report", str(runs)])
    assert (tmp_path / "cfg.yaml").read_bytes() == before
    assert (runs / "t.csv").read_bytes() == csv_before
