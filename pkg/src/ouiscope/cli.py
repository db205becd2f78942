"""``ouiscope`` command line.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import observers as obs
from . import svgplot
from .config import load_grid_config, load_run_config
from .errors import ConfigError, DatasetError, LogFormatError, SpecError
from .network import save_checkpoint
from .screening import GridSpec, group_logs, report_for_grid, run_grid, smoothed_oui
from .training import train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3
REPORT_FORMAT_VERSION = 1

log = logging.getLogger("ouiscope")


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _out_dir(args, cfg_dir: str) -> Path:
    out = Path(args.out) if args.out else Path(cfg_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.replace(seed=args.seed_override)
    out = _out_dir(args, cfg.output_dir)
    result = train(cfg)
    result.log.write(out)
    if not result.diverged:
        save_checkpoint(result.network, out / f"{cfg.run_id}.ckpt", step=cfg.steps)
        print(f"{cfg.run_id}: final val loss {result.final_val_loss:.4f}, "
              f"accuracy {result.final_val_accuracy:.4f} -> {out}")
        return EXIT_OK
    print(f"{cfg.run_id}: diverged at step {result.log.meta['divergence_step']}", file=sys.stderr)
    return EXIT_DIVERGED


# -- screen -----------------------------------------------------------------

def trajectory_chart(logs, axis: str, title: str) -> svgplot.Chart:
    chart = svgplot.Chart(title, "step", "smoothed OUI (mean over modules)")
    for value, group in group_logs(logs).items():
        curves = [smoothed_oui(l) for l in group]
        n = max(len(s) for s, _ in curves)
        steps = next(s for s, _ in curves if len(s) == n)
        mat = np.full((len(curves), n), np.nan)
        for i, (_, v) in enumerate(curves):
            mat[i, :len(v)] = v
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(mat, axis=0)
            std = np.nanstd(mat, axis=0)
        chart.series.append(
            svgplot.Series(f"{axis}={value:g}", steps, mean, mean - std, mean + std)
        )
    return chart


def cmd_screen(args) -> int:
    gf = load_grid_config(args.config)
    grid = gf.grid
    if args.seed_override is not None:
        grid = dataclasses.replace(grid, seeds=[args.seed_override])
    out = _out_dir(args, gf.run.output_dir)
    spec = GridSpec.from_config(gf.run, grid)
    logs = run_grid(spec, jobs=args.jobs)
    runs_dir = out / "runs"
    for tlog in logs:
        tlog.write(runs_dir)
    report = report_for_grid(logs, grid)
    payload = {"format_version": REPORT_FORMAT_VERSION, **report.to_dict()}
    payload["runs"] = [
        {"run_id": l.run_id, "value": l.meta["axis_value"], "seed": l.meta["seed"],
         "diverged": l.diverged, "final_val_accuracy": l.meta["final_val_accuracy"]}
        for l in logs
    ]
    payload["grid"] = dataclasses.asdict(grid)
    _write_json(out / "report.json", payload)
    (out / "summary.txt").write_text(report.table())
    chart = trajectory_chart(logs, grid.axis, f"OUI trajectories by {grid.axis} (seed mean +/- std)")
    (out / "oui_trajectories.svg").write_text(svgplot.render([chart]))
    print(report.table(), end="")
    return EXIT_OK


# -- control ----------------------------------------------------------------

def cmd_control(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.controller is None:
        raise ConfigError(f"{args.config}: control needs a 'controller' section")
    if args.seed_override is not None:
        cfg = cfg.replace(seed=args.seed_override)
    out = _out_dir(args, cfg.output_dir)
    controlled = train(cfg.replace(run_id=f"{cfg.run_id}-controlled"))
    baseline = train(cfg.replace(run_id=f"{cfg.run_id}-baseline", controller=None))
    controlled.log.write(out, "controlled")
    baseline.log.write(out, "baseline")
    for name, res in (("controlled", controlled), ("baseline", baseline)):
        if not res.diverged:
            save_checkpoint(res.network, out / f"{name}.ckpt", step=cfg.steps)

    a = controlled.network.flat_parameters()
    b = baseline.network.flat_parameters()
    wd_ranges = {}
    for m in controlled.log.modules(obs.WEIGHT_DECAY):
        _, wd = controlled.log.series(obs.WEIGHT_DECAY, m)
        wd_ranges[m] = {"min": float(wd.min()), "max": float(wd.max()), "final": float(wd[-1])}
    ctrl = cfg.controller
    comparison = {
        "format_version": REPORT_FORMAT_VERSION,
        "convention": ctrl.convention,
        "controller": dataclasses.asdict(ctrl),
        "bit_identical_parameters": bool(np.array_equal(a, b)),
        "max_abs_parameter_difference": float(np.max(np.abs(a - b))) if not (controlled.diverged or baseline.diverged) else None,
        "weight_decay": wd_ranges,
        "bounds_respected": all(ctrl.wd_min <= r["min"] and r["max"] <= ctrl.wd_max for r in wd_ranges.values()),
        "controlled": {"final_val_loss": controlled.log.meta["final_val_loss"],
                       "final_val_accuracy": controlled.final_val_accuracy,
                       "diverged": controlled.diverged},
        "baseline": {"final_val_loss": baseline.log.meta["final_val_loss"],
                     "final_val_accuracy": baseline.final_val_accuracy,
                     "diverged": baseline.diverged},
    }
    _write_json(out / "comparison.json", comparison)

    wd_chart = svgplot.Chart("per-layer weight decay", "step", "weight decay")
    oui_chart = svgplot.Chart("controller input vs target", "step", "OUI")
    for m in controlled.log.modules(obs.WEIGHT_DECAY):
        s, v = controlled.log.series(obs.WEIGHT_DECAY, m)
        wd_chart.series.append(svgplot.Series(m, s, v))
        s, v = controlled.log.series(obs.OUI_SMOOTHED, m)
        if s.size:
            oui_chart.series.append(svgplot.Series(f"{m} smoothed", s, v))
    if oui_chart.series:
        s = oui_chart.series[0].x
        oui_chart.series.append(svgplot.Series("target", s, np.full(len(s), ctrl.target), dashed=True))
    (out / "wd_series.svg").write_text(svgplot.render([wd_chart, oui_chart]))
    print(json.dumps(comparison, indent=2, sort_keys=True))
    return EXIT_DIVERGED if controlled.diverged or baseline.diverged else EXIT_OK


# -- report -----------------------------------------------------------------

def run_panel(tlog: obs.TrajectoryLog) -> str:
    """Loss, OUI and mask-change-rate-over-loss panels for one run."""
    loss = svgplot.Chart(f"{tlog.run_id}: loss", "step", "loss")
    s, v = tlog.series(obs.TRAIN_LOSS)
    if s.size:
        loss.series.append(svgplot.Series("train (EMA 0.1)", s, obs.smooth(v, 0.1)))
    vs, vv = tlog.series(obs.VAL_LOSS)
    if vs.size:
        loss.series.append(svgplot.Series("validation", vs, vv))

    oui = svgplot.Chart(f"{tlog.run_id}: OUI", "step", "OUI")
    for m in tlog.modules(obs.OUI):
        s, v = tlog.series(obs.OUI_SMOOTHED, m)
        if not s.size:
            s, v = tlog.series(obs.OUI, m)
        oui.series.append(svgplot.Series(f"{m}", s, v))
    for m in tlog.modules(obs.PROBE_OUI):
        s, v = tlog.series(obs.PROBE_OUI, m)
        oui.series.append(svgplot.Series(f"{m} (probe)", s, v, dashed=True))

    conv = svgplot.Chart(
        f"{tlog.run_id}: mask change rate vs validation loss", "step", "mask change rate",
        ylabel_right="validation loss",
    )
    s, v = tlog.series(obs.MASK_CHANGE)
    if s.size:
        conv.series.append(svgplot.Series("mask change (EMA 0.1)", s, obs.smooth(v, 0.1)))
    if vs.size:
        conv.series.append(svgplot.Series("validation loss", vs, vv, right_axis=True))
    return svgplot.render([loss, oui, conv])


def summary_row(tlog: obs.TrajectoryLog) -> str:
    acc = tlog.meta.get("final_val_accuracy")
    parts = [f"{tlog.run_id:<32}", "diverged" if tlog.diverged else f"acc={acc:.4f}" if acc is not None else "acc=?"]
    for m in tlog.modules(obs.OUI):
        _, v = tlog.series(obs.OUI_SMOOTHED, m)
        if v.size:
            parts.append(f"{m} oui={v[-1]:.3f}")
    for m in tlog.modules(obs.DEAD_FRACTION):
        _, v = tlog.series(obs.DEAD_FRACTION, m)
        parts.append(f"{m} dead={v[-1]:.3f}")
    _, mc = tlog.series(obs.MASK_CHANGE)
    if mc.size:
        parts.append(f"mask_change={mc[-1]:.4f}")
    return "  ".join(parts)


def cmd_report(args) -> int:
    logdir = Path(args.logdir)
    if not logdir.is_dir():
        raise FileNotFoundError(f"log directory not found: {logdir}")
    csvs = sorted(logdir.glob("*.csv")) + sorted((logdir / "runs").glob("*.csv"))
    if not csvs:
        raise FileNotFoundError(f"no run CSV files in {logdir}")
    logs = [obs.read_log(p) for p in csvs]
    out = Path(args.out) if args.out else logdir / "report"
    out.mkdir(parents=True, exist_ok=True)
    for tlog in logs:
        (out / f"{tlog.run_id}.svg").write_text(run_panel(tlog))
    (out / "summary.txt").write_text("\n".join(summary_row(l) for l in logs) + "\n")
    grid_logs = [l for l in logs if "axis_value" in l.meta]
    if len({l.meta["axis_value"] for l in grid_logs}) >= 2:
        axis = grid_logs[0].meta.get("axis", "value")
        chart = trajectory_chart(grid_logs, axis, f"OUI trajectories by {axis} (seed mean +/- std)")
        (out / "oui_trajectories.svg").write_text(svgplot.render([chart]))
    print(f"report for {len(logs)} run(s) -> {out}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ouiscope", description="OUI-instrumented MLP training")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="run one training job"))
    p = sub.add_parser("screen", help="run a hyperparameter grid and screen regimes")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    common(sub.add_parser("control", help="OUI-controlled run plus uncontrolled baseline"))
    p = sub.add_parser("report", help="regenerate plots and tables from run CSVs")
    p.add_argument("logdir")
    p.add_argument("--out", help="where to write the report (default: LOGDIR/report)")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {"train": cmd_train, "screen": cmd_screen, "control": cmd_control, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, SpecError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, LogFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
