"""Hyperparameter grids and early-OUI regime screening.

A grid trains one run per ``(axis value, seed)``. The analysis then asks two
questions of the resulting OUI trajectories:

* *separation*: the first step from which every pair of configurations has a
  seed-mean OUI gap larger than the within-config noise band, and keeps it
  for a persistence window;
* *anticipation*: how well the early OUI (mean smoothed OUI over
  ``[0.5 f T, f T]``) ranks configurations by final validation accuracy.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .config import GridConfig, OptimizerConfig, RunConfig
from .observers import OUI, TrajectoryLog, smooth

log = logging.getLogger(__name__)

LOW_BAND = "low_band"
INTERMEDIATE_BAND = "intermediate_band"
HIGH_BAND = "high_band"

DEFAULT_ALPHA = 0.1


@dataclass
class GridSpec:
    base: RunConfig
    axis: str
    values: List[float]
    seeds: List[int]

    def __post_init__(self):
        GridConfig(axis=self.axis, values=list(self.values), seeds=list(self.seeds)).validate()

    @classmethod
    def from_config(cls, run: RunConfig, grid: GridConfig) -> "GridSpec":
        return cls(run, grid.axis, list(grid.values), list(grid.seeds))

    @property
    def budget(self) -> int:
        return self.base.steps

    def run_config(self, value: float, seed: int) -> RunConfig:
        opt = self.base.optimizer
        if self.axis == "weight_decay":
            opt = OptimizerConfig(opt.learning_rate, opt.momentum, float(value))
        else:
            opt = OptimizerConfig(float(value), opt.momentum, opt.weight_decay)
        return self.base.replace(
            run_id=f"{self.axis}={value:.6g}_seed{seed}", seed=seed, optimizer=opt
        )

    def points(self):
        return [(v, s) for v in sorted(self.values) for s in self.seeds]


def _run_point(cfg: RunConfig) -> TrajectoryLog:
    from .training import train

    return train(cfg).log


def run_grid(spec: GridSpec, jobs: int = 1) -> List[TrajectoryLog]:
    """One complete run per grid point, returned sorted by (axis value, seed).

    Diverged runs are kept; their log carries ``meta["diverged"] = True``.
    """
    configs = [spec.run_config(v, s) for v, s in spec.points()]
    for cfg in configs:
        cfg.validate()
    if jobs <= 1:
        logs = [_run_point(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            logs = list(pool.map(_run_point, configs))
    for (value, seed), tlog in zip(spec.points(), logs):
        tlog.meta.update(axis=spec.axis, axis_value=float(value))
    return logs


def group_logs(logs: Sequence[TrajectoryLog]) -> Dict[float, List[TrajectoryLog]]:
    groups: Dict[float, List[TrajectoryLog]] = {}
    for tlog in logs:
        groups.setdefault(float(tlog.meta["axis_value"]), []).append(tlog)
    return {k: sorted(v, key=lambda l: l.meta.get("seed", 0)) for k, v in sorted(groups.items())}


# -- per-log observables ----------------------------------------------------

def smoothed_oui(tlog: TrajectoryLog, modules=None, alpha: Optional[float] = None):
    """Steps and module-mean of the per-module smoothed OUI series."""
    alpha = alpha if alpha is not None else tlog.meta.get("alpha", DEFAULT_ALPHA)
    modules = list(modules) if modules is not None else tlog.modules(OUI)
    if not modules:
        raise ValueError(f"log {tlog.run_id} has no OUI series")
    series = []
    steps = None
    for m in modules:
        s, v = tlog.series(OUI, m)
        if steps is None:
            steps = s
        elif not np.array_equal(steps, s):
            raise ValueError(f"log {tlog.run_id}: modules recorded at different steps")
        if v.size == 0:
            return steps, v
        series.append(smooth(v, alpha))
    return steps, np.mean(series, axis=0)


def early_oui(
    tlog: TrajectoryLog,
    fraction: float = 0.15,
    modules=None,
    alpha: Optional[float] = None,
    allow_truncated: bool = False,
) -> float:
    """Mean smoothed OUI over steps in ``[0.5 * fraction * T, fraction * T]``.

    ``T`` is the run's step budget. With ``allow_truncated`` a diverged log
    that stops early is averaged over the part of the window it reached, or
    reports its last smoothed value when it never reached the window.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    steps, values = smoothed_oui(tlog, modules, alpha)
    lo, hi = 0.5 * fraction * tlog.total_steps, fraction * tlog.total_steps
    covered = steps.size > 0 and steps[-1] + 1 >= hi
    if not covered and not allow_truncated:
        last = int(steps[-1]) if steps.size else None
        raise ValueError(
            f"log {tlog.run_id} ends at step {last}, before the window end {hi:g}"
        )
    sel = (steps >= lo) & (steps <= hi)
    if sel.any():
        return float(values[sel].mean())
    if steps.size == 0:
        return float("nan")
    return float(values[-1])


def final_accuracy(tlog: TrajectoryLog) -> float:
    """Final validation accuracy; a diverged run counts as 0."""
    if tlog.diverged:
        return 0.0
    return float(tlog.meta["final_val_accuracy"])


def classify_regime(
    tlog: TrajectoryLog, low: float, high: float, late_fraction: float = 0.1, alpha=None
) -> str:
    """Place the late-window mean OUI in a band; a tie goes to the lower band."""
    if not 0.0 < low < high < 1.0:
        raise ValueError(f"bands must satisfy 0 < low < high < 1, got ({low}, {high})")
    steps, values = smoothed_oui(tlog, alpha=alpha)
    if values.size == 0:
        raise ValueError(f"log {tlog.run_id} has no OUI readings")
    start = steps[-1] - late_fraction * tlog.total_steps
    return classify_value(float(values[steps >= start].mean()), low, high)


def classify_value(value: float, low: float, high: float) -> str:
    if value <= low:
        return LOW_BAND
    if value <= high:
        return INTERMEDIATE_BAND
    return HIGH_BAND


# -- statistics -------------------------------------------------------------

def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_correlation(x, y) -> float:
    """Spearman's rho with average ranks for ties.

    Returns NaN when either input is constant (rho is undefined there).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return float("nan")
    return float(min(1.0, max(-1.0, float(rx @ ry) / denom)))


# -- separation -------------------------------------------------------------

@dataclass
class _Panel:
    """Seed x step matrix of smoothed OUI for one config, NaN past divergence."""

    steps: np.ndarray
    values: np.ndarray

    @property
    def mean(self):
        return np.nanmean(self.values, axis=0)

    @property
    def std(self):
        n = np.sum(~np.isnan(self.values), axis=0)
        out = np.full(self.steps.size, np.nan)
        ok = n >= 2
        if ok.any():
            out[ok] = np.nanstd(self.values[:, ok], axis=0, ddof=1)
        return out


def _panels(groups, modules, alpha):
    curves = {k: [smoothed_oui(l, modules, alpha) for l in logs] for k, logs in groups.items()}
    all_steps = np.unique(np.concatenate([s for cs in curves.values() for s, _ in cs]))
    panels = {}
    for k, cs in curves.items():
        mat = np.full((len(cs), all_steps.size), np.nan)
        for i, (s, v) in enumerate(cs):
            mat[i, np.searchsorted(all_steps, s)] = v
        panels[k] = _Panel(all_steps, mat)
    return all_steps, panels


def _separation_step(steps, panels, keys, multiplier, epsilon, window):
    """First step whose pairwise gaps all beat the band through ``window`` steps."""
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.array([panels[k].mean for k in keys])
        stds = np.array([panels[k].std for k in keys])
    have_noise = np.any(~np.isnan(stds), axis=0)
    band = np.full(steps.size, float(epsilon))
    if have_noise.any():
        band[have_noise] = multiplier * np.nanmax(stds[:, have_noise], axis=0)
    defined = np.all(~np.isnan(means), axis=0)
    ok = defined.copy()
    for a, b in itertools.combinations(range(len(keys)), 2):
        ok[defined] &= np.abs(means[a, defined] - means[b, defined]) > band[defined]
    valid = np.flatnonzero(defined)
    if valid.size == 0:
        return None
    last = steps[valid[-1]]
    for i in valid:
        t = steps[i]
        if t + window > last:
            break
        span = (steps >= t) & (steps <= t + window)
        if ok[span].all():
            return int(t)
    return None


@dataclass
class ConfigSummary:
    value: float
    seeds: List[int]
    early_oui_mean: float
    early_oui_std: float
    final_accuracy_mean: float
    final_accuracy_std: float
    diverged_seeds: List[int] = field(default_factory=list)
    regime: Optional[str] = None


@dataclass
class RegimeReport:
    axis: str
    budget: int
    fraction: float
    noise_multiplier: float
    persistence_steps: int
    configs: List[ConfigSummary]
    early_noise_band: float
    pairwise_early_gaps: List[dict]
    rank_correlation: Optional[float]
    separation_step: Optional[int]
    separated: bool
    pairwise_separation: List[dict]
    low_confidence: bool
    flags: List[str] = field(default_factory=list)

    def pair_separation(self, a: float, b: float) -> Optional[int]:
        for p in self.pairwise_separation:
            if {p["a"], p["b"]} == {float(a), float(b)}:
                return p["separation_step"]
        raise KeyError((a, b))

    def to_dict(self) -> dict:
        d = asdict(self)
        return _json_safe(d)

    def table(self) -> str:
        head = f"{self.axis:>14}  {'early OUI':>17}  {'final val acc':>17}  {'diverged':>8}  regime"
        lines = [head, "-" * len(head)]
        for c in self.configs:
            lines.append(
                f"{c.value:>14.6g}  {c.early_oui_mean:>8.4f} +/- {c.early_oui_std:<6.4f}"
                f"  {c.final_accuracy_mean:>8.4f} +/- {c.final_accuracy_std:<6.4f}"
                f"  {len(c.diverged_seeds):>8d}  {c.regime or '-'}"
            )
        lines.append("")
        rho = "undefined" if self.rank_correlation is None else f"{self.rank_correlation:+.4f}"
        lines.append(f"Spearman(early OUI @ f={self.fraction:g}, final val acc) = {rho}")
        sep = f"step {self.separation_step}" if self.separated else "not separated"
        lines.append(f"separation (all configs, band x{self.noise_multiplier:g}): {sep} of {self.budget}")
        for p in self.pairwise_separation:
            s = p["separation_step"]
            lines.append(
                f"  {p['a']:.6g} vs {p['b']:.6g}: " + (f"step {s}" if s is not None else "not separated")
            )
        if self.low_confidence:
            lines.append("LOW CONFIDENCE: no seed replication; noise band is the absolute epsilon")
        for f_ in self.flags:
            lines.append(f"flag: {f_}")
        return "\n".join(lines) + "\n"


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def separation_analysis(
    groups: Mapping[float, Sequence[TrajectoryLog]],
    noise_multiplier: float = 2.0,
    persistence: float = 0.05,
    epsilon: float = 0.01,
    fraction: float = 0.15,
    modules=None,
    alpha: Optional[float] = None,
    bands=None,
    axis: Optional[str] = None,
) -> RegimeReport:
    """Assemble a :class:`RegimeReport` from logs grouped by config value.

    The noise band at each step is ``noise_multiplier`` times the largest
    within-config standard deviation (ddof=1) of smoothed OUI across seeds.
    Without seed replication it falls back to ``epsilon`` and the report is
    flagged low-confidence.
    """
    if len(groups) < 2:
        raise ValueError("separation analysis needs at least 2 configs")
    keys = sorted(float(k) for k in groups)
    groups = {float(k): list(v) for k, v in groups.items()}
    if any(not groups[k] for k in keys):
        raise ValueError("every config needs at least one log")
    budget = max(l.total_steps for k in keys for l in groups[k])
    if axis is None:
        axis = groups[keys[0]][0].meta.get("axis", "value")
    window = max(1, math.ceil(persistence * budget))
    flags = []

    summaries = []
    early = {}
    for k in keys:
        logs = groups[k]
        eo = np.array([early_oui(l, fraction, modules, alpha, allow_truncated=True) for l in logs])
        acc = np.array([final_accuracy(l) for l in logs])
        diverged = [int(l.meta.get("seed", i)) for i, l in enumerate(logs) if l.diverged]
        if diverged:
            flags.append(f"{axis}={k:g}: {len(diverged)} diverged run(s), scored with accuracy 0")
        early[k] = eo
        regime = None
        if bands is not None:
            regime = classify_value(float(np.nanmean(eo)), *bands)
        summaries.append(
            ConfigSummary(
                value=k,
                seeds=[int(l.meta.get("seed", i)) for i, l in enumerate(logs)],
                early_oui_mean=float(np.nanmean(eo)),
                early_oui_std=float(np.std(eo, ddof=1)) if len(eo) > 1 else 0.0,
                final_accuracy_mean=float(acc.mean()),
                final_accuracy_std=float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                diverged_seeds=diverged,
                regime=regime,
            )
        )

    replicated = [k for k in keys if len(groups[k]) >= 2]
    low_confidence = not replicated
    if replicated:
        early_band = noise_multiplier * max(float(np.std(early[k], ddof=1)) for k in replicated)
    else:
        early_band = epsilon
    gaps = [
        {
            "a": a,
            "b": b,
            "gap": abs(float(np.nanmean(early[a])) - float(np.nanmean(early[b]))),
            "exceeds_band": abs(float(np.nanmean(early[a])) - float(np.nanmean(early[b]))) > early_band,
        }
        for a, b in itertools.combinations(keys, 2)
    ]

    steps, panels = _panels(groups, modules, alpha)
    sep = _separation_step(steps, panels, keys, noise_multiplier, epsilon, window)
    pairwise = []
    for a, b in itertools.combinations(keys, 2):
        s = _separation_step(steps, panels, [a, b], noise_multiplier, epsilon, window)
        pairwise.append({"a": a, "b": b, "separation_step": s})

    xs = [s.early_oui_mean for s in summaries]
    ys = [s.final_accuracy_mean for s in summaries]
    rho = rank_correlation(xs, ys) if np.all(np.isfinite(xs)) else float("nan")
    if math.isnan(rho):
        flags.append("rank correlation undefined (constant or missing early OUI / accuracy)")

    return RegimeReport(
        axis=axis,
        budget=budget,
        fraction=fraction,
        noise_multiplier=noise_multiplier,
        persistence_steps=window,
        configs=summaries,
        early_noise_band=early_band,
        pairwise_early_gaps=gaps,
        rank_correlation=None if math.isnan(rho) else rho,
        separation_step=sep,
        separated=sep is not None,
        pairwise_separation=pairwise,
        low_confidence=low_confidence,
        flags=flags,
    )


def report_for_grid(logs: Sequence[TrajectoryLog], grid: GridConfig) -> RegimeReport:
    bands = None
    if grid.band_low is not None:
        bands = (grid.band_low, grid.band_high)
    return separation_analysis(
        group_logs(logs),
        noise_multiplier=grid.noise_multiplier,
        persistence=grid.persistence,
        epsilon=grid.epsilon,
        fraction=grid.fraction,
        bands=bands,
        axis=grid.axis,
    )
