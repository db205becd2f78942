import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ouiscope import observers as obs
from ouiscope.config import DataConfig, ObserverConfig, OptimizerConfig, RunConfig
from ouiscope.errors import ConfigError
from ouiscope.screening import (
    HIGH_BAND,
    INTERMEDIATE_BAND,
    LOW_BAND,
    GridSpec,
    classify_regime,
    classify_value,
    early_oui,
    group_logs,
    rank_correlation,
    run_grid,
    separation_analysis,
)

from oracles import brute_spearman


def synthetic_log(values, value=0.0, seed=0, total=None, alpha=1.0, diverged=False, acc=0.9, modules=1):
    total = total if total is not None else len(values)
    tlog = obs.TrajectoryLog(
        f"v{value}_s{seed}",
        meta={"total_steps": total, "seed": seed, "alpha": alpha, "axis_value": value,
              "axis": "weight_decay", "diverged": diverged, "final_val_accuracy": 0.0 if diverged else acc},
    )
    for t, v in enumerate(values):
        for m in range(modules):
            tlog.append(t, obs.OUI, v, f"layer{m}")
    return tlog


def tiny_base(steps=40):
    return RunConfig(
        run_id="grid",
        widths=[2, 8, 2],
        batch_size=16,
        steps=steps,
        data=DataConfig(kind="spirals", n_per_class=50),
        optimizer=OptimizerConfig(0.1, 0.9, 1e-4),
        observers=ObserverConfig(probe_size=32, snapshot_every=5, eval_every=10),
    )


# -- early OUI ----------------------------------------------------------------

@pytest.mark.parametrize("f", [0.05, 0.15, 0.5, 1.0])
def test_early_oui_constant(f):
    assert early_oui(synthetic_log([0.5] * 200, alpha=0.1), fraction=f) == 0.5


def test_early_oui_linear_ramp():
    T = 1000
    ramp = [t / T for t in range(T + 1)]
    value = early_oui(synthetic_log(ramp, total=T), fraction=1.0, alpha=1.0)
    assert value == pytest.approx(0.75, abs=1e-12)


def test_early_oui_averages_modules():
    tlog = synthetic_log([0.2] * 100)
    two = obs.TrajectoryLog("two", meta={"total_steps": 100, "alpha": 1.0})
    for t in range(100):
        two.append(t, obs.OUI, 0.2, "layer0")
        two.append(t, obs.OUI, 0.6, "layer1")
    assert early_oui(two) == pytest.approx(0.4)
    assert early_oui(two, modules=["layer1"]) == 0.6
    assert early_oui(tlog) == 0.2


def test_early_oui_requires_window_coverage():
    short = synthetic_log([0.5] * 50, total=1000)
    with pytest.raises(ValueError, match="before the window end"):
        early_oui(short, fraction=0.15)
    assert early_oui(short, fraction=0.15, allow_truncated=True) == 0.5


def test_early_oui_fraction_domain():
    with pytest.raises(ValueError):
        early_oui(synthetic_log([0.5] * 10), fraction=0.0)


# -- rank correlation -----------------------------------------------------------

def test_rank_correlation_examples():
    assert rank_correlation([1, 2, 3, 4, 5], [2, 4, 6, 8, 10]) == 1.0
    assert rank_correlation([1, 2, 3, 4, 5], [5, 4, 3, 2, 1]) == -1.0
    assert math.isnan(rank_correlation([1, 1, 1], [1, 2, 3]))
    assert rank_correlation([1, 2, 3], [1, 10, 100]) == 1.0


def test_rank_correlation_brute_force_oracle():
    rng = random.Random(7)
    for _ in range(500):
        n = rng.randint(2, 20)
        x = [rng.randint(0, 6) for _ in range(n)]
        y = [rng.randint(0, 6) for _ in range(n)]
        expected = brute_spearman(x, y)
        got = rank_correlation(x, y)
        if math.isnan(expected):
            assert math.isnan(got)
        else:
            assert abs(got - expected) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=2, max_size=20))
def test_rank_correlation_symmetric_and_bounded(pairs):
    x, y = zip(*pairs)
    r1, r2 = rank_correlation(x, y), rank_correlation(y, x)
    if math.isnan(r1):
        assert math.isnan(r2)
    else:
        assert -1.0 <= r1 <= 1.0 and r1 == pytest.approx(r2, abs=1e-12)


# -- separation -----------------------------------------------------------------

def _groups(levels, seeds=3, steps=200, jitter=0.0):
    rng = np.random.default_rng(0)
    return {
        v: [synthetic_log(np.clip(level + jitter * rng.normal(size=steps), 0, 1), v, s) for s in range(seeds)]
        for v, level in levels.items()
    }


def test_separation_disjoint_constants():
    rep = separation_analysis(_groups({1e-4: 0.2, 1e-2: 0.8}))
    assert rep.separated and rep.separation_step == 0
    assert rep.pair_separation(1e-4, 1e-2) == 0
    assert not rep.low_confidence


def test_separation_duplicated_configs_never_separate():
    rep = separation_analysis(_groups({1e-4: 0.5, 1e-2: 0.5}))
    assert not rep.separated and rep.separation_step is None


def test_separation_after_crossing():
    T = 400
    groups = {
        1.0: [synthetic_log([0.5] * T, 1.0, s) for s in range(2)],
        2.0: [synthetic_log([0.5] * 100 + [0.9] * (T - 100), 2.0, s) for s in range(2)],
    }
    rep = separation_analysis(groups)
    assert rep.separation_step == 100


def test_separation_needs_persistence():
    T = 400
    blip = [0.5] * 50 + [0.9] * 5 + [0.5] * (T - 55)
    groups = {
        1.0: [synthetic_log([0.5] * T, 1.0, s) for s in range(2)],
        2.0: [synthetic_log(blip, 2.0, s) for s in range(2)],
    }
    assert separation_analysis(groups).separation_step is None
    assert separation_analysis(groups, persistence=0.01).separation_step == 50


def test_separation_noise_band_blocks_noisy_gap():
    groups = {
        1.0: [synthetic_log([0.3] * 100, 1.0, 0), synthetic_log([0.7] * 100, 1.0, 1)],
        2.0: [synthetic_log([0.6] * 100, 2.0, 0), synthetic_log([0.6] * 100, 2.0, 1)],
    }
    assert separation_analysis(groups).separation_step is None


def test_single_seed_is_low_confidence():
    rep = separation_analysis(_groups({1.0: 0.2, 2.0: 0.5}, seeds=1))
    assert rep.low_confidence and rep.separation_step == 0
    close = separation_analysis(_groups({1.0: 0.5, 2.0: 0.505}, seeds=1))
    assert not close.separated


def test_separation_permutation_invariant():
    groups = _groups({1e-5: 0.3, 1e-3: 0.5, 1e-1: 0.8}, jitter=0.02)
    rep1 = separation_analysis(groups)
    shuffled = {k: list(reversed(v)) for k, v in reversed(list(groups.items()))}
    rep2 = separation_analysis(shuffled)
    assert rep1.separation_step == rep2.separation_step
    assert rep1.rank_correlation == rep2.rank_correlation
    assert rep1.pairwise_separation == rep2.pairwise_separation


def test_separation_rejects_single_config():
    with pytest.raises(ValueError):
        separation_analysis(_groups({1.0: 0.5}))


def test_rank_correlation_in_report():
    groups = _groups({1.0: 0.2, 2.0: 0.4, 3.0: 0.6})
    for v, logs in groups.items():
        for l in logs:
            l.meta["final_val_accuracy"] = 1.0 - v / 10
    rep = separation_analysis(groups)
    assert rep.rank_correlation == -1.0
    d = rep.to_dict()
    assert d["configs"][0]["value"] == 1.0
    assert "Spearman" in rep.table()


def test_diverged_runs_scored_zero_and_flagged():
    groups = _groups({1.0: 0.3, 2.0: 0.6})
    groups[2.0][0] = synthetic_log([0.6] * 40, 2.0, 0, total=200, diverged=True)
    rep = separation_analysis(groups)
    assert rep.configs[1].diverged_seeds == [0]
    assert rep.configs[1].final_accuracy_mean == pytest.approx((0.0 + 0.9 + 0.9) / 3)
    assert any("diverged" in f for f in rep.flags)


# -- regimes --------------------------------------------------------------------

def test_classify_value_ties_go_low():
    assert classify_value(0.3, 0.3, 0.6) == LOW_BAND
    assert classify_value(0.6, 0.3, 0.6) == INTERMEDIATE_BAND
    assert classify_value(0.61, 0.3, 0.6) == HIGH_BAND


def test_classify_regime_uses_late_window():
    tlog = synthetic_log([0.9] * 90 + [0.1] * 10)
    assert classify_regime(tlog, 0.3, 0.6, late_fraction=0.09) == LOW_BAND
    with pytest.raises(ValueError):
        classify_regime(tlog, 0.6, 0.3)


# -- grid execution -------------------------------------------------------------

def test_run_grid_cardinality_and_determinism():
    spec = GridSpec(tiny_base(), "weight_decay", [1e-4, 1e-2], [0, 1])
    logs = run_grid(spec)
    assert len(logs) == 4
    assert [(l.meta["axis_value"], l.meta["seed"]) for l in logs] == [(1e-4, 0), (1e-4, 1), (1e-2, 0), (1e-2, 1)]
    again = run_grid(spec)
    assert all(a.to_csv() == b.to_csv() for a, b in zip(logs, again))
    assert list(group_logs(logs)) == [1e-4, 1e-2]


def test_run_grid_parallel_matches_serial():
    spec = GridSpec(tiny_base(20), "learning_rate", [0.05, 0.1], [0])
    serial = run_grid(spec)
    parallel = run_grid(spec, jobs=2)
    assert [l.to_csv() for l in serial] == [l.to_csv() for l in parallel]


def test_grid_rejects_single_value():
    with pytest.raises(ConfigError):
        GridSpec(tiny_base(), "weight_decay", [1e-4], [0])


def test_diverging_learning_rate_is_flagged():
    spec = GridSpec(tiny_base(60), "learning_rate", [0.05, 1e6], [0, 1])
    logs = run_grid(spec)
    assert [l.diverged for l in logs] == [False, False, True, True]
    rep = separation_analysis(group_logs(logs), fraction=0.5)
    assert rep.configs[1].final_accuracy_mean == 0.0
    assert any("diverged" in f for f in rep.flags)
