"""Single-run training loop with optional observers and decay controller.

Step ``t`` (0-based) draws training batch ``t``, records observables on the
parameters *before* update ``t``, lets the controller adjust decay, then
applies the SGD update. After the last update, a closing snapshot and
validation pass are recorded at step ``T``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import observers as obs
from .config import RunConfig
from .controller import ControllerConfig, controller_step
from .data import Dataset, batch_stream, load_delimited, make_blobs, make_spirals, standardize_stats, train_val_split
from .errors import ConfigError, DivergenceError
from .metric import oui_of_mask
from .network import Network, OptimizerState, backward, evaluate, forward, init_network, loss_softmax_ce, mlp_specs, sgd_step

log = logging.getLogger(__name__)

PROBE_STREAM = 0x5052  # keeps the probe draw independent of every other stream


@dataclass
class RunResult:
    log: obs.TrajectoryLog
    network: Network
    diverged: bool
    final_val_loss: float
    final_val_accuracy: float


def build_datasets(cfg: RunConfig) -> Tuple[Dataset, Dataset]:
    d = cfg.data
    if d.kind == "spirals":
        full = make_spirals(d.turns, d.n_per_class, d.noise, d.seed, d.radius)
    elif d.kind == "blobs":
        full = make_blobs(d.classes, d.dim, d.n_per_class, d.spread, d.seed)
    else:
        train = load_delimited(d.train_path, d.label_column, d.has_header, d.num_classes, standardize=False)
        stats = standardize_stats(train.features)
        train = Dataset((train.features - stats[0]) / stats[1], train.labels, train.num_classes)
        if d.val_path:
            val = load_delimited(
                d.val_path, d.label_column, d.has_header, train.num_classes, stats=stats
            )
            return train, val
        return train_val_split(train, d.val_fraction, d.seed)
    return train_val_split(full, d.val_fraction, d.seed)


def probe_batch(train: Dataset, size: int, data_seed: int) -> np.ndarray:
    size = min(size, len(train))
    rng = np.random.default_rng([data_seed, PROBE_STREAM])
    idx = np.sort(rng.choice(len(train), size=size, replace=False))
    return train.features[idx]


def train(
    cfg: RunConfig,
    *,
    observe: Optional[bool] = None,
    controller: Optional[ControllerConfig] = None,
    datasets: Optional[Tuple[Dataset, Dataset]] = None,
) -> RunResult:
    cfg.validate()
    if observe is None:
        observe = cfg.observers.enabled
    if controller is None:
        controller = cfg.controller
    train_ds, val_ds = datasets if datasets is not None else build_datasets(cfg)
    if cfg.widths[0] != train_ds.dim:
        raise ConfigError(f"widths[0]={cfg.widths[0]} but data has {train_ds.dim} features")
    if cfg.widths[-1] != train_ds.num_classes:
        raise ConfigError(f"widths[-1]={cfg.widths[-1]} but data has {train_ds.num_classes} classes")
    if cfg.batch_size > len(train_ds):
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds {len(train_ds)} training rows")

    net = init_network(mlp_specs(cfg.widths), cfg.seed)
    opt = OptimizerState.for_network(
        net,
        cfg.optimizer.learning_rate,
        cfg.optimizer.momentum,
        cfg.optimizer.per_layer(len(net.layers)),
    )
    relu = net.relu_layers
    names = [obs.module_name(k) for k in relu]
    oc = cfg.observers

    tlog = obs.TrajectoryLog(cfg.run_id, cfg.fingerprint(), cfg.to_dict())
    tlog.meta.update(
        total_steps=cfg.steps,
        seed=cfg.seed,
        modules=names,
        observed=bool(observe),
        oui_source=oc.oui_source,
        alpha=oc.alpha,
        diverged=False,
        divergence_step=None,
    )
    if controller is not None:
        tlog.meta["controller"] = {
            "target": controller.target,
            "eta": controller.eta,
            "direction": controller.direction,
            "convention": controller.convention,
            "cadence": controller.cadence,
            "wd_min": controller.wd_min,
            "wd_max": controller.wd_max,
            "alpha": controller.alpha,
        }

    probe = probe_batch(train_ds, oc.probe_size, cfg.data.seed) if observe else None
    oui_ema = {n: obs.Ema(oc.alpha) for n in names}
    ctrl_ema = {n: obs.Ema(controller.alpha) for n in names} if controller else {}
    prev_snap = None

    def snapshot(step):
        nonlocal prev_snap
        snap = obs.mask_snapshot(net, probe, step)
        for name in names:
            mask = snap.masks[name]
            tlog.append(step, obs.PROBE_OUI, oui_of_mask(mask).value, name)
            tlog.append(step, obs.DEAD_FRACTION, obs.dead_fraction(mask), name)
        if prev_snap is not None:
            tlog.append(step, obs.MASK_CHANGE, obs.mask_change_rate(prev_snap, snap))
        prev_snap = snap

    def validate(step):
        loss, acc = evaluate(net, val_ds)
        tlog.append(step, obs.VAL_LOSS, loss)
        tlog.append(step, obs.VAL_ACCURACY, acc)
        return loss, acc

    stream = batch_stream(train_ds, cfg.batch_size, cfg.seed)
    step = 0
    try:
        for step in range(cfg.steps):
            idx = next(stream)
            xb, yb = train_ds.features[idx], train_ds.labels[idx]
            trace = forward(net, xb)
            loss, _ = loss_softmax_ce(trace.logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at step {step}", step=step)

            readings = None
            if observe or controller is not None:
                source = trace if oc.oui_source == "train" or not observe else forward(net, probe)
                readings = obs.record_oui(source, step)
            if observe:
                for r in readings:
                    tlog.append_oui(r)
                    tlog.append(step, obs.OUI_SMOOTHED, oui_ema[r.module_id].update(r.value), r.module_id)
                tlog.append(step, obs.TRAIN_LOSS, loss)
                if step % oc.snapshot_every == 0:
                    snapshot(step)
                if step % oc.eval_every == 0:
                    validate(step)

            if controller is not None:
                for k, r in zip(relu, readings):
                    s = ctrl_ema[r.module_id].update(r.value)
                    if step > 0 and step % controller.cadence == 0:
                        opt.weight_decay[k] = controller_step(opt.weight_decay[k], s, controller)
                        tlog.append(step, "controller_input", s, r.module_id)
                    tlog.append(step, obs.WEIGHT_DECAY, opt.weight_decay[k], r.module_id)

            grads = backward(net, trace, yb)
            sgd_step(net, grads, opt, step=step)
        step = cfg.steps
        final_loss, final_acc = evaluate(net, val_ds)
        if observe:
            snapshot(step)
            tlog.append(step, obs.VAL_LOSS, final_loss)
            tlog.append(step, obs.VAL_ACCURACY, final_acc)
    except DivergenceError as exc:
        log.warning("run %s diverged at step %d: %s", cfg.run_id, step, exc)
        tlog.meta.update(diverged=True, divergence_step=step)
        final_loss, final_acc = float("nan"), 0.0

    tlog.meta.update(
        final_val_loss=None if tlog.diverged else final_loss,
        final_val_accuracy=final_acc,
    )
    return RunResult(tlog, net, tlog.diverged, final_loss, final_acc)
