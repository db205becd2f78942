"""Training-time observables and the per-run trajectory log.

CSV layout (one file per run)::

    step,metric,module_id,value
    0,oui,layer0,0.48437500000000000
    0,train_loss,,0.69314718055994529

``module_id`` is empty for run-level metrics. Values are written with 17
significant digits (``format(v, ".17g")``), which round-trips every
float64 exactly. A JSON sidecar with the same stem carries the run id,
config fingerprint, config and run metadata.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import LogFormatError
from .metric import ActivationMask, OuiValue, activation_counts, compute_masks, oui_of_mask
from .network import ForwardTrace, Network, forward

LOG_FORMAT_VERSION = 1
CSV_HEADER = ("step", "metric", "module_id", "value")

OUI = "oui"
OUI_SMOOTHED = "oui_smoothed"
PROBE_OUI = "probe_oui"
DEAD_FRACTION = "dead_fraction"
MASK_CHANGE = "mask_change_rate"
TRAIN_LOSS = "train_loss"
VAL_LOSS = "val_loss"
VAL_ACCURACY = "val_accuracy"
WEIGHT_DECAY = "weight_decay"


def module_name(layer_index: int) -> str:
    return f"layer{layer_index}"


def format_value(value: float) -> str:
    return format(float(value), ".17g")


@dataclass
class TrajectoryLog:
    """Append-only ``(step, metric, module_id, value)`` records of one run.

    Each ``(metric, module_id)`` series has strictly increasing steps, and
    records are appended in non-decreasing step order overall.
    """

    run_id: str
    fingerprint: str = ""
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    records: List[Tuple[int, str, str, float]] = field(default_factory=list)
    _last: Dict[Tuple[str, str], int] = field(default_factory=dict, repr=False)

    def append(self, step: int, metric: str, value: float, module_id: str = "") -> None:
        step = int(step)
        key = (metric, module_id)
        if self.records and step < self.records[-1][0]:
            raise ValueError(f"step {step} recorded after step {self.records[-1][0]}")
        if key in self._last and step <= self._last[key]:
            raise ValueError(f"{metric}[{module_id}] already has step {self._last[key]}")
        if metric in (OUI, OUI_SMOOTHED, PROBE_OUI) and not 0.0 <= value <= 1.0:
            raise ValueError(f"OUI value {value} outside [0, 1]")
        self._last[key] = step
        self.records.append((step, metric, module_id, float(value)))

    def append_oui(self, reading: OuiValue, metric: str = OUI) -> None:
        self.append(reading.step, metric, reading.value, reading.module_id)

    def series(self, metric: str, module_id: str = "") -> Tuple[np.ndarray, np.ndarray]:
        steps = [r[0] for r in self.records if r[1] == metric and r[2] == module_id]
        values = [r[3] for r in self.records if r[1] == metric and r[2] == module_id]
        return np.asarray(steps, dtype=np.int64), np.asarray(values, dtype=np.float64)

    def modules(self, metric: str = OUI) -> List[str]:
        seen = []
        for _, m, mod, _ in self.records:
            if m == metric and mod not in seen:
                seen.append(mod)
        return seen

    def metrics(self) -> List[str]:
        return sorted({r[1] for r in self.records})

    @property
    def total_steps(self) -> int:
        return int(self.meta["total_steps"])

    @property
    def diverged(self) -> bool:
        return bool(self.meta.get("diverged", False))

    # -- serialization ------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for step, metric, mod, value in self.records:
            w.writerow((step, metric, mod, format_value(value)))
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "format_version": LOG_FORMAT_VERSION,
            "run_id": self.run_id,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "meta": self.meta,
        }

    def write(self, directory, stem: Optional[str] = None) -> Tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or self.run_id
        csv_path = directory / f"{stem}.csv"
        json_path = directory / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def read_log(csv_path) -> TrajectoryLog:
    """Load a run CSV and, when present, its JSON sidecar."""
    csv_path = Path(csv_path)
    side = csv_path.with_suffix(".json")
    info = {}
    if side.is_file():
        try:
            info = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise LogFormatError(f"{side}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    log = TrajectoryLog(
        run_id=info.get("run_id", csv_path.stem),
        fingerprint=info.get("fingerprint", ""),
        config=info.get("config", {}),
        meta=info.get("meta", {}),
    )
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise LogFormatError(f"{csv_path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise LogFormatError(f"{csv_path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                log.append(int(row[0]), row[1], float(row[3]), row[2])
            except ValueError as exc:
                raise LogFormatError(f"{csv_path}:{lineno}: {exc}") from None
    if "total_steps" not in log.meta and log.records:
        log.meta["total_steps"] = log.records[-1][0]
    return log


# -- observables ------------------------------------------------------------

def record_oui(trace: ForwardTrace, step: int) -> List[OuiValue]:
    """One OUI reading per relu module of ``trace``."""
    layers = trace.relu_layers
    if not layers:
        raise ValueError("trace has no relu layer")
    return [
        oui_of_mask(compute_masks(trace.preactivations[k]), module_name(k), step)
        for k in layers
    ]


@dataclass(frozen=True)
class MaskSnapshot:
    """Masks of every relu module on the fixed probe batch at one step."""

    masks: Dict[str, ActivationMask]
    step: int


def mask_snapshot(net: Network, probe, step: int) -> MaskSnapshot:
    trace = forward(net, probe)
    return MaskSnapshot(
        {module_name(k): compute_masks(trace.preactivations[k]) for k in trace.relu_layers},
        step,
    )


def mask_change_rate(prev: MaskSnapshot, curr: MaskSnapshot) -> float:
    """Fraction of mask bits, over all modules, that differ between snapshots."""
    if prev.masks.keys() != curr.masks.keys():
        raise ValueError("snapshots cover different modules")
    flipped = total = 0
    for name, a in prev.masks.items():
        b = curr.masks[name]
        if a.bits.shape != b.bits.shape:
            raise ValueError(f"module {name}: shape {a.bits.shape} vs {b.bits.shape}")
        flipped += int(np.count_nonzero(a.bits != b.bits))
        total += a.bits.size
    return flipped / total


def dead_fraction(mask: ActivationMask) -> float:
    """Fraction of units that fire for no sample in the batch."""
    s = activation_counts(mask).s
    return int(np.count_nonzero(s == 0)) / mask.width


def smooth(series: Sequence[float], alpha: float) -> np.ndarray:
    """Exponential moving average seeded with the first value."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    ema = Ema(alpha)
    return np.array([ema.update(v) for v in x])


class Ema:
    """Online form of :func:`smooth`."""

    def __init__(self, alpha: float):
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {alpha}")
        self.alpha = alpha
        self.value = None

    def update(self, x: float) -> float:
        # increment form keeps a constant input exactly constant
        if self.value is None or self.alpha == 1.0:
            self.value = float(x)
        else:
            self.value = self.value + self.alpha * (float(x) - self.value)
        return self.value


def mask_saturation_step(tlog: TrajectoryLog, ratio: float = 0.2, alpha: float = 0.1) -> Optional[int]:
    """First step where the smoothed mask change rate drops below ``ratio`` times its initial value."""
    steps, values = tlog.series(MASK_CHANGE)
    if steps.size == 0:
        return None
    sm = smooth(values, alpha)
    hit = np.flatnonzero(sm < ratio * sm[0])
    return int(steps[hit[0]]) if hit.size else None


def loss_settling_step(tlog: TrajectoryLog, tolerance: float = 0.05, metric: str = VAL_LOSS) -> Optional[int]:
    """First step where ``metric`` comes within ``tolerance`` (relative) of its final value."""
    steps, values = tlog.series(metric)
    if steps.size == 0:
        return None
    final = values[-1]
    hit = np.flatnonzero(np.abs(values - final) <= tolerance * abs(final))
    return int(steps[hit[0]])
