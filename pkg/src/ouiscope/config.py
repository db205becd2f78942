"""Run, grid and controller configuration.

Configs are YAML mappings whose keys mirror the dataclasses below. Unknown
keys are errors. YAML 1.1 reads ``1e-5`` as a string, so numeric fields also
accept numeric strings.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import yaml

from .controller import ControllerConfig
from .errors import ConfigError


@dataclass
class DataConfig:
    kind: str = "spirals"  # spirals | blobs | csv
    seed: int = 0
    val_fraction: float = 0.2
    # spirals
    turns: float = 1.5
    n_per_class: int = 1000
    noise: float = 0.15
    radius: float = 2.0
    # blobs
    classes: int = 3
    dim: int = 2
    spread: float = 1.0
    # csv
    train_path: Optional[str] = None
    val_path: Optional[str] = None
    label_column: int = -1
    has_header: Optional[bool] = None
    num_classes: Optional[int] = None

    def validate(self):
        if self.kind not in ("spirals", "blobs", "csv"):
            raise ConfigError(f"data.kind must be spirals, blobs or csv, got {self.kind!r}")
        if self.kind == "csv" and not self.train_path:
            raise ConfigError("data.train_path is required for kind=csv")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"data.val_fraction must be in (0, 1), got {self.val_fraction}")


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: Union[float, List[float]] = 1e-4

    def validate(self, num_layers: int):
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ConfigError(f"optimizer.learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"optimizer.momentum must be in [0, 1), got {self.momentum}")
        wd = self.weight_decay
        if isinstance(wd, list):
            if len(wd) != num_layers:
                raise ConfigError(
                    f"optimizer.weight_decay lists {len(wd)} values for {num_layers} layers"
                )
            values = wd
        else:
            values = [wd]
        if any(not (math.isfinite(v) and v >= 0) for v in values):
            raise ConfigError(f"optimizer.weight_decay must be >= 0, got {wd}")

    def per_layer(self, num_layers: int) -> List[float]:
        if isinstance(self.weight_decay, list):
            return list(self.weight_decay)
        return [self.weight_decay] * num_layers


@dataclass
class ObserverConfig:
    enabled: bool = True
    probe_size: int = 256
    oui_source: str = "train"  # train | probe
    snapshot_every: int = 10
    eval_every: int = 10
    alpha: float = 0.1

    def validate(self):
        if self.oui_source not in ("train", "probe"):
            raise ConfigError(f"observers.oui_source must be train or probe, got {self.oui_source!r}")
        if self.probe_size < 2:
            raise ConfigError(f"observers.probe_size must be >= 2, got {self.probe_size}")
        if self.snapshot_every < 1 or self.eval_every < 1:
            raise ConfigError("observers cadences must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"observers.alpha must be in (0, 1], got {self.alpha}")


@dataclass
class RunConfig:
    run_id: str = "run"
    seed: int = 0
    widths: List[int] = field(default_factory=lambda: [2, 64, 64, 2])
    batch_size: int = 64
    steps: int = 1000
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    observers: ObserverConfig = field(default_factory=ObserverConfig)
    controller: Optional[ControllerConfig] = None
    output_dir: str = "runs"

    def validate(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ConfigError(f"widths must list >= 2 positive sizes, got {self.widths}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        self.data.validate()
        self.optimizer.validate(len(self.widths) - 1)
        self.observers.validate()
        if self.controller is not None:
            wd = self.optimizer.per_layer(len(self.widths) - 1)
            for k, v in enumerate(wd[:-1]):
                if not self.controller.wd_min <= v <= self.controller.wd_max:
                    raise ConfigError(
                        f"initial weight decay {v} of layer {k} outside controller bounds "
                        f"[{self.controller.wd_min}, {self.controller.wd_max}]"
                    )
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON config, excluding where output goes."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class GridConfig:
    axis: str = "weight_decay"  # weight_decay | learning_rate
    values: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=lambda: [0])
    fraction: float = 0.15
    noise_multiplier: float = 2.0
    persistence: float = 0.05
    epsilon: float = 0.01
    band_low: Optional[float] = None
    band_high: Optional[float] = None

    def validate(self):
        if self.axis not in ("weight_decay", "learning_rate"):
            raise ConfigError(f"grid.axis must be weight_decay or learning_rate, got {self.axis!r}")
        if len(self.values) < 2:
            raise ConfigError(f"grid.values needs at least 2 entries, got {len(self.values)}")
        if any(not (math.isfinite(v) and v > 0) for v in self.values):
            raise ConfigError(f"grid.values must be positive, got {self.values}")
        if len(set(self.values)) != len(self.values):
            raise ConfigError("grid.values contains duplicates")
        if not self.seeds:
            raise ConfigError("grid.seeds must list at least one seed")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"grid.fraction must be in (0, 1], got {self.fraction}")
        if (self.band_low is None) != (self.band_high is None):
            raise ConfigError("grid.band_low and grid.band_high go together")
        if self.band_low is not None and not 0.0 < self.band_low < self.band_high < 1.0:
            raise ConfigError("grid bands must satisfy 0 < band_low < band_high < 1")
        return self


@dataclass
class GridFile:
    grid: GridConfig
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self):
        self.run.validate()
        self.grid.validate()
        return self


# -- strict loading ---------------------------------------------------------

def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        errors = []
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(errors[0] if len(errors) == 1 else f"{where}: invalid value {value!r}")
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type {tp}")


def from_dict(cls, data, where: str = ""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key {prefix}{unknown[0]}")
    missing = [
        f.name for f in dataclasses.fields(cls)
        if f.name not in data
        and f.default is dataclasses.MISSING
        and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"missing required config key {prefix}{missing[0]}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(value, hints[key], f"{where}.{key}" if where else key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _read_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return data if data is not None else {}


def load_run_config(path) -> RunConfig:
    return from_dict(RunConfig, _read_yaml(path)).validate()


def load_grid_config(path) -> GridFile:
    return from_dict(GridFile, _read_yaml(path)).validate()


def dump_config(cfg) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False)
