"""Layer-wise weight-decay control from per-module OUI.

Control law, applied to each relu layer every ``cadence`` steps::

    wd <- clip(wd * exp(direction * eta * (oui_smoothed - target)), wd_min, wd_max)

With ``direction = +1`` a module whose OUI sits above ``target`` gets more
decay and one below gets less; ``direction = -1`` reverses that. ``eta = 0``
is the identity, so a controlled run with ``eta = 0`` reproduces the
uncontrolled run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ControllerConfig:
    target: float = 0.5
    eta: float = 1.0
    cadence: int = 10
    wd_min: float = 1e-6
    wd_max: float = 1e-1
    alpha: float = 0.1
    direction: int = 1

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ConfigError(f"controller target must be in (0, 1), got {self.target}")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ConfigError(f"controller eta must be finite and >= 0, got {self.eta}")
        if self.cadence < 1:
            raise ConfigError(f"controller cadence must be >= 1, got {self.cadence}")
        if not 0.0 < self.wd_min:
            raise ConfigError(f"wd_min must be > 0, got {self.wd_min}")
        if not self.wd_min <= self.wd_max or not math.isfinite(self.wd_max):
            raise ConfigError(f"controller bounds inverted: wd_min={self.wd_min} > wd_max={self.wd_max}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"controller alpha must be in (0, 1], got {self.alpha}")
        if self.direction not in (1, -1):
            raise ConfigError(f"controller direction must be +1 or -1, got {self.direction}")

    @property
    def convention(self) -> str:
        return "oui_above_target_increases_decay" if self.direction == 1 else "oui_above_target_decreases_decay"


def controller_step(wd: float, oui: float, cfg: ControllerConfig) -> float:
    if not wd > 0:
        raise ConfigError(f"current weight decay must be > 0, got {wd}")
    if not 0.0 <= oui <= 1.0:
        raise ValueError(f"OUI must lie in [0, 1], got {oui}")
    new = wd * math.exp(cfg.direction * cfg.eta * (oui - cfg.target))
    return min(max(new, cfg.wd_min), cfg.wd_max)


def controlled_training(run_cfg, ctrl_cfg: ControllerConfig, **kwargs):
    """Train ``run_cfg`` with ``ctrl_cfg`` steering every relu layer's decay.

    Returns the same :class:`~ouiscope.training.RunResult` as an
    uncontrolled run; the log additionally holds ``weight_decay`` per relu
    module at every step plus raw and smoothed OUI.
    """
    from .training import train

    return train(run_cfg, controller=ctrl_cfg, **kwargs)
