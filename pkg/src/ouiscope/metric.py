"""Batch-based Overfitting-Underfitting Indicator (OUI).

For one module with ``d`` units evaluated on a batch of ``B`` samples:

* the activation mask is ``m[b, n] = 1{a[b, n] > 0}``,
* the activation count of unit ``n`` is ``s[n] = sum_b m[b, n]``,
* the minority count is ``u[n] = min(s[n], B - s[n])``,
* and the module's OUI is ``mean_n u[n] / floor(B / 2)``.

Everything up to the final division is integer arithmetic, so readings are
bit-reproducible and invariant to row/column order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .errors import InvalidBatchError, NumericError

__all__ = [
    "ActivationMask",
    "ActivationCounts",
    "MinorityCounts",
    "OuiValue",
    "compute_masks",
    "activation_counts",
    "minority_counts",
    "oui_of_mask",
    "oui_from_preactivations",
]


def _check_batch(batch_size: int) -> None:
    if batch_size < 2:
        raise InvalidBatchError(
            f"batch size must be >= 2 for OUI, got {batch_size}"
        )


@dataclass(frozen=True)
class ActivationMask:
    """Binary ``B x d`` matrix: which unit fires for which sample."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {bits.shape}")
        _check_batch(bits.shape[0])
        if bits.shape[1] < 1:
            raise ValueError("mask must have at least one unit")
        if bits.dtype != np.bool_:
            if not np.isin(bits, (0, 1)).all():
                raise ValueError("mask entries must be exactly 0 or 1")
            bits = bits.astype(np.bool_)
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def batch_size(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ActivationMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class ActivationCounts:
    s: np.ndarray
    batch_size: int

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.int64)
        if s.ndim != 1:
            raise ValueError("counts must be a vector")
        if np.any(s < 0) or np.any(s > self.batch_size):
            raise ValueError(f"counts must lie in [0, {self.batch_size}]")
        object.__setattr__(self, "s", s)


@dataclass(frozen=True)
class MinorityCounts:
    u: np.ndarray
    batch_size: int

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.int64)
        if u.ndim != 1:
            raise ValueError("minority counts must be a vector")
        if np.any(u < 0) or np.any(u > self.batch_size // 2):
            raise ValueError(
                f"minority counts must lie in [0, {self.batch_size // 2}]"
            )
        object.__setattr__(self, "u", u)


@dataclass(frozen=True)
class OuiValue:
    """One OUI reading of one module at one training step."""

    value: float
    module_id: Hashable = None
    step: int = 0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"OUI must lie in [0, 1], got {self.value}")


def compute_masks(preactivations) -> ActivationMask:
    """Strict sign test ``a > 0``; an exact zero counts as inactive."""
    a = np.asarray(preactivations, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"preactivations must be 2-D, got shape {a.shape}")
    _check_batch(a.shape[0])
    finite = np.isfinite(a)
    if not finite.all():
        row, col = (int(i) for i in np.argwhere(~finite)[0])
        raise NumericError(
            f"non-finite preactivation {a[row, col]} at (row={row}, column={col})"
        )
    return ActivationMask(a > 0)


def activation_counts(mask: ActivationMask) -> ActivationCounts:
    return ActivationCounts(
        mask.bits.sum(axis=0, dtype=np.int64), mask.batch_size
    )


def minority_counts(counts: ActivationCounts) -> MinorityCounts:
    u = np.minimum(counts.s, counts.batch_size - counts.s)
    return MinorityCounts(u, counts.batch_size)


def oui_of_mask(mask: ActivationMask, module_id=None, step: int = 0) -> OuiValue:
    _check_batch(mask.batch_size)
    u = minority_counts(activation_counts(mask)).u
    # single rounding: exact integer numerator over exact integer denominator
    total = int(u.sum())
    value = total / (mask.width * (mask.batch_size // 2))
    return OuiValue(value, module_id, step)


def oui_from_preactivations(preactivations, module_id=None, step: int = 0) -> OuiValue:
    return oui_of_mask(compute_masks(preactivations), module_id, step)
