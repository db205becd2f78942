"""Synthetic datasets, a CSV loader and seeded batch iteration."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .errors import DatasetError

MIN_BATCH = 2


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] < 1:
            raise DatasetError("dataset is empty")
        if y.shape != (x.shape[0],):
            raise DatasetError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise DatasetError("labels must be integers")
        y = y.astype(np.int64)
        if self.num_classes < 2:
            raise DatasetError(f"need at least 2 classes, got {self.num_classes}")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")
        if not np.isfinite(x).all():
            raise DatasetError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.num_classes)


def make_blobs(k: int, dim: int, n_per_class: int, spread: float, seed: int) -> Dataset:
    """``k`` isotropic Gaussian clusters around centers drawn from ``U[-5, 5]^dim``."""
    if k < 2 or dim < 1 or n_per_class < 1:
        raise DatasetError(f"invalid blob sizes k={k}, dim={dim}, n_per_class={n_per_class}")
    if not spread >= 0:
        raise DatasetError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-5.0, 5.0, size=(k, dim))
    noise = rng.normal(0.0, 1.0, size=(k, n_per_class, dim))
    x = (centers[:, None, :] + spread * noise).reshape(k * n_per_class, dim)
    y = np.repeat(np.arange(k), n_per_class)
    return Dataset(x, y, k)


def make_spirals(
    turns: float, n_per_class: int, noise: float, seed: int, radius: float = 2.0
) -> Dataset:
    """Two interleaved 2-D spirals.

    Class 0 follows ``r(t) = radius * t, angle = 2*pi*turns*t`` for ``t``
    evenly spaced in ``[0.05, 1]``; class 1 is the same curve rotated by pi.
    Isotropic Gaussian noise of std ``noise`` is then added to every point.
    Arms of opposite classes are ``radius / (2 * turns)`` apart radially.
    """
    if not turns > 0:
        raise DatasetError(f"turns must be > 0, got {turns}")
    if n_per_class < 1:
        raise DatasetError(f"n_per_class must be >= 1, got {n_per_class}")
    if not noise >= 0:
        raise DatasetError(f"noise must be >= 0, got {noise}")
    if not radius > 0:
        raise DatasetError(f"radius must be > 0, got {radius}")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.05, 1.0, n_per_class)
    theta = 2.0 * np.pi * turns * t
    xs, ys = [], []
    for c in (0, 1):
        phase = theta + np.pi * c
        pts = radius * np.column_stack([t * np.cos(phase), t * np.sin(phase)])
        xs.append(pts)
        ys.append(np.full(n_per_class, c))
    x = np.concatenate(xs)
    x = x + noise * rng.normal(0.0, 1.0, size=x.shape)
    return Dataset(x, np.concatenate(ys), 2)


def train_val_split(ds: Dataset, val_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    if not 0.0 < val_fraction < 1.0:
        raise DatasetError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n_val = int(round(len(ds) * val_fraction))
    if n_val < 1 or n_val >= len(ds):
        raise DatasetError(f"split of {len(ds)} rows leaves an empty side")
    perm = np.random.default_rng(seed).permutation(len(ds))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


def standardize_stats(features) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and std; constant columns get std 1."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def load_delimited(
    path,
    label_column: int = -1,
    has_header: Optional[bool] = None,
    num_classes: Optional[int] = None,
    standardize: bool = True,
    stats: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Dataset:
    """Read a comma-separated file; one column holds integer labels.

    ``has_header=None`` sniffs: the first row is a header when any of its
    cells fails to parse as a number. Features are z-scored per column with
    ``stats`` when given (typically the training split's), otherwise with
    the file's own statistics.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not rows:
        raise DatasetError(f"{path}: file is empty")
    if has_header is None:
        has_header = not all(_is_number(c) for c in rows[0][1])
    if has_header:
        rows = rows[1:]
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    width = len(rows[0][1])
    feats, labels = [], []
    for lineno, row in rows:
        if len(row) != width:
            raise DatasetError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            values = [float(c) for c in row]
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric value in row {row}") from None
        label = values.pop(label_column)
        if label != int(label):
            raise DatasetError(f"{path}:{lineno}: label {label} is not an integer")
        if num_classes is not None and not 0 <= label < num_classes:
            raise DatasetError(f"{path}:{lineno}: label {int(label)} outside [0, {num_classes})")
        feats.append(values)
        labels.append(int(label))
    x = np.asarray(feats, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DatasetError(f"{path}: non-finite feature value")
    y = np.asarray(labels, dtype=np.int64)
    if np.any(y < 0):
        raise DatasetError(f"{path}: negative label")
    if num_classes is None:
        num_classes = max(int(y.max()) + 1, 2)
    if standardize:
        mean, std = stats if stats is not None else standardize_stats(x)
        x = (x - mean) / std
    return Dataset(x, y, num_classes)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def batch_iter(ds: Dataset, batch_size: int, epoch_seed: int) -> List[np.ndarray]:
    """Index batches for one epoch under a seeded permutation.

    A trailing batch shorter than ``MIN_BATCH`` is dropped.
    """
    if batch_size < MIN_BATCH:
        raise DatasetError(f"batch size must be >= {MIN_BATCH}, got {batch_size}")
    if batch_size > len(ds):
        raise DatasetError(f"batch size {batch_size} exceeds dataset size {len(ds)}")
    perm = np.random.default_rng(epoch_seed).permutation(len(ds))
    batches = [perm[i:i + batch_size] for i in range(0, len(ds), batch_size)]
    if len(batches[-1]) < MIN_BATCH:
        batches.pop()
    return batches


def epoch_seed(run_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([run_seed, epoch]).generate_state(1)[0])


def batch_stream(ds: Dataset, batch_size: int, run_seed: int) -> Iterator[np.ndarray]:
    """Endless sequence of index batches, re-permuting every epoch."""
    epoch = 0
    while True:
        yield from batch_iter(ds, batch_size, epoch_seed(run_seed, epoch))
        epoch += 1
