"""
Dataset ingestion, seeded splitting, standardization and the synthetic generator.

Labels are always the last column of a CSV unless a target column is given.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from poisonlab.errors import DatasetError

logger = logging.getLogger(__name__)

RATIO_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (n×m) and continuous labels ``y`` (n)."""

    X: np.ndarray
    y: np.ndarray
    column_names: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise DatasetError(f"features must be a 2-D matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx])

    def replace_rows(self, indices: Sequence[int], X_rows: np.ndarray, y_rows: np.ndarray) -> "Dataset":
        """Return a copy with the given rows overwritten (replacement poisoning)."""
        idx = np.asarray(indices, dtype=int)
        X = self.X.copy()
        y = self.y.copy()
        X[idx] = X_rows
        y[idx] = y_rows
        return replace(self, X=X, y=y)

    def append(self, X_rows: np.ndarray, y_rows: np.ndarray) -> "Dataset":
        """Return a copy with extra rows at the end (injection poisoning)."""
        X_rows = np.asarray(X_rows, dtype=float).reshape(-1, self.m)
        return replace(
            self,
            X=np.vstack([self.X, X_rows]),
            y=np.concatenate([self.y, np.asarray(y_rows, dtype=float).reshape(-1)]),
        )


# The raw CSV contents use the same container.
RawDataset = Dataset


@dataclass(frozen=True)
class SplitBundle:
    train: Dataset
    val: Dataset
    test: Dataset
    seed: int
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray


@dataclass(frozen=True)
class Scaler:
    """Column means and population standard deviations, features first, label last."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, data: Dataset) -> Dataset:
        X = (data.X - self.mean[:-1]) / self.std[:-1]
        y = (data.y - self.mean[-1]) / self.std[-1]
        return replace(data, X=X, y=y)

    def inverse_labels(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y) * self.std[-1] + self.mean[-1]


def _resolve_target(header: Sequence[str], n_cols: int, target_col: Union[int, str, None]) -> int:
    if target_col is None:
        return n_cols - 1
    if isinstance(target_col, int) or (isinstance(target_col, str) and target_col.lstrip("-").isdigit()):
        idx = int(target_col)
        if idx < 0:
            idx += n_cols
        if not 0 <= idx < n_cols:
            raise DatasetError(f"target column index {target_col} out of range for {n_cols} columns")
        return idx
    if target_col not in header:
        raise DatasetError(f"target column '{target_col}' not found in header")
    return list(header).index(target_col)


def load_csv(
    path: Union[str, os.PathLike],
    has_header: bool = True,
    target_col: Union[int, str, None] = None,
    drop_cols: Sequence[str] = (),
) -> RawDataset:
    """
    Load a numeric CSV file; the target column (default: last) becomes the labels.

    Args:
        path: CSV file path.
        has_header: Whether the first row holds column names.
        target_col: Index or name of the label column.
        drop_cols: Named columns to skip entirely (e.g. an ``is_poison`` flag).

    Returns:
        RawDataset: Features, labels and column names (label name last).

    Raises:
        DatasetError: Missing file, empty body, ragged rows or a non-numeric cell.
            Cell positions are reported 1-based as (data row, column).
    """
    if not os.path.exists(path):
        raise DatasetError(f"file not found: {path}")

    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        rows = [row for row in csv.reader(f) if row and any(cell.strip() for cell in row)]

    header: list[str] = []
    if has_header and rows:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
    if not rows:
        raise DatasetError("empty body")

    n_cols = len(header) if header else len(rows[0])
    if n_cols < 2:
        raise DatasetError(f"need at least 2 columns, found {n_cols}")
    if not header:
        header = [f"col_{j}" for j in range(n_cols)]

    missing = [name for name in drop_cols if name not in header]
    if missing:
        raise DatasetError(f"columns to drop not found in header: {missing}")
    dropped = {header.index(name) for name in drop_cols}

    values = np.zeros((len(rows), n_cols), dtype=float)
    for i, row in enumerate(rows, start=1):
        if len(row) != n_cols:
            raise DatasetError(f"row {i} has {len(row)} cells, expected {n_cols}")
        for j, cell in enumerate(row, start=1):
            if j - 1 in dropped:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise DatasetError(f"non-numeric cell {cell!r} at ({i}, {j})") from None
            if not math.isfinite(value):
                raise DatasetError(f"non-finite cell {cell!r} at ({i}, {j})")
            values[i - 1, j - 1] = value

    kept_cols = [j for j in range(n_cols) if j not in dropped]
    if len(kept_cols) < 2:
        raise DatasetError(f"need at least 2 columns after dropping {list(drop_cols)}")
    if target_col is None:
        target = kept_cols[-1]
    else:
        target = _resolve_target(header, n_cols, target_col)
        if target in dropped:
            raise DatasetError(f"target column {target_col!r} is also dropped")
    feature_cols = [j for j in kept_cols if j != target]
    names = tuple(header[j] for j in feature_cols) + (header[target],)
    logger.info("loaded %s: %d rows, %d features", path, values.shape[0], len(feature_cols))
    return Dataset(X=values[:, feature_cols], y=values[:, target], column_names=names)


def save_csv(
    data: Dataset,
    path: Union[str, os.PathLike],
    extra_columns: Optional[dict[str, Sequence]] = None,
) -> None:
    """Write features, then label, then any extra columns (e.g. ``is_poison``)."""
    names = list(data.column_names) or [f"x{j}" for j in range(data.m)] + ["y"]
    extra_columns = extra_columns or {}
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names + list(extra_columns))
        for i in range(data.n):
            row = [repr(float(v)) for v in data.X[i]] + [repr(float(data.y[i]))]
            row += [str(col[i]).lower() if isinstance(col[i], (bool, np.bool_)) else col[i]
                    for col in extra_columns.values()]
            writer.writerow(row)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(raw: RawDataset, ratios: Sequence[float], seed: int) -> SplitBundle:
    """
    Shuffle rows with ``seed`` and cut them into train/val/test partitions.

    Train and val sizes are ``round(r·n)``; test takes the remainder.
    """
    if len(ratios) != 3:
        raise DatasetError(f"expected three ratios (train, val, test), got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise DatasetError(f"ratios must be non-negative, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > RATIO_TOLERANCE:
        raise DatasetError(f"ratios must sum to 1, got {sum(ratios)}")
    if raw.n < 3:
        raise DatasetError(f"need at least 3 rows to split, got {raw.n}")

    n_train = _round_half_up(ratios[0] * raw.n)
    n_val = _round_half_up(ratios[1] * raw.n)
    n_test = raw.n - n_train - n_val
    if min(n_train, n_val, n_test) <= 0:
        raise DatasetError(
            f"empty partition disallowed: sizes ({n_train}, {n_val}, {n_test}) from ratios {tuple(ratios)}"
        )

    perm = np.random.default_rng(seed).permutation(raw.n)
    train_idx = perm[:n_train]
    val_idx = perm[n_train:n_train + n_val]
    test_idx = perm[n_train + n_val:]
    return SplitBundle(
        train=raw.subset(train_idx),
        val=raw.subset(val_idx),
        test=raw.subset(test_idx),
        seed=seed,
        train_indices=train_idx,
        val_indices=val_idx,
        test_indices=test_idx,
    )


def fit_scaler(data: Dataset) -> Scaler:
    """Column statistics of ``data``; zero-variance columns keep a scale of 1."""
    if data.n == 0:
        raise DatasetError("cannot fit a scaler on an empty training partition")
    table = np.column_stack([data.X, data.y])
    mean = table.mean(axis=0)
    std = table.std(axis=0)
    degenerate = std <= np.finfo(float).eps * np.maximum(1.0, np.abs(mean))
    std = np.where(degenerate, 1.0, std)
    return Scaler(mean=mean, std=std)


def standardize(bundle: SplitBundle) -> Tuple[SplitBundle, Scaler]:
    """Standardize all partitions with statistics of the clean training partition."""
    scaler = fit_scaler(bundle.train)
    scaled = replace(
        bundle,
        train=scaler.transform(bundle.train),
        val=scaler.transform(bundle.val),
        test=scaler.transform(bundle.test),
    )
    return scaled, scaler


def gen_synthetic(
    n: int,
    seed: int,
    slope: float = 0.8,
    noise_std: float = 1.2,
    low: float = -5.0,
    high: float = 5.0,
) -> Dataset:
    """One-feature data: x ~ U(low, high), y = slope·x + N(0, noise_std²)."""
    if n < 0:
        raise DatasetError(f"n must be non-negative, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=n)
    y = slope * x + rng.normal(0.0, noise_std, size=n)
    return Dataset(X=x.reshape(n, 1), y=y, column_names=("x", "y"))
