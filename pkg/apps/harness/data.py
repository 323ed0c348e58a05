"""CSV ingestion, per-column standardization and seeded train/test splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import structlog

from apps.numcore import Rng
from apps.shared.errors import DataError

logger = structlog.get_logger(__name__)

STD_FLOOR = 1e-8
TASKS = ("regression", "classification")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, label: str = "x") -> Standardizer:
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        for col in np.flatnonzero(std < STD_FLOOR):
            logger.warning("constant_column", column=int(col), kind=label, std=float(std[col]))
        return cls(mean=mean, std=np.maximum(std, STD_FLOOR))

    @classmethod
    def identity(cls, width: int) -> Standardizer:
        return cls(mean=np.zeros(width), std=np.ones(width))

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass(frozen=True)
class Dataset:
    """Raw rows plus the statistics used to standardize them."""

    x_raw: np.ndarray
    y_raw: np.ndarray
    task: str
    x_stats: Standardizer
    y_stats: Standardizer | None
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def x(self) -> np.ndarray:
        return self.x_stats.transform(self.x_raw[self.indices])

    @property
    def y(self) -> np.ndarray:
        rows = self.y_raw[self.indices]
        if self.y_stats is None:
            return rows.astype(int).reshape(-1)
        return self.y_stats.transform(rows)

    @property
    def input_dim(self) -> int:
        return self.x_raw.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.y_raw.max()) + 1 if self.task == "classification" else 0

    def restandardize(self) -> Dataset:
        """Recompute statistics on this dataset's own rows."""
        y_stats = None
        if self.task == "regression":
            y_stats = Standardizer.fit(self.y_raw[self.indices], "y")
        return replace(self, x_stats=Standardizer.fit(self.x_raw[self.indices], "x"), y_stats=y_stats)


def _cell(value: str, row: int, col: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise DataError(f"non-numeric cell {value!r}", row=row, col=col) from None


def _is_header(row: list[str]) -> bool:
    for value in row:
        try:
            float(value)
        except ValueError:
            return True
    return False


def parse_csv(path: str | Path, targets: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Numeric matrix split into inputs and the last ``targets`` columns; rows are 1-based."""
    try:
        with open(path, newline="") as handle:
            rows = [r for r in csv.reader(handle) if r and any(c.strip() for c in r)]
    except FileNotFoundError:
        raise DataError(f"no such data file: {path}") from None
    if rows and _is_header(rows[0]):
        first = 2
        rows = rows[1:]
    else:
        first = 1
    if not rows:
        raise DataError(f"empty data file: {path}")
    width = len(rows[0])
    if width <= targets:
        raise DataError(f"{width} columns leave no inputs for {targets} target(s)", row=first)
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        line = i + first
        if len(row) != width:
            raise DataError(f"ragged row: {len(row)} cells, expected {width}", row=line)
        values[i] = [_cell(v.strip(), line, j + 1) for j, v in enumerate(row)]
    return values[:, :-targets], values[:, -targets:]


def load_csv(path: str | Path, task: str = "regression", targets: int = 1) -> Dataset:
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    x, y = parse_csv(path, 1 if task == "classification" else targets)
    if task == "classification":
        labels = y.reshape(-1)
        if np.any(labels < 0) or np.any(labels != np.round(labels)):
            bad = int(np.flatnonzero((labels < 0) | (labels != np.round(labels)))[0])
            raise DataError("class labels must be non-negative integers", row=bad + 1)
    dataset = Dataset(
        x_raw=x,
        y_raw=y,
        task=task,
        x_stats=Standardizer.identity(x.shape[1]),
        y_stats=None,
        indices=np.arange(len(x)),
    )
    return dataset.restandardize()


def split(ds: Dataset, fraction: float = 0.9, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded permutation split; both halves use statistics from the train rows."""
    n = len(ds)
    if n < 2:
        raise DataError(f"need at least 2 rows to split, got {n}")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    order = ds.indices[Rng(seed).permutation(n)]
    train = replace(ds, indices=np.sort(order[:n_train])).restandardize()
    test = replace(train, indices=np.sort(order[n_train:]))
    return train, test
