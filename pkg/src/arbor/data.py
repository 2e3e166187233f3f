"""Observed datasets: n rows over the m leaf variables.

Column ``j`` (0-based) holds leaf label ``j + 1``. Rows may carry weights,
which lets an exact distribution stand in for a sample (each support point
a row, its probability the weight).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DataError

CONTINUOUS = "continuous"
DISCRETE = "discrete"


@dataclass(frozen=True, eq=False)
class Dataset:
    values: np.ndarray
    kind: str
    states: int | None = None
    names: tuple | None = None
    weights: np.ndarray | None = None
    hidden: dict | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise DataError(f"unknown dataset kind {self.kind!r}")
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise DataError("dataset values must be a 2-D array")
        if self.kind == DISCRETE:
            if vals.size and not np.all(vals == np.round(vals)):
                raise DataError("discrete values must be integers")
            vals = vals.astype(np.int64)
            states = self.states
            if states is None:
                states = int(vals.max()) + 1 if vals.size else 1
            if vals.size and (vals.min() < 0 or vals.max() >= states):
                bad = np.argwhere((vals < 0) | (vals >= states))[0]
                raise DataError(
                    f"value {vals[tuple(bad)]} at row {bad[0]}, column {bad[1]} "
                    f"outside state space 0..{states - 1}"
                )
            object.__setattr__(self, "states", int(states))
        else:
            vals = vals.astype(float)
            if not np.all(np.isfinite(vals)):
                raise DataError("continuous values must be finite")
        object.__setattr__(self, "values", vals)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"X{j + 1}" for j in range(vals.shape[1])))
        elif len(self.names) != vals.shape[1]:
            raise DataError("one name per column required")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (vals.shape[0],) or np.any(w < 0):
                raise DataError("weights must be a nonnegative vector, one per row")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def discrete(self) -> bool:
        return self.kind == DISCRETE

    @cached_property
    def row_weights(self) -> np.ndarray:
        return np.ones(self.n) if self.weights is None else self.weights

    @property
    def total_weight(self) -> float:
        """Effective sample size (the ``n`` entering BIC)."""
        return float(self.row_weights.sum())

    @cached_property
    def compressed(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct discrete rows and their summed weights."""
        if not self.discrete:
            raise DataError("row compression applies to discrete data only")
        if self.n == 0:
            return self.values, self.row_weights
        uniq, inv = np.unique(self.values, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=self.row_weights, minlength=len(uniq))
        return uniq, w

    @cached_property
    def second_moment(self) -> np.ndarray:
        """Weighted uncentred second moment ``sum_k w_k x_k x_k^T / sum_k w_k``."""
        X = self.values.astype(float)
        w = self.row_weights
        return (X * w[:, None]).T @ X / w.sum()

    def subset(self, rows) -> Dataset:
        w = None if self.weights is None else self.weights[rows]
        return Dataset(self.values[rows], self.kind, self.states, self.names, w)


def read_csv(path, kind: str, states: int | None = None) -> Dataset:
    """Read a headered CSV; an optional ``weight`` column holds row weights."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    wcol = header.index("weight") if "weight" in header else None
    cols = [j for j in range(len(header)) if j != wcol]
    try:
        table = np.array([[float(r[j]) for j in range(len(header))] for r in rows], dtype=float)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: non-numeric or ragged row ({exc})") from None
    table = table.reshape(len(rows), len(header))
    weights = table[:, wcol] if wcol is not None else None
    return Dataset(table[:, cols], kind, states, tuple(header[j] for j in cols), weights)


def write_csv(path, data: Dataset, include_weights: bool = True) -> None:
    fmt = str if data.discrete else (lambda x: repr(float(x)))
    header = list(data.names)
    with_w = include_weights and data.weights is not None
    if with_w:
        header.append("weight")
    lines = [",".join(header)]
    for k, row in enumerate(data.values):
        cells = [fmt(x) for x in row]
        if with_w:
            cells.append(repr(float(data.weights[k])))
        lines.append(",".join(cells))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
