"""Datasets for logistic-regression experiments: CSV ingestion and synthetic draws."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import DataLoadError, DimensionError


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    provenance: str = ""

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class CsvSchema:
    """How to turn a delimited file into ``(X, y)``.

    ``categorical`` columns are expanded into 0/1 indicators for every level
    except the first in sorted order. All remaining non-label columns must be
    numeric.
    """

    label_column: str
    positive_label: str
    standardize: bool = False
    intercept: bool = False
    delimiter: str = ","
    categorical: tuple[str, ...] = field(default=())
    drop: tuple[str, ...] = field(default=())


def _standardize(X: np.ndarray, names: Sequence[str]) -> np.ndarray:
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DataLoadError(f"column {names[bad[0]]!r} has zero variance; cannot standardize")
    return (X - mean) / sd


def load_csv(path, schema: CsvSchema) -> Dataset:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=schema.delimiter)
            header = next(reader, None)
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DataLoadError(f"cannot read {path}: {exc}") from exc
    if not header:
        raise DataLoadError(f"{path}: missing header row")
    header = [h.strip() for h in header]
    for col in (schema.label_column, *schema.categorical, *schema.drop):
        if col not in header:
            raise DataLoadError(f"{path}: no column named {col!r}")
    if not rows:
        raise DataLoadError(f"{path}: no data rows")

    label_idx = header.index(schema.label_column)
    skip = {schema.label_column, *schema.drop}
    columns: list[np.ndarray] = []
    names: list[str] = []
    for j, name in enumerate(header):
        if name in skip:
            continue
        cells = []
        for i, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise DataLoadError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
            cells.append(row[j].strip())
        if name in schema.categorical:
            levels = sorted(set(cells))
            for level in levels[1:]:
                columns.append(np.array([c == level for c in cells], dtype=float))
                names.append(f"{name}={level}")
            continue
        values = np.empty(len(cells))
        for i, c in enumerate(cells):
            try:
                values[i] = float(c)
            except ValueError:
                raise DataLoadError(f"{path}: row {i + 2}, column {name!r}: non-numeric cell {c!r}") from None
            if not np.isfinite(values[i]):
                raise DataLoadError(f"{path}: row {i + 2}, column {name!r}: missing or non-finite value {c!r}")
        columns.append(values)
        names.append(name)

    labels = [row[label_idx].strip() for row in rows]
    y = np.array([lab == schema.positive_label for lab in labels], dtype=float)
    X = np.column_stack(columns) if columns else np.empty((len(rows), 0))

    notes = [f"source={path.name}", f"n={len(rows)}", f"label={schema.label_column}=={schema.positive_label!r}"]
    if schema.categorical:
        notes.append("drop-first indicators for " + ",".join(schema.categorical))
    if schema.drop:
        notes.append("dropped " + ",".join(schema.drop))
    if schema.standardize and X.shape[1]:
        X = _standardize(X, names)
        notes.append("standardized (sample sd, n-1 divisor)")
    if schema.intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
        names = ["intercept", *names]
        notes.append("intercept prepended")
    if X.shape[1] == 0:
        raise DataLoadError(f"{path}: no feature columns")
    return Dataset(X, y, tuple(names), "; ".join(notes))


def write_csv(dataset: Dataset, path, label_column: str = "y", delimiter: str = ",") -> None:
    """Write features and a 0/1 label column; floats use repr so reloading is exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow([*dataset.feature_names, label_column])
        for xi, yi in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in xi] + [str(int(yi))])


def synth_logistic(n: int, d: int, theta_true, seed: int, intercept: bool = False) -> Dataset:
    """Standard-normal covariates and Bernoulli labels from a known coefficient vector.

    With ``intercept=True`` the first of the ``d`` columns is all ones.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_true.shape != (d,):
        raise DimensionError(f"theta_true has shape {theta_true.shape}, expected ({d},)")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    names = [f"x{j}" for j in range(d)]
    if intercept:
        X[:, 0] = 1.0
        names[0] = "intercept"
    y = (rng.random(n) < expit(X @ theta_true)).astype(float)
    return Dataset(X, y, tuple(names), f"synthetic logistic n={n} d={d} seed={seed} intercept={intercept}")
