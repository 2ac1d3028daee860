"""Observational cohorts, covariate views and cross-fitting folds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, ParseError, PositivityError, SchemaError


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Schema:
    covariates: tuple[str, ...]
    treatment: str
    outcome: str

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = list(self.covariates) + [self.treatment, self.outcome]
        if len(set(names)) != len(names):
            raise SchemaError(f"column names must be distinct, got {names}")


@dataclass(frozen=True, eq=False)
class Cohort:
    """Tabular observations ``(X, A, Y)`` with named covariate columns.

    Arrays are copied and made read-only on construction, so a cohort can be
    shared between threads without locking.
    """

    columns: tuple[str, ...]
    X: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    treatment_name: str = "a"
    outcome_name: str = "y"

    def __post_init__(self):
        columns = tuple(self.columns)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        a = np.asarray(self.treatment)
        y = np.asarray(self.outcome, dtype=float)
        n = y.shape[0]
        if X.shape != (n, len(columns)):
            raise SchemaError(
                f"covariate matrix has shape {X.shape}, expected ({n}, {len(columns)})"
            )
        if a.shape != (n,):
            raise SchemaError(f"treatment has {a.shape[0]} entries, expected {n}")
        if n == 0:
            raise ArgumentError("cohort must contain at least one unit")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ParseError("non-finite covariate or outcome values")
        a_float = a.astype(float)
        if not np.all((a_float == 0) | (a_float == 1)):
            raise ParseError("treatment must contain only 0 and 1")
        if a_float.min() == a_float.max():
            raise PositivityError(
                f"all units have treatment {int(a_float[0])}; both arms are required"
            )
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "treatment", _frozen(a_float.astype(np.int8), np.int8))
        object.__setattr__(self, "outcome", _frozen(y))

    @property
    def n(self) -> int:
        return int(self.outcome.shape[0])

    @property
    def schema(self) -> Schema:
        return Schema(self.columns, self.treatment_name, self.outcome_name)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.X[:, self.columns.index(name)]
        except ValueError:
            raise SchemaError(f"unknown covariate {name!r}; have {list(self.columns)}") from None

    def with_column(self, name: str, values) -> "Cohort":
        """Return a new cohort with one extra covariate appended."""
        if name in self.columns or name in (self.treatment_name, self.outcome_name):
            raise SchemaError(f"column {name!r} already exists")
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        return Cohort(
            self.columns + (name,),
            np.hstack([self.X, values]),
            self.treatment,
            self.outcome,
            self.treatment_name,
            self.outcome_name,
        )

    def subset(self, index) -> "Cohort":
        return Cohort(
            self.columns,
            self.X[index],
            self.treatment[index],
            self.outcome[index],
            self.treatment_name,
            self.outcome_name,
        )


@dataclass(frozen=True, eq=False)
class CovariateView:
    """A coarsening of the covariates to a named subset.

    An empty selection is legal and stands for the constant covariate: any
    regression on it is intercept-only.
    """

    parent: Cohort
    selected: tuple[str, ...] = field(default=())

    @property
    def X(self) -> np.ndarray:
        idx = [self.parent.columns.index(c) for c in self.selected]
        return self.parent.X[:, idx]

    @property
    def is_full(self) -> bool:
        return set(self.selected) == set(self.parent.columns)

    @property
    def is_empty(self) -> bool:
        return len(self.selected) == 0

    def project(self, X: np.ndarray) -> np.ndarray:
        """Restrict a full covariate matrix (parent column order) to the view."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            # a vector is many rows of a one-column cohort, otherwise a single row
            X = X[:, None] if len(self.parent.columns) == 1 else X[None, :]
        idx = [self.parent.columns.index(c) for c in self.selected]
        return X[:, idx]


def select_covariates(cohort: Cohort, names: Sequence[str]) -> CovariateView:
    names = tuple(names)
    unknown = [c for c in names if c not in cohort.columns]
    if unknown:
        raise SchemaError(f"unknown covariate(s) {unknown}; have {list(cohort.columns)}")
    if len(set(names)) != len(names):
        raise SchemaError(f"duplicate covariate names in {list(names)}")
    return CovariateView(cohort, names)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    k: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "assignment", _frozen(self.assignment, np.int64))

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(n: int, k: int = 2, seed: int = 0) -> FoldAssignment:
    """Balanced uniform-random fold assignment, reproducible from ``seed``.

    Units are permuted with a PCG64 generator and dealt round-robin, so fold
    sizes differ by at most one.
    """
    n, k = int(n), int(k)
    if k < 2:
        raise ArgumentError(f"fold count must be at least 2, got {k}")
    if k > n:
        raise ArgumentError(f"fold count {k} exceeds unit count {n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    return FoldAssignment(k, assignment, int(seed))


def _parse_float(cell: str, row: int, name: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"row {row}: column {name!r} has non-numeric value {cell!r}", row) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}: column {name!r} has non-finite value {cell!r}", row)
    return value


def load_csv(path, schema: Schema) -> Cohort:
    """Read a cohort from a headed CSV file.

    Row numbers in parse errors count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty; a header row is required") from None
        wanted = list(schema.covariates) + [schema.treatment, schema.outcome]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
        pos = [header.index(c) for c in wanted]
        rows = []
        for i, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise ParseError(f"row {i}: expected {len(header)} fields, got {len(record)}", i)
            rows.append([_parse_float(record[p].strip(), i, c) for p, c in zip(pos, wanted)])
    if not rows:
        raise ArgumentError(f"{path} has no data rows")
    data = np.array(rows, dtype=float)
    d = len(schema.covariates)
    a = data[:, d]
    bad = np.flatnonzero((a != 0) & (a != 1))
    if bad.size:
        row = int(bad[0]) + 1
        raise ParseError(f"row {row}: treatment {schema.treatment!r} must be 0 or 1", row)
    return Cohort(schema.covariates, data[:, :d], a, data[:, d + 1], schema.treatment, schema.outcome)


def write_csv(cohort: Cohort, path) -> None:
    """Write a cohort so that :func:`load_csv` reproduces it bit for bit."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(cohort.columns) + [cohort.treatment_name, cohort.outcome_name])
        for x, a, y in zip(cohort.X, cohort.treatment, cohort.outcome):
            writer.writerow([repr(float(v)) for v in x] + [int(a), repr(float(y))])
