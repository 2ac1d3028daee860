"""Cross-fitted propensity and outcome regressions."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Cohort, FoldAssignment
from .errors import ArgumentError, ParseError, PositivityError
from .learners import FittedRegression, LearnerSpec, fit_regression

DEFAULT_EPS = 0.01
CSV_COLUMNS = ("unit", "fold", "pi_hat", "mu0_hat", "mu1_hat", "tau_hat", "h_star")


@dataclass(frozen=True)
class FoldModels:
    """Nuisance regressions fitted on every fold except ``fold``."""

    fold: int
    propensity: FittedRegression
    mu0: FittedRegression
    mu1: FittedRegression


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    """Per-unit out-of-fold nuisance predictions.

    ``pi`` is clipped to ``[eps, 1 - eps]``. ``tau`` and ``h_star`` are
    derived, with ``h_star = 1`` exactly when ``tau > 0``.
    """

    pi: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    eps: float = DEFAULT_EPS
    folds: Optional[FoldAssignment] = None
    models: tuple[FoldModels, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ArgumentError(f"clip level must lie in (0, 0.5), got {self.eps}")
        pi = np.clip(np.asarray(self.pi, dtype=float), self.eps, 1 - self.eps)
        arrays = {"pi": pi, "mu0": self.mu0, "mu1": self.mu1}
        n = pi.shape[0]
        for name, values in arrays.items():
            values = np.array(values, dtype=float, copy=True).ravel()
            if values.shape != (n,):
                raise ArgumentError(f"{name} has {values.shape[0]} entries, expected {n}")
            if not np.all(np.isfinite(values)):
                raise ArgumentError(f"{name} contains non-finite values")
            values.setflags(write=False)
            object.__setattr__(self, name, values)
        if self.folds is not None and self.folds.n != n:
            raise ArgumentError("fold assignment does not match the number of units")

    @classmethod
    def from_arrays(cls, pi, mu0, mu1, eps: float = DEFAULT_EPS, folds=None) -> "NuisanceFits":
        return cls(pi, mu0, mu1, eps, folds)

    @property
    def n(self) -> int:
        return int(self.pi.shape[0])

    @property
    def tau(self) -> np.ndarray:
        return self.mu1 - self.mu0

    @property
    def h_star(self) -> np.ndarray:
        return (self.tau > 0).astype(float)

    def mu_observed(self, treatment) -> np.ndarray:
        a = np.asarray(treatment)
        return np.where(a == 1, self.mu1, self.mu0)

    def shifted(self, pi: float = 0.0, mu: float = 0.0) -> "NuisanceFits":
        """Copy with constant offsets added (deliberate mis-specification)."""
        return NuisanceFits(self.pi + pi, self.mu0 + mu, self.mu1 + mu, self.eps, self.folds)

    # -- prediction at new covariates, averaging the fold-wise models --
    def _require_models(self):
        if not self.models:
            raise ArgumentError("these nuisance values carry no fitted models (loaded from file?)")

    def predict_pi(self, X) -> np.ndarray:
        self._require_models()
        raw = np.mean([m.propensity.predict(X) for m in self.models], axis=0)
        return np.clip(raw, self.eps, 1 - self.eps)

    def predict_tau(self, X) -> np.ndarray:
        self._require_models()
        return np.mean([m.mu1.predict(X) - m.mu0.predict(X) for m in self.models], axis=0)

    def predict_h(self, X) -> np.ndarray:
        return (self.predict_tau(X) > 0).astype(float)

    def to_csv(self, path) -> None:
        fold = self.folds.assignment if self.folds is not None else np.full(self.n, -1)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for i in range(self.n):
                writer.writerow([
                    i, int(fold[i]), repr(float(self.pi[i])), repr(float(self.mu0[i])),
                    repr(float(self.mu1[i])), repr(float(self.tau[i])), int(self.h_star[i]),
                ])

    @classmethod
    def from_csv(cls, path, eps: float = DEFAULT_EPS, seed: int = 0) -> "NuisanceFits":
        """Read values written by :meth:`to_csv`; fold models are not restored."""
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in ("pi_hat", "mu0_hat", "mu1_hat") if c not in (reader.fieldnames or [])]
            if missing:
                raise ParseError(f"{path}: nuisance file lacks column(s) {missing}")
            rows = list(reader)
        try:
            pi = [float(r["pi_hat"]) for r in rows]
            mu0 = [float(r["mu0_hat"]) for r in rows]
            mu1 = [float(r["mu1_hat"]) for r in rows]
            fold = [int(r["fold"]) for r in rows] if rows and "fold" in rows[0] else None
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from None
        folds = None
        if fold is not None and min(fold) >= 0:
            folds = FoldAssignment(max(fold) + 1, np.array(fold), seed)
        return cls(pi, mu0, mu1, eps, folds)


def _fit_fold(cohort: Cohort, folds: FoldAssignment, fold: int,
              spec_propensity: LearnerSpec, spec_outcome: LearnerSpec) -> FoldModels:
    train = folds.train_index(fold)
    X, a, y = cohort.X[train], cohort.treatment[train], cohort.outcome[train]
    arms = [np.flatnonzero(a == arm) for arm in (0, 1)]
    for arm, idx in enumerate(arms):
        if idx.size == 0:
            raise PositivityError(
                f"nuisance: training complement of fold {fold} has no units with treatment {arm}"
            )
    return FoldModels(
        fold,
        fit_regression(spec_propensity, X, a.astype(float)),
        fit_regression(spec_outcome, X[arms[0]], y[arms[0]]),
        fit_regression(spec_outcome, X[arms[1]], y[arms[1]]),
    )


def crossfit_nuisances(
    cohort: Cohort,
    folds: FoldAssignment,
    spec_propensity: LearnerSpec = LearnerSpec(),
    spec_outcome: LearnerSpec = LearnerSpec(),
    eps: float = DEFAULT_EPS,
    n_jobs: int = 1,
) -> NuisanceFits:
    """Fit ``pi``, ``mu0``, ``mu1`` on each training complement and predict out of fold.

    The propensity is the chosen learner regressing ``A`` on ``X`` and is
    clipped to ``[eps, 1 - eps]``; outcome models use the arm-specific
    subsample of the training complement.
    """
    if not 0 < eps < 0.5:
        raise ArgumentError(f"clip level must lie in (0, 0.5), got {eps}")
    if folds.n != cohort.n:
        raise ArgumentError(f"fold assignment covers {folds.n} units, cohort has {cohort.n}")

    def work(fold):
        return _fit_fold(cohort, folds, fold, spec_propensity, spec_outcome)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            models = tuple(pool.map(work, range(folds.k)))
    else:
        models = tuple(work(k) for k in range(folds.k))

    pi = np.empty(cohort.n)
    mu0 = np.empty(cohort.n)
    mu1 = np.empty(cohort.n)
    for m in models:
        test = folds.test_index(m.fold)
        Xt = cohort.X[test]
        pi[test] = m.propensity.predict(Xt)
        mu0[test] = m.mu0.predict(Xt)
        mu1[test] = m.mu1.predict(Xt)
    return NuisanceFits(pi, mu0, mu1, eps, folds, models)

