"""Doubly robust estimation of the conditional potential benefit (CPB).

The CPB of a unit is the expected gain from switching its natural treatment to
the optimal one, ``beta(x) = tau(x) * (h*(x) - pi(x))``. It is estimated by
regressing a doubly robust pseudo-outcome on covariates (a DR-learner).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import Cohort, CovariateView, FoldAssignment
from .errors import ArgumentError, NumericError
from .learners import FittedRegression, LearnerSpec, fit_regression
from .nuisance import NuisanceFits


def pseudo_outcome(a, y, pi, mu0, mu1, h=None):
    """Doubly robust CPB pseudo-outcome.

    ``(h - pi) * (a/pi - (1-a)/(1-pi)) * (y - mu_a) + tau * (h - a)`` with
    ``tau = mu1 - mu0``. ``h`` defaults to ``1(tau > 0)``; passing another
    policy gives the coarsened variant used for covariate-restricted rules.
    Works elementwise on scalars or arrays.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    pi = np.asarray(pi, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if np.any((pi <= 0) | (pi >= 1)):
        raise NumericError("propensity must lie strictly inside (0, 1)")
    tau = mu1 - mu0
    if h is None:
        h = (tau > 0).astype(float)
    h = np.asarray(h, dtype=float)
    mu_a = np.where(a == 1, mu1, mu0)
    weight = a / pi - (1 - a) / (1 - pi)
    out = (h - pi) * weight * (y - mu_a) + tau * (h - a)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PseudoOutcomes:
    values: np.ndarray
    fits: NuisanceFits = field(repr=False)

    def __len__(self):
        return int(self.values.shape[0])


def pseudo_outcomes(cohort: Cohort, fits: NuisanceFits, h=None) -> PseudoOutcomes:
    if fits.n != cohort.n:
        raise ArgumentError(f"nuisance values cover {fits.n} units, cohort has {cohort.n}")
    phi = pseudo_outcome(cohort.treatment, cohort.outcome, fits.pi, fits.mu0, fits.mu1, h)
    phi = np.asarray(phi, dtype=float)
    phi.setflags(write=False)
    return PseudoOutcomes(phi, fits)


def plugin_cpb(fits: NuisanceFits) -> np.ndarray:
    """Plug-in CPB ``tau_hat * (h_hat - pi_hat)``; nonnegative by construction."""
    return fits.tau * (fits.h_star - fits.pi)


def suboptimal_prob(fits: NuisanceFits) -> np.ndarray:
    """Probability of not naturally receiving the estimated optimal treatment."""
    h = fits.h_star
    return h * (1 - fits.pi) + (1 - h) * fits.pi


def bias_decomposition(pi, mu0, mu1, pi_alt, mu0_alt, mu1_alt):
    """Three-term conditional bias of the pseudo-outcome under perturbed nuisances.

    Returns ``E(phi(alt) - phi(true) | X)`` written as a product-of-errors term,
    a CATE-propensity cross term and a policy-mismatch term, summed.
    Arguments are the true and alternative nuisance values at each ``x``.
    """
    pi, mu0, mu1 = (np.asarray(v, dtype=float) for v in (pi, mu0, mu1))
    pa, m0a, m1a = (np.asarray(v, dtype=float) for v in (pi_alt, mu0_alt, mu1_alt))
    tau, tau_alt = mu1 - mu0, m1a - m0a
    h, h_alt = (tau > 0).astype(float), (tau_alt > 0).astype(float)
    product = (h_alt - pa) * (
        (pa - pi) * (m1a - mu1) / pa + (pa - pi) * (m0a - mu0) / (1 - pa)
    )
    cross = (tau_alt - tau) * (pa - pi)
    mismatch = (h_alt - h) * tau
    return product + cross + mismatch


def crossfit_second_stage(
    targets: np.ndarray,
    features: np.ndarray,
    folds: Optional[FoldAssignment],
    spec: LearnerSpec,
    swap: bool = True,
) -> tuple[FittedRegression, ...]:
    """One regression per fold, each fitted on that fold's units only.

    With ``swap`` the caller averages all of them; without it only the first
    fold's model is kept (a single sample split).
    """
    targets = np.asarray(targets, dtype=float)
    features = np.asarray(features, dtype=float)
    if folds is None:
        return (fit_regression(spec, features, targets),)
    models = []
    for k in range(folds.k if swap else 1):
        idx = folds.test_index(k)
        models.append(fit_regression(spec, features[idx], targets[idx]))
    return tuple(models)


def average_predict(models: Sequence[FittedRegression], features) -> np.ndarray:
    return np.mean([m.predict(features) for m in models], axis=0)


@dataclass(frozen=True, eq=False)
class CpbModel:
    """Second-stage regression of pseudo-outcomes on a covariate view.

    ``predict`` takes rows in the parent cohort's full column order and
    averages the fold-wise regressions, so the fitted score is a single
    function of the view's columns.
    """

    models: tuple[FittedRegression, ...]
    target: CovariateView
    pseudo: PseudoOutcomes = field(repr=False)

    def predict_view(self, W) -> np.ndarray:
        return average_predict(self.models, W)

    def predict(self, X) -> np.ndarray:
        return self.predict_view(self.target.project(X))

    def scores(self) -> np.ndarray:
        """Estimated CPB for every unit of the training cohort."""
        return self.predict_view(self.target.X)


def dr_learn_cpb(
    cohort: Cohort,
    fits: NuisanceFits,
    target: Optional[CovariateView] = None,
    spec: LearnerSpec = LearnerSpec(),
    swap: bool = True,
    pseudo: Optional[PseudoOutcomes] = None,
) -> CpbModel:
    """DR-learner for the CPB (or its coarsening onto ``target``).

    Pseudo-outcomes come from the out-of-fold nuisances in ``fits``; each
    fold then serves as the batch sample for one second-stage regression and
    the results are averaged across folds when ``swap`` is on.
    """
    if target is None:
        target = CovariateView(cohort, cohort.columns)
    if target.parent is not cohort and target.parent.columns != cohort.columns:
        raise ArgumentError("covariate view belongs to a different cohort")
    if pseudo is None:
        pseudo = pseudo_outcomes(cohort, fits)
    models = crossfit_second_stage(pseudo.values, target.X, fits.folds, spec, swap)
    return CpbModel(models, target, pseudo)
