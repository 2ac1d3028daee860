"""Budgeted rules whose contact decision (and optionally policy) sees only ``W``.

Two modes:

``both``
    Contact rule and policy depend on ``W`` only. The policy is
    ``1(E(tau | W) > 0)`` and the priority score is the regression on ``W`` of
    the pseudo-outcome built with that coarse policy.
``contact-only``
    Only the contact rule is restricted; treatment still follows the full
    ``h*``. The score is the regression on ``W`` of the usual pseudo-outcome,
    an estimate of ``E(beta | W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cpb import (
    PseudoOutcomes,
    average_predict,
    crossfit_second_stage,
    pseudo_outcome,
    pseudo_outcomes,
)
from .dataset import Cohort, CovariateView
from .errors import ArgumentError
from .learners import FittedRegression, LearnerSpec
from .nuisance import NuisanceFits
from .policy import AupbcResult, PolicyEvaluation, aupbc, estimate_value

MODES = ("both", "contact-only")


@dataclass(frozen=True, eq=False)
class RestrictedScores:
    mode: str
    scores: np.ndarray
    pseudo: np.ndarray
    policy: np.ndarray
    view: CovariateView = field(repr=False)
    score_models: tuple[FittedRegression, ...] = field(default=(), repr=False)
    tau_models: tuple[FittedRegression, ...] = field(default=(), repr=False)

    def score_at(self, X) -> np.ndarray:
        """Restricted score at full-covariate rows ``X`` (parent column order)."""
        return average_predict(self.score_models, self.view.project(X))


def _check_view(cohort: Cohort, view: CovariateView, fits: NuisanceFits):
    if view.parent.columns != cohort.columns:
        raise ArgumentError("covariate view belongs to a different cohort")
    if fits.n != cohort.n:
        raise ArgumentError("nuisance values and cohort are misaligned")


def restricted_scores_both(
    fits: NuisanceFits,
    cohort: Cohort,
    view: CovariateView,
    spec: LearnerSpec = LearnerSpec(),
    swap: bool = True,
) -> RestrictedScores:
    """Scores and coarse policy when both rule components may use only ``W``.

    ``E(tau | W)`` is estimated by regressing ``tau_hat`` on ``W``; when ``W``
    is every covariate that regression is the identity and ``tau_hat`` is used
    as is, so the unrestricted pipeline is reproduced exactly.
    """
    _check_view(cohort, view, fits)
    if view.is_full:
        tau_models: tuple = ()
        tau_w = fits.tau
    else:
        tau_models = crossfit_second_stage(fits.tau, view.X, fits.folds, spec, swap)
        tau_w = average_predict(tau_models, view.X)
    h_w = (tau_w > 0).astype(float)
    phi_w = np.asarray(pseudo_outcome(cohort.treatment, cohort.outcome,
                                      fits.pi, fits.mu0, fits.mu1, h=h_w), dtype=float)
    score_models = crossfit_second_stage(phi_w, view.X, fits.folds, spec, swap)
    scores = average_predict(score_models, view.X)
    return RestrictedScores("both", scores, phi_w, h_w, view, score_models, tau_models)


def plugin_restricted_cpb(fits: NuisanceFits, view: CovariateView,
                          spec: LearnerSpec = LearnerSpec()) -> np.ndarray:
    """Debug path: ``tau_w * h_w - xi_w`` with ``xi_w`` from regressing ``tau * pi`` on ``W``."""
    tau_w = average_predict(crossfit_second_stage(fits.tau, view.X, fits.folds, spec), view.X)
    xi_w = average_predict(crossfit_second_stage(fits.tau * fits.pi, view.X, fits.folds, spec), view.X)
    return tau_w * (tau_w > 0) - xi_w


def restricted_scores_contact_only(
    fits: NuisanceFits,
    cohort: Cohort,
    view: CovariateView,
    spec: LearnerSpec = LearnerSpec(),
    phi: Optional[PseudoOutcomes] = None,
    swap: bool = True,
) -> RestrictedScores:
    """Scores estimating ``E(beta | W)``; treatment keeps the unrestricted ``h*``."""
    _check_view(cohort, view, fits)
    if phi is None:
        phi = pseudo_outcomes(cohort, fits)
    values = np.asarray(phi.values, dtype=float)
    score_models = crossfit_second_stage(values, view.X, fits.folds, spec, swap)
    scores = average_predict(score_models, view.X)
    return RestrictedScores("contact-only", scores, values, fits.h_star, view, score_models)


def restricted_value(batch, scores: RestrictedScores, delta: float, alpha: float = 0.05,
                     ties: str = "split") -> PolicyEvaluation:
    """Value of the restricted budgeted rule; the mode fixes the pseudo-outcome used.

    A coarse ``W`` puts whole groups of units on one score, so ties at the
    threshold are the rule rather than the exception. By default tied units
    share the leftover budget (a randomised contact rule); ``ties="under"``
    leaves them out instead.
    """
    return estimate_value(batch, scores.pseudo, scores.scores, delta, alpha, ties)


def restricted_aupbc(batch, scores: RestrictedScores, grid=None, alpha: float = 0.05,
                     ties: str = "split") -> AupbcResult:
    """AUPBC of a contact-only restricted rule, comparable to the unrestricted one."""
    if scores.mode != "contact-only":
        raise ArgumentError(
            "AUPBC is only defined for contact-only restriction; "
            "values with a restricted policy are not comparable across budgets"
        )
    return aupbc(batch, scores.pseudo, scores.scores, grid, alpha, ties)
