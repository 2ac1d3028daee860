"""Bounds on the budgeted value under bounded unmeasured confounding.

The sensitivity model allows the mean of ``Y(a)`` among units that did *not*
take ``a`` to differ from the observed-arm mean by at most ``gamma``. Under it
the value of the estimated rule lies in ``V +/- gamma * E(contact * c)``, where
``c`` is the probability of not naturally taking the optimal treatment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError
from .nuisance import NuisanceFits
from .policy import PolicyEvaluation, _outcome, _values, z_value


@dataclass(frozen=True)
class SensitivityBand:
    gamma: float
    delta: float
    value: float
    lower: float
    upper: float
    half_width: float
    suboptimal_mass: float
    plugin_suboptimal_mass: float
    width_bound: float
    gap_bound: float
    lower_ci: Optional[float] = None
    upper_ci: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "value": self.value,
            "lower": self.lower,
            "upper": self.upper,
            "lower_ci": self.lower_ci,
            "upper_ci": self.upper_ci,
            "half_width": self.half_width,
            "suboptimal_mass": self.suboptimal_mass,
            "plugin_suboptimal_mass": self.plugin_suboptimal_mass,
            "plugin_mass_within_budget": self.plugin_suboptimal_mass <= self.delta + 1e-12,
            "width_bound": self.width_bound,
            "gap_bound": self.gap_bound,
        }


def optimal_gap_bound(gamma: float, delta: float) -> float:
    """Worst-case value gap between the observational and the truly optimal rule."""
    if gamma < 0:
        raise ArgumentError(f"gamma must be >= 0, got {gamma}")
    if not 0 <= delta <= 1:
        raise ArgumentError(f"budget must lie in [0, 1], got {delta}")
    return gamma * (4 + delta)


def sensitivity_bounds(
    batch,
    phi,
    evaluation: PolicyEvaluation,
    fits: NuisanceFits,
    gamma: float,
    alpha: float = 0.05,
) -> SensitivityBand:
    """Band around ``evaluation.value`` for confounding of size ``gamma``.

    The half-width is ``gamma * P_n[contact * (h + (1 - 2h) * A)]``, the
    one-step estimate of ``E(contact * c)``: its conditional mean given ``X``
    is ``h(1 - pi) + (1 - h) pi``. Each summand lies in ``[0, 1]`` so the
    half-width never exceeds ``gamma`` times the contacted fraction.

    Endpoint intervals use the per-unit terms
    ``contact * (phi - q) + Y +/- gamma * contact * (h + (1 - 2h) A)``,
    centred, as influence values; the threshold's effect on the
    ``gamma`` term is ignored.
    """
    if gamma < 0:
        raise ArgumentError(f"gamma must be >= 0, got {gamma}")
    y = _outcome(batch)
    a = np.asarray(batch.treatment, dtype=float)
    phi = _values(phi)
    contact = evaluation.contact
    if not (y.shape == phi.shape == contact.shape == fits.pi.shape):
        raise ArgumentError("batch, pseudo-outcomes, contact rule and nuisances must be aligned")
    h = fits.h_star
    c_proxy = h + (1 - 2 * h) * a
    c_plugin = h * (1 - fits.pi) + (1 - h) * fits.pi
    mass = float(np.mean(contact * c_proxy))
    half = gamma * mass
    value = evaluation.value
    delta = evaluation.delta

    q = evaluation.threshold if delta < 1 else 0.0
    base = contact * (phi - q) + y
    z = z_value(alpha)
    n = y.shape[0]
    ends = []
    for sign in (-1.0, 1.0):
        infl = base + sign * gamma * contact * c_proxy
        sd = float(np.std(infl - infl.mean()))
        ends.append(value + sign * half + sign * z * sd / math.sqrt(n))
    return SensitivityBand(
        gamma=float(gamma),
        delta=delta,
        value=value,
        lower=value - half,
        upper=value + half,
        half_width=half,
        suboptimal_mass=mass,
        plugin_suboptimal_mass=float(np.mean(contact * c_plugin)),
        width_bound=2 * gamma * delta,
        gap_bound=optimal_gap_bound(gamma, delta),
        lower_ci=ends[0],
        upper_ci=ends[1],
    )
