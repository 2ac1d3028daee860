"""Budget-constrained contact rules, their values, Qini curves and AUPBC."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .dataset import Cohort
from .errors import ArgumentError

TIE_POLICIES = ("under", "split")


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def _outcome(batch) -> np.ndarray:
    return np.asarray(batch.outcome if isinstance(batch, Cohort) else batch, dtype=float)


def z_value(alpha: float) -> float:
    if not 0 < alpha < 1:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1 - alpha / 2))


@dataclass(frozen=True, eq=False)
class BudgetQuantile:
    """Threshold for a budget and the resulting per-unit contact weights.

    With ``ties="under"`` contact is ``1(score > threshold)``, so ties at the
    threshold are left out and the budget is never exceeded. With
    ``ties="split"`` the tied units share the remaining budget fractionally,
    i.e. they are contacted at random with a common probability.
    """

    delta: float
    threshold: float
    contacted_fraction: float
    contact: np.ndarray = field(repr=False)


def _budget_count(delta: float, n: int) -> int:
    delta = float(delta)
    if not 0.0 <= delta <= 1.0 or math.isnan(delta):
        raise ArgumentError(f"budget must lie in [0, 1], got {delta}")
    # floor on the shortest decimal form of delta, so 0.29 * 100 counts 29 units
    # (float multiplication gives 28.999...) and 0.3 * 8000 counts 2400
    return math.floor(Fraction(repr(delta)) * n)


def budget_quantile(scores, delta: float, ties: str = "under") -> BudgetQuantile:
    """Order-statistic threshold: the ``(floor(delta*n) + 1)``-th largest score.

    At full budget the threshold is ``min(scores) - 1`` so everyone is contacted.
    """
    s = np.asarray(scores, dtype=float).ravel()
    n = s.shape[0]
    if n == 0:
        raise ArgumentError("cannot threshold an empty score vector")
    if ties not in TIE_POLICIES:
        raise ArgumentError(f"ties must be one of {TIE_POLICIES}, got {ties!r}")
    k = _budget_count(delta, n)
    desc = np.sort(s)[::-1]
    q = float(desc[k]) if k < n else float(desc[-1] - 1.0)
    contact = (s > q).astype(float)
    if ties == "split" and k < n:
        tied = s == q
        spare = k - int(contact.sum())
        if spare > 0:
            contact[tied] = spare / int(tied.sum())
    contact.setflags(write=False)
    return BudgetQuantile(float(delta), q, float(contact.mean()), contact)


@dataclass(frozen=True, eq=False)
class PolicyEvaluation:
    delta: float
    value: float
    sigma: float
    n: int
    alpha: float
    threshold: float
    contacted_fraction: float
    contact: np.ndarray = field(repr=False)

    @property
    def se(self) -> float:
        return self.sigma / math.sqrt(self.n)

    @property
    def ci(self) -> tuple[float, float]:
        half = z_value(self.alpha) * self.se
        return (self.value - half, self.value + half)

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {
            "delta": self.delta,
            "value": self.value,
            "sigma": self.sigma,
            "se": self.se,
            "ci_lower": lo,
            "ci_upper": hi,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "contacted_fraction": self.contacted_fraction,
            "n": self.n,
        }


def _evaluate(y, phi, quant: BudgetQuantile, alpha: float) -> PolicyEvaluation:
    contact = quant.contact
    value = float(np.mean(contact * phi + y))
    q, delta = quant.threshold, quant.delta
    if delta == 1.0:
        # threshold is a sentinel below every score; it cancels exactly here
        q = 0.0
    centred = contact * (phi - q) + y - (value - delta * q)
    sigma = float(math.sqrt(np.mean(centred ** 2)))
    return PolicyEvaluation(delta, value, sigma, y.shape[0], alpha, quant.threshold,
                            quant.contacted_fraction, contact)


def estimate_value(batch, phi, scores, delta: float, alpha: float = 0.05,
                   ties: str = "under") -> PolicyEvaluation:
    """Value of contacting the top-``delta`` scores and treating them optimally.

    ``V = P_n[contact * phi + Y]`` with the plug-in variance
    ``P_n[(contact * (phi - q) + Y - (V - delta * q))**2]`` and a Wald interval.
    """
    y, phi, s = _outcome(batch), _values(phi), np.asarray(scores, dtype=float)
    if not (y.shape == phi.shape == s.shape):
        raise ArgumentError(
            f"misaligned inputs: {y.shape[0]} outcomes, {phi.shape[0]} pseudo-outcomes, "
            f"{s.shape[0]} scores"
        )
    z_value(alpha)
    return _evaluate(y, phi, budget_quantile(s, delta, ties), alpha)


@dataclass(frozen=True)
class GapReport:
    delta: float
    gap: float
    bound: float
    se: float
    within_bound: bool


def gap_to_unconstrained(at_delta: PolicyEvaluation, at_one: PolicyEvaluation) -> GapReport:
    """Shortfall of the budgeted rule against treating everyone optimally.

    The population gap is at most ``(1 - delta) * q``; ``within_bound`` allows
    two standard errors of slack on each value.
    """
    if at_one.delta != 1.0:
        raise ArgumentError("second evaluation must be at full budget")
    if at_delta.n != at_one.n:
        raise ArgumentError("evaluations come from different batches")
    if at_delta.delta == 1.0:
        return GapReport(1.0, at_one.value - at_delta.value, 0.0, 0.0, True)
    gap = at_one.value - at_delta.value
    bound = (1 - at_delta.delta) * at_delta.threshold
    slack = 2 * (at_one.se + at_delta.se)
    return GapReport(at_delta.delta, gap, bound, at_one.se + at_delta.se, gap <= bound + slack)


def default_grid(points: int = 101) -> np.ndarray:
    if points < 2:
        raise ArgumentError("a budget grid needs at least 2 points")
    return np.linspace(0.0, 1.0, int(points))


def check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float).ravel()
    if g.size < 2 or g[0] != 0.0 or g[-1] != 1.0:
        raise ArgumentError("budget grid must start at 0 and end at 1")
    if np.any(np.diff(g) <= 0):
        raise ArgumentError("budget grid must be strictly increasing")
    return g


def monotone_rearrangement(values) -> np.ndarray:
    """Increasing rearrangement of a curve sampled on an ascending grid."""
    return np.sort(np.asarray(values, dtype=float))


def trapezoid_weights(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    w = np.zeros_like(g)
    steps = np.diff(g)
    w[:-1] += steps / 2
    w[1:] += steps / 2
    return w


@dataclass(frozen=True)
class AupbcResult:
    aupbc: float
    aupbc_se: float
    aupbc_ci: tuple[float, float]
    kappa2: float
    aupbc_norm: Optional[float]
    aupbc_norm_se: Optional[float]
    aupbc_norm_ci: Optional[tuple[float, float]]
    zeta2: Optional[float]
    mean_phi: float
    n: int
    diagnostic: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("aupbc_ci", "aupbc_norm_ci"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


def _contact_matrix(scores, grid, ties):
    quants = [budget_quantile(scores, d, ties) for d in grid]
    contact = np.vstack([qt.contact for qt in quants])
    thresholds = np.array([qt.threshold for qt in quants])
    return contact, thresholds


def _aupbc_from_contacts(phi, contact, thresholds, grid, alpha) -> AupbcResult:
    n = phi.shape[0]
    w = trapezoid_weights(grid)
    q = np.where(grid < 1.0, thresholds, 0.0)
    gain = contact @ phi / n                              # P_n[phi * contact] per budget
    mean_phi = float(phi.mean())
    a_hat = float(w @ (gain - grid * mean_phi))
    # per-unit influence values, integrated over the grid
    per_unit = w @ (contact * phi[None, :] - q[:, None] * (contact - grid[:, None])) - phi / 2
    kappa2 = float(np.var(per_unit))
    z = z_value(alpha)
    a_se = math.sqrt(kappa2 / n)
    norm_hat = norm_se = norm_ci = zeta2 = None
    diagnostic = None
    if mean_phi > 0:
        norm_hat = float(2 * (w @ gain) / mean_phi - 1)
        zeta2 = float(np.var((2 * per_unit - norm_hat * phi) / mean_phi))
        norm_se = math.sqrt(zeta2 / n)
        norm_ci = (norm_hat - z * norm_se, norm_hat + z * norm_se)
        if not 0.0 <= norm_hat <= 1.0:
            diagnostic = f"normalized AUPBC {norm_hat:.4f} lies outside [0, 1]"
            warnings.warn(diagnostic, RuntimeWarning, stacklevel=3)
    else:
        diagnostic = (
            f"mean pseudo-outcome is {mean_phi:.4g} <= 0; normalized AUPBC is undefined"
        )
    return AupbcResult(a_hat, a_se, (a_hat - z * a_se, a_hat + z * a_se), kappa2,
                       norm_hat, norm_se, norm_ci, zeta2, mean_phi, n, diagnostic)


def aupbc(batch, phi, scores, grid=None, alpha: float = 0.05, ties: str = "under") -> AupbcResult:
    """Area between the Qini curve and the random-targeting line, with its normalised form.

    Integrals over the budget are trapezoid sums on ``grid``.
    """
    phi, s = _values(phi), np.asarray(scores, dtype=float)
    if phi.shape != s.shape or _outcome(batch).shape != s.shape:
        raise ArgumentError("pseudo-outcomes, scores and outcomes must be aligned")
    g = check_grid(default_grid() if grid is None else grid)
    contact, thresholds = _contact_matrix(s, g, ties)
    return _aupbc_from_contacts(phi, contact, thresholds, g, alpha)


@dataclass(frozen=True, eq=False)
class QiniReport:
    delta_grid: np.ndarray
    evaluations: tuple[PolicyEvaluation, ...] = field(repr=False)
    area: AupbcResult

    @property
    def v_raw(self) -> np.ndarray:
        return np.array([e.value for e in self.evaluations])

    @property
    def v_monotone(self) -> np.ndarray:
        return monotone_rearrangement(self.v_raw)

    @property
    def se(self) -> np.ndarray:
        return np.array([e.se for e in self.evaluations])

    def budget_for_fraction_of_peak(self, fraction: float = 0.8) -> float:
        return budget_for_fraction_of_peak(self.delta_grid, self.v_monotone, fraction)

    def to_dict(self) -> dict:
        cis = [e.ci for e in self.evaluations]
        out = {
            "delta_grid": self.delta_grid.tolist(),
            "v_raw": self.v_raw.tolist(),
            "v_monotone": self.v_monotone.tolist(),
            "se": self.se.tolist(),
            "ci_lower": [c[0] for c in cis],
            "ci_upper": [c[1] for c in cis],
            "threshold": [e.threshold for e in self.evaluations],
            "contacted_fraction": [e.contacted_fraction for e in self.evaluations],
        }
        out.update(self.area.to_dict())
        return out

    def csv_rows(self):
        cis = [e.ci for e in self.evaluations]
        yield ("delta", "v_raw", "v_monotone", "se", "ci_lower", "ci_upper")
        for row in zip(self.delta_grid, self.v_raw, self.v_monotone, self.se, *zip(*cis)):
            yield tuple(repr(float(v)) for v in row)


def qini_curve(batch, phi, scores, grid=None, alpha: float = 0.05,
               ties: str = "under") -> QiniReport:
    """Estimated value of the optimal budgeted rule across a grid of budgets."""
    y, phi, s = _outcome(batch), _values(phi), np.asarray(scores, dtype=float)
    if not (y.shape == phi.shape == s.shape):
        raise ArgumentError("outcomes, pseudo-outcomes and scores must be aligned")
    g = check_grid(default_grid() if grid is None else grid)
    quants = [budget_quantile(s, d, ties) for d in g]
    evals = tuple(_evaluate(y, phi, qt, alpha) for qt in quants)
    contact = np.vstack([qt.contact for qt in quants])
    thresholds = np.array([qt.threshold for qt in quants])
    area = _aupbc_from_contacts(phi, contact, thresholds, g, alpha)
    return QiniReport(g, evals, area)


def budget_for_fraction_of_peak(grid, values, fraction: float = 0.8) -> float:
    """Smallest budget at which the curve gains ``fraction`` of its total rise.

    Linear interpolation between grid points; ``values`` should be monotone.
    """
    g = np.asarray(grid, dtype=float)
    v = np.asarray(values, dtype=float)
    rise = v[-1] - v[0]
    if rise <= 0:
        return float("nan")
    target = v[0] + fraction * rise
    j = int(np.argmax(v >= target))
    if j == 0:
        return float(g[0])
    lo, hi = v[j - 1], v[j]
    t = 0.0 if hi == lo else (target - lo) / (hi - lo)
    return float(g[j - 1] + t * (g[j] - g[j - 1]))


def margin_diagnostic(tau, scores, threshold, radii: Sequence[float] = (0.01, 0.05, 0.1, 0.25)) -> dict:
    """Share of units with ``|tau|`` or ``|score - threshold|`` within each radius.

    Purely descriptive: mass piling up near zero signals that the plug-in
    decision rules are fragile there.
    """
    tau = np.abs(np.asarray(tau, dtype=float))
    gap = np.abs(np.asarray(scores, dtype=float) - threshold)
    return {
        "radius": list(radii),
        "tau_near_zero": [float(np.mean(tau <= r)) for r in radii],
        "score_near_threshold": [float(np.mean(gap <= r)) for r in radii],
    }
