"""Synthetic scenarios with known CPB, plus analytic and Monte Carlo oracles.

All scenarios draw ``X ~ Unif(-2, 2)``, ``A | X ~ Bernoulli(pi(X))`` and
``Y(a) = (a - pi(X)) tau(X) + eps`` with Gaussian ``eps``, so ``E(Y | X) = 0``.

=========  ==========================================  ================
id         pi(x)                                       tau(x)
=========  ==========================================  ================
S1         1/2                                         x
S1star     1 - |x|/2                                   1
S2         1/2                                         (3/16) x^5
S2star     1(x>0)(1 - (x/2)^4) + 1(x<=0)(x/2)^4         (3/2) x
=========  ==========================================  ================

S1/S1star share ``beta(x) = |x|/2`` and S2/S2star share
``beta(x) = (3/32)|x|^5``.

``confounded`` builds on S1 with a hidden ``U ~ Bernoulli(1/2)`` that shifts
the treatment log-odds by ``confounding_treatment * (2U - 1)`` and both
potential outcomes by ``confounding * (2U - 1)``. Potential outcomes and ``U``
are kept on :class:`SimulatedCohort` for oracle use only; estimators should
receive ``.cohort``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit, logit

from .dataset import Cohort
from .errors import ArgumentError
from .policy import budget_for_fraction_of_peak, default_grid, trapezoid_weights

SCENARIOS = ("S1", "S1star", "S2", "S2star", "confounded")
X_LOW, X_HIGH = -2.0, 2.0
MC_BLOCK = 1 << 16

Rule = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ScenarioSpec:
    id: str = "S1"
    n: int = 1000
    seed: int = 0
    noise_sd: float = 1.0
    confounding: float = 0.5
    confounding_treatment: float = 1.0

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ArgumentError(f"unknown scenario {self.id!r}; expected one of {SCENARIOS}")
        if self.n < 1:
            raise ArgumentError(f"n must be >= 1, got {self.n}")
        if self.noise_sd < 0:
            raise ArgumentError(f"noise_sd must be >= 0, got {self.noise_sd}")

    @property
    def base(self) -> str:
        return "S1" if self.id == "confounded" else self.id


def _x(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, 0] if X.ndim == 2 else X


def structural_pi(scenario: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if scenario in ("S1", "S2"):
        return np.full_like(x, 0.5)
    if scenario == "S1star":
        return 1 - np.abs(x) / 2
    if scenario == "S2star":
        quart = (x / 2) ** 4
        return np.where(x > 0, 1 - quart, quart)
    raise ArgumentError(f"unknown scenario {scenario!r}")


def structural_tau(scenario: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if scenario == "S1":
        return x.copy()
    if scenario == "S1star":
        return np.ones_like(x)
    if scenario == "S2":
        return 3 / 16 * x ** 5
    if scenario == "S2star":
        return 1.5 * x
    raise ArgumentError(f"unknown scenario {scenario!r}")


@dataclass(frozen=True)
class Truth:
    """Population functions of one scenario, evaluated pointwise in ``x``."""

    spec: ScenarioSpec

    def _shift_probs(self, x):
        lam_a = self.spec.confounding_treatment
        base = logit(np.clip(structural_pi(self.spec.base, x), 1e-12, 1 - 1e-12))
        return expit(base + lam_a), expit(base - lam_a)   # P(A=1 | X, U=1), P(A=1 | X, U=0)

    def _u_mean_given_arm(self, x):
        """E(2U - 1 | X, A = a) for a = 0, 1."""
        if self.spec.id != "confounded":
            z = np.zeros_like(np.asarray(x, dtype=float))
            return z, z
        p1, p0 = self._shift_probs(x)
        u1_given_a1 = p1 / (p1 + p0)
        u1_given_a0 = (1 - p1) / ((1 - p1) + (1 - p0))
        return 2 * u1_given_a0 - 1, 2 * u1_given_a1 - 1

    def pi(self, x) -> np.ndarray:
        """Observational propensity P(A = 1 | X)."""
        x = _x(x)
        if self.spec.id != "confounded":
            return structural_pi(self.spec.base, x)
        p1, p0 = self._shift_probs(x)
        return (p1 + p0) / 2

    def counterfactual_mean(self, a: int, x) -> np.ndarray:
        """E(Y(a) | X)."""
        x = _x(x)
        return (a - structural_pi(self.spec.base, x)) * structural_tau(self.spec.base, x)

    def mu(self, a: int, x) -> np.ndarray:
        """E(Y | X, A = a), the identified outcome regression."""
        x = _x(x)
        shift = self._u_mean_given_arm(x)[a]
        return self.counterfactual_mean(a, x) + self.spec.confounding * shift

    def nu(self, a: int, x) -> np.ndarray:
        """E(Y(a) | X, A = 1 - a)."""
        x = _x(x)
        shift = self._u_mean_given_arm(x)[1 - a]
        return self.counterfactual_mean(a, x) + self.spec.confounding * shift

    def m(self, x) -> np.ndarray:
        x = _x(x)
        p = self.pi(x)
        return p * self.mu(1, x) + (1 - p) * self.mu(0, x)

    def tau(self, x) -> np.ndarray:
        x = _x(x)
        return self.mu(1, x) - self.mu(0, x)

    def h_star(self, x) -> np.ndarray:
        return (self.tau(x) > 0).astype(float)

    def beta(self, x) -> np.ndarray:
        x = _x(x)
        return self.tau(x) * (self.h_star(x) - self.pi(x))

    def phi(self, cohort: Cohort) -> np.ndarray:
        """Pseudo-outcome evaluated at the true nuisances."""
        from .cpb import pseudo_outcome

        x = cohort.column(cohort.columns[0])
        return np.asarray(pseudo_outcome(cohort.treatment, cohort.outcome, self.pi(x),
                                         self.mu(0, x), self.mu(1, x)), dtype=float)

    def conditional_value(self, contact, policy, x) -> np.ndarray:
        """E(Y(d(contact, policy)) | X) from counterfactual means; no identification assumed."""
        x = _x(x)
        mu0d, mu1d = self.counterfactual_mean(0, x), self.counterfactual_mean(1, x)
        m = self.m(x)
        return contact * (policy * (mu1d - mu0d) + mu0d - m) + m

    def gamma(self, points: int = 20001) -> float:
        """Brute-force ``max_a sup_x |nu_a(x) - mu_a(x)|`` over a fine grid."""
        x = np.linspace(X_LOW, X_HIGH, points)
        return float(max(np.max(np.abs(self.nu(a, x) - self.mu(a, x))) for a in (0, 1)))


@dataclass(frozen=True, eq=False)
class SimulatedCohort:
    cohort: Cohort
    spec: ScenarioSpec
    potential_outcomes: np.ndarray = field(repr=False)   # shape (n, 2): Y(0), Y(1)
    hidden: np.ndarray = field(repr=False)               # U (zeros unless confounded)

    @property
    def truth(self) -> Truth:
        return Truth(self.spec)


def _draw(spec: ScenarioSpec, n: int, rng: np.random.Generator):
    x = rng.uniform(X_LOW, X_HIGH, n)
    u = rng.integers(0, 2, n) if spec.id == "confounded" else np.zeros(n, dtype=np.int64)
    base_pi = structural_pi(spec.base, x)
    if spec.id == "confounded":
        l = logit(np.clip(base_pi, 1e-12, 1 - 1e-12))
        p = expit(l + spec.confounding_treatment * (2 * u - 1))
    else:
        p = base_pi
    a = (rng.random(n) < p).astype(np.int8)
    noise = rng.normal(0.0, 1.0, n) * spec.noise_sd
    tau = structural_tau(spec.base, x)
    shift = spec.confounding * (2 * u - 1) if spec.id == "confounded" else 0.0
    y0 = (0 - base_pi) * tau + shift + noise
    y1 = (1 - base_pi) * tau + shift + noise
    return x, u, a, np.column_stack([y0, y1])


def generate(spec: ScenarioSpec) -> SimulatedCohort:
    """Draw ``spec.n`` units; identical specs give identical draws.

    A draw with only one treatment arm (plausible only for tiny ``n``) is
    rejected by :class:`Cohort` with a positivity error.
    """
    rng = np.random.default_rng(spec.seed)
    x, u, a, po = _draw(spec, spec.n, rng)
    y = np.where(a == 1, po[:, 1], po[:, 0])
    cohort = Cohort(("x",), x[:, None], a, y)
    return SimulatedCohort(cohort, spec, po, u)


def analytic_quantile(scenario: str, delta) -> np.ndarray:
    """(1 - delta)-quantile of the CPB for the four printed scenarios."""
    d = np.asarray(delta, dtype=float)
    if scenario in ("S1", "S1star"):
        return 1 - d
    if scenario in ("S2", "S2star"):
        return 3 * (1 - d) ** 5
    raise ArgumentError(f"no closed form for scenario {scenario!r}")


def analytic_value(scenario: str, delta) -> np.ndarray:
    d = np.asarray(delta, dtype=float)
    if scenario in ("S1", "S1star"):
        return d - d ** 2 / 2
    if scenario in ("S2", "S2star"):
        return (1 - (1 - d) ** 6) / 2
    raise ArgumentError(f"no closed form for scenario {scenario!r}")


@dataclass(frozen=True)
class OracleValues:
    spec: ScenarioSpec
    deltas: np.ndarray
    quantile: np.ndarray
    value: np.ndarray
    gap: np.ndarray
    mean_beta: float
    mean_outcome: float
    aupbc: float
    aupbc_norm: float
    budget_80: float
    analytic: bool
    se: dict = field(default_factory=dict)
    true_value: Optional[np.ndarray] = None
    optimal_true_value: Optional[np.ndarray] = None
    gamma: Optional[float] = None

    @property
    def truth(self) -> Truth:
        return Truth(self.spec)

    def to_dict(self) -> dict:
        out = {
            "scenario": self.spec.id,
            "analytic": self.analytic,
            "delta": self.deltas.tolist(),
            "quantile": self.quantile.tolist(),
            "value": self.value.tolist(),
            "gap": self.gap.tolist(),
            "mean_beta": self.mean_beta,
            "mean_outcome": self.mean_outcome,
            "aupbc": self.aupbc,
            "aupbc_norm": self.aupbc_norm,
            "budget_80": self.budget_80,
            "se": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.se.items()},
        }
        if self.true_value is not None:
            out["true_value"] = self.true_value.tolist()
            out["optimal_true_value"] = self.optimal_true_value.tolist()
            out["gamma"] = self.gamma
        return out


def oracle(spec: ScenarioSpec, deltas: Sequence[float] = (0.25, 0.5, 0.75),
           grid=None, draws: int = 1_000_000) -> OracleValues:
    """Target functionals of a scenario.

    Printed scenarios are closed form. The confounded scenario uses
    ``draws`` Monte Carlo covariate draws with exact conditional means and
    reports standard errors.
    """
    deltas = np.asarray(deltas, dtype=float)
    if spec.id != "confounded":
        q = analytic_quantile(spec.id, deltas)
        v = analytic_value(spec.id, deltas)
        norm = 1 / 3 if spec.id in ("S1", "S1star") else 5 / 7
        budget = 1 - math.sqrt(0.2) if spec.id in ("S1", "S1star") else 1 - 0.2 ** (1 / 6)
        return OracleValues(spec, deltas, q, v, 0.5 - v, 0.5, 0.0, norm * 0.5 / 2, norm,
                            budget, True)
    return _confounded_oracle(spec, deltas, grid, draws)


def _top_mean(sorted_desc: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """``mean(contact * v)`` when the top ``floor(delta * N)`` values are contacted."""
    csum = np.concatenate([[0.0], np.cumsum(sorted_desc)])
    k = np.floor(np.asarray(delta) * sorted_desc.size + 1e-9).astype(int)
    return csum[k] / sorted_desc.size


def _confounded_oracle(spec, deltas, grid, draws):
    truth = Truth(spec)
    rng = np.random.default_rng([spec.seed, 7919])
    x = rng.uniform(X_LOW, X_HIGH, draws)
    beta = truth.beta(x)
    m = truth.m(x)
    h = truth.h_star(x)
    mu0d, mu1d = truth.counterfactual_mean(0, x), truth.counterfactual_mean(1, x)
    h_dag = (mu1d > mu0d).astype(float)
    beta_dag = h_dag * (mu1d - mu0d) + mu0d - m
    # value of treating by h* when contacted, minus the status quo m
    gain_true = h * (mu1d - mu0d) + mu0d - m
    sqrt_n = math.sqrt(draws)
    order = np.argsort(-beta, kind="stable")
    ranked_beta, ranked_true = beta[order], gain_true[order]
    g = default_grid() if grid is None else np.asarray(grid, dtype=float)
    mean_m = float(m.mean())

    k = np.floor(deltas * draws + 1e-9).astype(int)
    quantile = np.array([ranked_beta[j] if j < draws else ranked_beta[-1] - 1 for j in k])
    value, value_se, true_value, true_se = [], [], [], []
    for j in k:
        contact = np.zeros(draws)
        contact[:j] = 1.0
        v = contact * ranked_beta + m[order]
        t = contact * ranked_true + m[order]
        value.append(v.mean()); value_se.append(v.std() / sqrt_n)
        true_value.append(t.mean()); true_se.append(t.std() / sqrt_n)
    value, true_value = np.array(value), np.array(true_value)
    optimal = _top_mean(np.sort(beta_dag)[::-1], deltas) + mean_m

    mean_beta = float(beta.mean())
    curve = _top_mean(ranked_beta, g) + mean_m
    area = float(trapezoid_weights(g) @ (curve - mean_m) - 0.5 * mean_beta)
    return OracleValues(
        spec, deltas, quantile, value, mean_beta + mean_m - value, mean_beta, mean_m,
        area, 2 * area / mean_beta, budget_for_fraction_of_peak(g, curve), False,
        se={"value": np.array(value_se), "true_value": np.array(true_se),
            "mean_beta": float(beta.std() / sqrt_n)},
        true_value=true_value, optimal_true_value=optimal, gamma=truth.gamma(),
    )


def optimal_rules(spec: ScenarioSpec, delta: float, draws: int = 1_000_000) -> tuple[Rule, Rule]:
    """Identified optimal (contact, policy) pair as callables of ``X``."""
    truth = Truth(spec)
    if spec.id == "confounded":
        x = np.random.default_rng([spec.seed, 104729]).uniform(X_LOW, X_HIGH, draws)
        q = float(np.quantile(truth.beta(x), 1 - delta, method="higher")) if delta < 1 else -np.inf
    else:
        q = float(analytic_quantile(spec.id, delta)) if delta < 1 else -np.inf

    def contact(X):
        return (truth.beta(X) > q).astype(float)

    def policy(X):
        return truth.h_star(X)

    return contact, policy


def regret_oracle(spec: ScenarioSpec, contact: Rule, policy: Rule, delta: float,
                  draws: int = 100_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo regret of ``(contact, policy)`` against the optimal budgeted pair.

    Returns ``(regret, standard error)`` over ``draws`` fresh covariate draws.
    """
    if spec.id == "confounded":
        raise ArgumentError("regret is defined relative to the identified optimum; use a printed scenario")
    truth = Truth(spec)
    x = np.random.default_rng([seed, 15485863]).uniform(X_LOW, X_HIGH, draws)
    X = x[:, None]
    opt_contact, opt_policy = optimal_rules(spec, delta)
    tau, pi = truth.tau(x), truth.pi(x)
    per_unit = tau * (opt_contact(X) * (opt_policy(X) - pi)
                      - np.asarray(contact(X), dtype=float) * (np.asarray(policy(X), dtype=float) - pi))
    return float(per_unit.mean()), float(per_unit.std() / math.sqrt(draws))


def _brute_force_block(spec, contact, policy, block, m, seed):
    rng = np.random.default_rng([seed, block, 2357])
    x, _, a, po = _draw(spec, m, rng)
    X = x[:, None]
    hit = rng.random(m) < np.asarray(contact(X), dtype=float)
    treat = np.asarray(policy(X), dtype=float).astype(int)
    natural = np.where(a == 1, po[:, 1], po[:, 0])
    chosen = np.where(treat == 1, po[:, 1], po[:, 0])
    out = np.where(hit, chosen, natural)
    return out.sum(), (out ** 2).sum()


def mc_brute_force_value(spec: ScenarioSpec, contact: Rule, policy: Rule, reps: int = 1_000_000,
                         seed: int = 0, n_jobs: int = 1) -> tuple[float, float]:
    """Simulate the rule on fresh units from the structural model.

    Each unit is contacted with probability ``contact(X)``; contacted units
    get ``Y(policy(X))`` and the rest keep their natural outcome. Returns
    ``(mean, standard error)``. Units are drawn in fixed-size blocks with
    per-block seeds, so the answer does not depend on ``n_jobs``.
    """
    if reps < 1:
        raise ArgumentError("reps must be >= 1")
    blocks = [(i, min(MC_BLOCK, reps - start)) for i, start in enumerate(range(0, reps, MC_BLOCK))]

    def work(item):
        return _brute_force_block(spec, contact, policy, item[0], item[1], seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    mean = total / reps
    var = max(total_sq / reps - mean ** 2, 0.0)
    return float(mean), float(math.sqrt(var / reps))
