import numpy as np
import pytest

from cpbpolicy import (
    LearnerSpec,
    NuisanceFits,
    NumericError,
    bias_decomposition,
    dr_learn_cpb,
    plugin_cpb,
    pseudo_outcome,
    pseudo_outcomes,
    select_covariates,
)
from cpbpolicy.cpb import suboptimal_prob


# -- pseudo-outcome hand evaluations --------------------------------------------

def test_pseudo_outcome_treated_unit():
    assert pseudo_outcome(1, 1.0, 0.5, 0.0, 1.0) == pytest.approx(0.0)


def test_pseudo_outcome_control_unit():
    assert pseudo_outcome(0, 0.0, 0.5, 0.0, 1.0) == pytest.approx(1.0)


def test_pseudo_outcome_null_effect():
    assert pseudo_outcome(1, 0.7, 0.5, 0.7, 0.7) == 0.0
    assert pseudo_outcome(0, 0.7, 0.5, 0.7, 0.7) == 0.0


def test_pseudo_outcome_residual_weighting():
    # h = 1, pi = 0.25: treated residual scaled by (1 - 0.25) / 0.25 = 3
    assert pseudo_outcome(1, 2.0, 0.25, 0.0, 1.0) == pytest.approx(3.0)
    # control residual scaled by -(1 - 0.25) / 0.75 = -1, plus tau * (h - a) = 1
    assert pseudo_outcome(0, 0.5, 0.25, 0.0, 1.0) == pytest.approx(0.5)


def test_pseudo_outcome_custom_policy():
    # forcing h = 0 where tau > 0 gives tau * (0 - a) plus weighted residual
    assert pseudo_outcome(0, 0.0, 0.5, 0.0, 1.0, h=0.0) == pytest.approx(0.0)
    assert pseudo_outcome(1, 1.0, 0.5, 0.0, 1.0, h=0.0) == pytest.approx(-1.0)


def test_pseudo_outcome_rejects_degenerate_propensity():
    with pytest.raises(NumericError):
        pseudo_outcome(1, 1.0, 1.0, 0.0, 1.0)


# -- plug-in quantities ---------------------------------------------------------

def test_plugin_cpb_examples():
    fits = NuisanceFits.from_arrays([0.5, 0.25, 0.5], [0.0, 2.0, 1.0], [1.0, 0.0, 1.0])
    np.testing.assert_allclose(plugin_cpb(fits), [0.5, 0.5, 0.0])
    assert np.all(plugin_cpb(fits) >= 0)


def test_suboptimal_prob_examples():
    fits = NuisanceFits.from_arrays([0.9, 0.9, 0.5, 0.5], [0, 1, 0, 1], [1, 0, 1, 0])
    np.testing.assert_allclose(suboptimal_prob(fits), [0.1, 0.9, 0.5, 0.5])


def test_plugin_cpb_is_abs_tau_times_c(rng):
    fits = NuisanceFits.from_arrays(rng.uniform(0.05, 0.95, 50), rng.normal(size=50), rng.normal(size=50))
    np.testing.assert_allclose(plugin_cpb(fits), np.abs(fits.tau) * suboptimal_prob(fits), atol=1e-15)


# -- conditional bias identity ------------------------------------------------------

def _conditional_mean_phi(pi, mu0, mu1, pi_alt, mu0_alt, mu1_alt):
    """E(phi(alt) | X) by enumerating A and plugging E(Y | X, A) = mu_A."""
    return (pi * pseudo_outcome(1, mu1, pi_alt, mu0_alt, mu1_alt)
            + (1 - pi) * pseudo_outcome(0, mu0, pi_alt, mu0_alt, mu1_alt))


def test_bias_identity_on_eight_point_design():
    rng = np.random.default_rng(2024)
    pi = rng.uniform(0.1, 0.9, 8)
    mu0 = rng.normal(size=8)
    mu1 = rng.normal(size=8)
    beta = (mu1 - mu0) * ((mu1 > mu0) - pi)
    np.testing.assert_allclose(_conditional_mean_phi(pi, mu0, mu1, pi, mu0, mu1), beta, atol=1e-12)
    for _ in range(20):
        pa = np.clip(pi + rng.normal(0, 0.2, 8), 0.02, 0.98)
        m0a = mu0 + rng.normal(0, 0.5, 8)
        m1a = mu1 + rng.normal(0, 0.5, 8)
        lhs = _conditional_mean_phi(pi, mu0, mu1, pa, m0a, m1a) - beta
        rhs = bias_decomposition(pi, mu0, mu1, pa, m0a, m1a)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10, rtol=0)


def test_bias_vanishes_when_only_one_nuisance_is_wrong():
    pi = np.array([0.3, 0.6])
    mu0, mu1 = np.array([0.0, 1.0]), np.array([1.0, 0.5])
    # correct propensity, wrong outcomes with the same tau: no bias at all
    assert np.allclose(bias_decomposition(pi, mu0, mu1, pi, mu0 + 0.3, mu1 + 0.3), 0)
    # correct outcomes, wrong propensity: product and cross terms both vanish
    assert np.allclose(bias_decomposition(pi, mu0, mu1, pi + 0.2, mu0, mu1), 0)


# -- DR-learner ----------------------------------------------------------------

def test_dr_learner_tracks_true_cpb(s1_small):
    grid = np.linspace(-1.5, 1.5, 13)
    est = s1_small.model.predict(grid[:, None])
    assert np.max(np.abs(est - np.abs(grid) / 2)) <= 0.1


def test_dr_learner_intercept_only_view(s1_small):
    p = s1_small
    view = select_covariates(p.cohort, [])
    model = dr_learn_cpb(p.cohort, p.fits, target=view, pseudo=p.phi)
    scores = model.scores()
    assert np.ptp(scores) == 0
    assert scores[0] == pytest.approx(p.phi.values.mean(), abs=1e-12)


def test_scores_are_a_function_of_covariates(s1_small):
    """Duplicated covariate rows receive identical scores (measurability)."""
    p = s1_small
    X = np.vstack([p.cohort.X[:5], p.cohort.X[:5]])
    s = p.model.predict(X)
    np.testing.assert_array_equal(s[:5], s[5:])
    np.testing.assert_allclose(p.model.predict(p.cohort.X[:5]), p.scores[:5], rtol=1e-12)


def test_true_nuisances_give_unbiased_pseudo_outcomes(s1_large):
    """With oracle nuisances the pseudo-outcome averages to E(beta) = 1/2."""
    p = s1_large
    truth = p.sim.truth
    x = p.cohort.X[:, 0]
    oracle_fits = NuisanceFits.from_arrays(truth.pi(x), truth.mu(0, x), truth.mu(1, x))
    phi = pseudo_outcomes(p.cohort, oracle_fits).values
    se = phi.std() / np.sqrt(phi.size)
    assert abs(phi.mean() - 0.5) <= 3 * se


def test_estimated_pseudo_outcomes_mimic_oracle(s1_large):
    """Cross-fitted pseudo-outcomes average close to the oracle version."""
    p = s1_large
    oracle_phi = p.sim.truth.phi(p.cohort)
    diff = p.phi.values - oracle_phi
    assert abs(diff.mean()) < 0.02


def test_no_swap_uses_one_fold(s1_small):
    p = s1_small
    model = dr_learn_cpb(p.cohort, p.fits, pseudo=p.phi, swap=False)
    assert len(model.models) == 1
    assert len(p.model.models) == 2


def test_linear_second_stage_on_abs_x(s1_small):
    """A linear second stage on |x| recovers the slope 1/2 of beta(x) = |x|/2."""
    p = s1_small
    absx = p.cohort.with_column("absx", np.abs(p.cohort.X[:, 0]))
    view = select_covariates(absx, ["absx"])
    model = dr_learn_cpb(absx, p.fits, target=view, spec=LearnerSpec("linear"), pseudo=p.phi)
    slope = model.predict_view(np.array([[1.0]]))[0] - model.predict_view(np.array([[0.0]]))[0]
    assert slope == pytest.approx(0.5, abs=0.1)
