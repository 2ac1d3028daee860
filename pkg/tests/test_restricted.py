import warnings

import numpy as np
import pytest

from cpbpolicy import (
    ArgumentError,
    aupbc,
    estimate_value,
    restricted_aupbc,
    restricted_scores_both,
    restricted_scores_contact_only,
    restricted_value,
    select_covariates,
)
from cpbpolicy.restricted import plugin_restricted_cpb


def _with_sign(p):
    return p.cohort.with_column("sign", np.sign(p.cohort.X[:, 0]))


def test_full_view_reproduces_unrestricted_both(s1_small):
    p = s1_small
    rs = restricted_scores_both(p.fits, p.cohort, select_covariates(p.cohort, ["x"]))
    np.testing.assert_array_equal(rs.scores, p.scores)
    np.testing.assert_array_equal(rs.policy, p.fits.h_star)
    for d in (0.2, 0.5, 1.0):
        assert restricted_value(p.cohort, rs, d).value == estimate_value(p.cohort, p.phi, p.scores, d).value


def test_full_view_reproduces_unrestricted_contact_only(s1_small):
    p = s1_small
    rs = restricted_scores_contact_only(p.fits, p.cohort, select_covariates(p.cohort, ["x"]), phi=p.phi)
    np.testing.assert_array_equal(rs.scores, p.scores)
    a = restricted_aupbc(p.cohort, rs)
    b = aupbc(p.cohort, p.phi, p.scores)
    assert a.aupbc == b.aupbc and a.aupbc_norm == b.aupbc_norm


def test_empty_view_is_constant_and_all_or_nothing(s1_small):
    p = s1_small
    empty = select_covariates(p.cohort, [])
    for rs in (restricted_scores_both(p.fits, p.cohort, empty),
               restricted_scores_contact_only(p.fits, p.cohort, empty, phi=p.phi)):
        assert np.ptp(rs.scores) == 0
        assert restricted_value(p.cohort, rs, 0.5, ties="under").contacted_fraction == 0.0
        assert restricted_value(p.cohort, rs, 1.0, ties="under").contacted_fraction == 1.0


def test_empty_view_contact_only_traces_random_diagonal(s1_small):
    p = s1_small
    rs = restricted_scores_contact_only(p.fits, p.cohort, select_covariates(p.cohort, []), phi=p.phi)
    mean_phi, mean_y = p.phi.values.mean(), p.cohort.outcome.mean()
    for d in (0.25, 0.5, 0.75):
        ev = restricted_value(p.cohort, rs, d, ties="split")
        assert ev.value == pytest.approx(d * mean_phi + mean_y, abs=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        area = restricted_aupbc(p.cohort, rs, np.linspace(0, 1, 5))
    assert area.aupbc == pytest.approx(0, abs=1e-12)


def test_empty_view_both_is_linear_in_budget(s2star_mid):
    p = s2star_mid
    rs = restricted_scores_both(p.fits, p.cohort, select_covariates(p.cohort, []))
    mean_phi_w = rs.pseudo.mean()
    values = [restricted_value(p.cohort, rs, d, ties="split").value for d in (0.0, 0.25, 0.5, 1.0)]
    np.testing.assert_allclose(values, [d * mean_phi_w + p.cohort.outcome.mean() for d in (0.0, 0.25, 0.5, 1.0)],
                               atol=1e-12)


def test_zero_budget_in_both_modes(s1_small):
    p = s1_small
    cohort = _with_sign(p)
    view = select_covariates(cohort, ["sign"])
    for rs in (restricted_scores_both(p.fits, cohort, view),
               restricted_scores_contact_only(p.fits, cohort, view)):
        assert restricted_value(cohort, rs, 0.0).value == pytest.approx(cohort.outcome.mean())


def test_full_budget_contact_only_is_vacuous(s1_small):
    p = s1_small
    cohort = _with_sign(p)
    rs = restricted_scores_contact_only(p.fits, cohort, select_covariates(cohort, ["sign"]))
    full = estimate_value(p.cohort, p.phi, p.scores, 1.0)
    assert restricted_value(cohort, rs, 1.0).value == pytest.approx(full.value, abs=1e-12)


def test_duplicated_w_rows_share_scores(s1_small):
    p = s1_small
    cohort = _with_sign(p)
    rs = restricted_scores_contact_only(p.fits, cohort, select_covariates(cohort, ["sign"]))
    assert len(np.unique(rs.scores)) == 2
    X = np.array([[0.3, 1.0], [1.7, 1.0], [-0.2, -1.0]])
    s = rs.score_at(X)
    assert s[0] == s[1] != s[2]


def test_coarse_view_does_not_beat_full_information(s2star_mid):
    """beta is symmetric on S2star, so sign(x) carries no targeting information."""
    p = s2star_mid
    cohort = _with_sign(p)
    rs = restricted_scores_contact_only(p.fits, cohort, select_covariates(cohort, ["sign"]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)   # a slightly negative estimate is expected
        restricted = restricted_aupbc(cohort, rs)
    full = aupbc(p.cohort, p.phi, p.scores)
    assert -2 * restricted.aupbc_norm_se <= restricted.aupbc_norm
    assert restricted.aupbc_norm <= full.aupbc_norm + 2 * full.aupbc_norm_se
    assert abs(restricted.aupbc_norm) < 0.05


def test_under_contact_with_coarse_view_wastes_budget(s2star_mid):
    p = s2star_mid
    cohort = _with_sign(p)
    rs = restricted_scores_contact_only(p.fits, cohort, select_covariates(cohort, ["sign"]))
    # both sign groups hold about half the units: below that share nobody is contacted
    assert restricted_value(cohort, rs, 0.3, ties="under").contacted_fraction == 0.0
    assert restricted_value(cohort, rs, 0.3).contacted_fraction == pytest.approx(0.3, abs=1 / cohort.n)


def test_both_mode_with_sign_policy(s1_small):
    """On S1, E(tau | sign x) has the sign of x, so the coarse policy equals h*."""
    p = s1_small
    cohort = _with_sign(p)
    rs = restricted_scores_both(p.fits, cohort, select_covariates(cohort, ["sign"]))
    np.testing.assert_array_equal(rs.policy, (cohort.X[:, 0] > 0).astype(float))


def test_aupbc_refused_for_both_mode(s1_small):
    p = s1_small
    rs = restricted_scores_both(p.fits, p.cohort, select_covariates(p.cohort, ["x"]))
    with pytest.raises(ArgumentError):
        restricted_aupbc(p.cohort, rs)


def test_plugin_debug_path_agrees_roughly(s1_small):
    p = s1_small
    cohort = _with_sign(p)
    view = select_covariates(cohort, ["sign"])
    rs = restricted_scores_both(p.fits, cohort, view)
    plug = plugin_restricted_cpb(p.fits, view)
    # both estimate E(tau h_w - tau pi | sign) = E(|x|/2 | sign) = 1/2
    assert np.max(np.abs(plug - 0.5)) < 0.1
    assert np.max(np.abs(rs.scores - 0.5)) < 0.1


def test_view_from_other_cohort_rejected(s1_small, s2star_mid):
    with pytest.raises(ArgumentError):
        restricted_scores_contact_only(s1_small.fits, s1_small.cohort,
                                       select_covariates(_with_sign(s2star_mid), ["sign"]))
