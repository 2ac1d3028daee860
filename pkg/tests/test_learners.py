import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpbpolicy import ArgumentError, LearnerSpec, NumericError, fit_regression
from cpbpolicy.learners import silverman_bandwidth

ALL_SPECS = [
    LearnerSpec("linear"),
    LearnerSpec("linear", penalty=2.0),
    LearnerSpec("knn", neighbors=5),
    LearnerSpec("kernel"),
    LearnerSpec("kernel", bandwidth=0.3),
    LearnerSpec("local-linear"),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
def test_constant_targets_are_reproduced(spec, rng):
    X = rng.uniform(-2, 2, size=(200, 2))
    f = fit_regression(spec, X, np.full(200, 3.0))
    np.testing.assert_allclose(f.predict(rng.uniform(-3, 3, size=(50, 2))), 3.0, atol=1e-9)


def test_linear_recovers_exact_line():
    x = np.linspace(-1, 1, 21)
    f = fit_regression(LearnerSpec("linear"), x, 2 * x + 1)
    assert f.predict(np.array([[0.5]]))[0] == pytest.approx(2.0, abs=1e-8)


def test_ridge_shrinks_slope_not_intercept():
    x = np.linspace(-1, 1, 21)
    f = fit_regression(LearnerSpec("linear", penalty=1e6), x, 2 * x + 1)
    # centred design: intercept stays at the mean, slope collapses
    assert f.predict(np.array([[0.0]]))[0] == pytest.approx(1.0, abs=1e-6)
    assert f.predict(np.array([[1.0]]))[0] == pytest.approx(1.0, abs=1e-3)


def test_knn_with_k_equal_n_is_the_mean(rng):
    X = rng.normal(size=(30, 1))
    y = rng.normal(size=30)
    f = fit_regression(LearnerSpec("knn", neighbors=30), X, y)
    np.testing.assert_allclose(f.predict(rng.normal(size=(7, 1))), y.mean(), rtol=1e-12)


def test_knn_with_k_one_interpolates(rng):
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    f = fit_regression(LearnerSpec("knn", neighbors=1), X, y)
    np.testing.assert_allclose(f.predict(X), y)


def test_local_linear_reproduces_a_plane(rng):
    X = rng.uniform(-1, 1, size=(300, 2))
    y = 0.5 + 2 * X[:, 0] - 3 * X[:, 1]
    f = fit_regression(LearnerSpec("local-linear", bandwidth=0.4), X, y)
    Q = rng.uniform(-0.8, 0.8, size=(40, 2))
    np.testing.assert_allclose(f.predict(Q), 0.5 + 2 * Q[:, 0] - 3 * Q[:, 1], atol=1e-8)


def test_smoothers_stay_finite_far_from_data(rng):
    X = rng.uniform(-1, 1, size=(100, 1))
    y = np.sin(3 * X[:, 0])
    for kind in ("kernel", "local-linear"):
        f = fit_regression(LearnerSpec(kind, bandwidth=0.1), X, y)
        out = f.predict(np.array([[100.0], [-50.0]]))
        assert np.all(np.isfinite(out))
        assert np.all(np.abs(out) <= 1.0 + 1e-9)


def test_kernel_smoother_is_consistent(rng):
    x = rng.uniform(-2, 2, 5000)
    y = np.abs(x) / 2 + rng.normal(0, 0.5, 5000)
    f = fit_regression(LearnerSpec("kernel"), x, y)
    grid = np.linspace(-1.5, 1.5, 13)
    assert np.max(np.abs(f.predict(grid) - np.abs(grid) / 2)) < 0.1


def test_zero_columns_give_intercept_only(rng):
    y = rng.normal(size=12)
    for spec in ALL_SPECS:
        f = fit_regression(spec, np.empty((12, 0)), y)
        np.testing.assert_allclose(f.predict(np.empty((4, 0))), y.mean())


def test_silverman_bandwidth():
    X = np.column_stack([np.arange(32.0), np.ones(32)])
    h = silverman_bandwidth(X)
    assert h[0] == pytest.approx(1.06 * X[:, 0].std(ddof=1) * 32 ** -0.2)
    assert h[1] == 1.0


@pytest.mark.parametrize(
    "text,expected",
    [
        ("kernel:h=0.3", LearnerSpec("kernel", bandwidth=0.3)),
        ("knn:k=25", LearnerSpec("knn", neighbors=25)),
        ("linear:lambda=0", LearnerSpec("linear", penalty=0.0)),
        ("ll", LearnerSpec("local-linear")),
        ("nw:h=auto", LearnerSpec("kernel")),
    ],
)
def test_parse(text, expected):
    assert LearnerSpec.parse(text) == expected
    assert LearnerSpec.parse(str(expected)) == expected


@pytest.mark.parametrize("text", ["forest", "knn:k=0", "kernel:h=-1", "kernel:q=3", "knn:k=two", "kernel:h"])
def test_parse_rejects(text):
    with pytest.raises(ArgumentError):
        LearnerSpec.parse(text)


def test_fit_guards(rng):
    with pytest.raises(ArgumentError):
        fit_regression(LearnerSpec(), np.empty((0, 1)), np.empty(0))
    with pytest.raises(ArgumentError):
        fit_regression(LearnerSpec(), np.zeros((3, 1)), np.zeros(4))
    with pytest.raises(ArgumentError):
        fit_regression(LearnerSpec("knn", neighbors=5), np.zeros((3, 1)), np.zeros(3))
    with pytest.raises(NumericError):
        fit_regression(LearnerSpec(), np.array([0.0, np.nan]), np.zeros(2))
    with pytest.raises(NumericError):
        fit_regression(LearnerSpec("linear"), np.column_stack([np.arange(5.0)] * 2), np.arange(5.0))
    # a positive penalty rescues the collinear design
    fit_regression(LearnerSpec("linear", penalty=0.1), np.column_stack([np.arange(5.0)] * 2), np.arange(5.0))
    f = fit_regression(LearnerSpec(), rng.normal(size=(10, 2)), rng.normal(size=10))
    with pytest.raises(ArgumentError):
        f.predict(np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=40),
    st.sampled_from(["kernel", "local-linear", "knn"]),
)
def test_smoother_predictions_within_target_range(values, kind):
    """Kernel and k-NN averages are convex combinations of the targets."""
    y = np.asarray(values)
    x = np.linspace(0, 1, y.size)
    spec = LearnerSpec(kind, neighbors=min(3, y.size))
    f = fit_regression(spec, x, y)
    p = f.predict(np.linspace(-0.2, 1.2, 9))
    if kind == "local-linear":
        assert np.all(np.isfinite(p))
    else:
        assert np.all(p >= y.min() - 1e-9) and np.all(p <= y.max() + 1e-9)
