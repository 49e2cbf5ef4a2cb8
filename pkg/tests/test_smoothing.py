import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smpec.geometry import make_rng
from smpec.smoothing import (ImplicitValueOracle, LowerLevelError, ZoGradientEstimator, mean_and_stderr,
                             smoothed_value_mc, zo_gradient_minibatch, zo_gradient_sample, zo_gradient_samples)


def plain_oracle(h, two_stage=True):
    """Oracle for an ordinary function h of the upper variable."""
    return ImplicitValueOracle(upper=lambda xs, ys, ws: h(xs), lower=lambda xs, ws, k: np.zeros((xs.shape[0], 1)),
                               sample_omega=lambda rng, m: np.zeros((m, 1)), two_stage=two_stage)


def test_constant_function_gives_zero_gradient():
    est = ZoGradientEstimator(3, 0.1, batch=50)
    g = zo_gradient_samples(est, plain_oracle(lambda xs: np.full(xs.shape[0], 4.2)), np.ones(3), make_rng(0))
    assert np.all(g == 0.0)


def test_constant_smoothed_value_exact():
    val, se = smoothed_value_mc(lambda P: np.full(P.shape[0], -2.5), np.zeros(4), 0.3, 100, make_rng(1))
    assert val == -2.5 and se == 0.0


def test_linear_function_smoothed_value_exact():
    a = np.array([1.0, -2.0, 0.5])
    val, _ = smoothed_value_mc(lambda P: P @ a + 1.0, np.array([0.2, 0.1, -0.3]), 0.5, 200_000, make_rng(2))
    assert abs(val - (a @ np.array([0.2, 0.1, -0.3]) + 1.0)) <= 5e-3


def test_linear_gradient_unbiased():
    a = np.array([1.0, -2.0, 0.5])
    est = ZoGradientEstimator(3, 0.2, batch=40_000)
    G = zo_gradient_samples(est, plain_oracle(lambda xs: xs @ a), np.zeros(3), make_rng(3))
    mean, se = mean_and_stderr(G)
    assert np.all(np.abs(mean - a) <= 3.5 * se)


def test_quadratic_gradient_unbiased_for_smoothed_gradient():
    # f = 1/2 |x|^2 has grad f_eta(x) = x exactly
    x = np.array([0.7, -0.4])
    est = ZoGradientEstimator(2, 0.3, batch=60_000)
    G = zo_gradient_samples(est, plain_oracle(lambda xs: 0.5 * np.sum(xs ** 2, axis=1)), x, make_rng(4))
    mean, se = mean_and_stderr(G)
    assert np.all(np.abs(mean - x) <= 3.5 * se)


def test_quadratic_smoothed_value_closed_form():
    # E|u|^2 = n/(n+2) for u uniform in the unit ball
    n, eta = 3, 0.4
    x = np.array([1.0, 0.0, -1.0])
    val, se = smoothed_value_mc(lambda P: 0.5 * np.sum(P ** 2, axis=1), x, eta, 200_000, make_rng(5))
    exact = 0.5 * x @ x + 0.5 * eta ** 2 * n / (n + 2)
    assert abs(val - exact) <= 3.5 * se


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 2.0), st.integers(1, 5), st.integers(0, 10_000))
def test_smoothed_value_within_lipschitz_band(eta, n, seed):
    # |f_eta - f| <= L0 eta for the 1-Lipschitz function |x|
    rng = make_rng(seed)
    x = rng.standard_normal(n)
    val, se = smoothed_value_mc(lambda P: np.linalg.norm(P, axis=1), x, eta, 2000, rng)
    assert abs(val - np.linalg.norm(x)) <= eta + 3.5 * se + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 2.0), st.integers(1, 6), st.integers(0, 10_000))
def test_samplewise_gradient_norm_bound(eta, n, seed):
    # |g| <= n L0 for the 1-Lipschitz norm
    rng = make_rng(seed)
    x = rng.standard_normal(n)
    est = ZoGradientEstimator(n, eta, batch=200)
    G = zo_gradient_samples(est, plain_oracle(lambda xs: np.linalg.norm(xs, axis=1)), x, rng)
    assert np.all(np.linalg.norm(G, axis=1) <= n * 1.0 * (1 + 1e-12))


def test_convex_function_lies_below_its_smoothing():
    x = np.array([0.0, 0.0])
    val, se = smoothed_value_mc(lambda P: np.linalg.norm(P, axis=1), x, 0.5, 50_000, make_rng(6))
    # f_eta(0) = eta E|u| = eta n/(n+1)
    assert abs(val - 0.5 * 2 / 3) <= 3.5 * se
    assert val >= 0.0


def test_single_sample_uses_same_omega_twice():
    seen = []

    def upper(xs, ys, ws):
        seen.append(ws.copy())
        return xs[:, 0] * ws[:, 0]

    oracle = ImplicitValueOracle(upper, lambda xs, ws, k: np.zeros((xs.shape[0], 1)),
                                 lambda rng, m: rng.uniform(size=(m, 1)), two_stage=True)
    est = ZoGradientEstimator(1, 0.1)
    g = zo_gradient_sample(est, oracle, np.array([1.0]), np.array([0.1]), np.array([[0.37]]))
    assert len(seen) == 2 and seen[0][0, 0] == seen[1][0, 0] == 0.37
    # (n/eta) (f(x+v) - f(x)) v/|v| = 10 * 0.1 * 0.37 * 1
    assert g[0] == pytest.approx(0.37)


def test_minibatch_equals_mean_of_samples():
    h = lambda xs: np.sin(xs).sum(axis=1)
    est = ZoGradientEstimator(3, 0.2, batch=64)
    a = zo_gradient_minibatch(est, plain_oracle(h), np.ones(3), make_rng(9))
    b = zo_gradient_samples(est, plain_oracle(h), np.ones(3), make_rng(9)).mean(axis=0)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_shared_base_matches_rowwise_base_in_single_stage():
    calls = {"n": 0}

    def lower(xs, ws, k):
        calls["n"] += xs.shape[0]
        return xs.copy()

    oracle = ImplicitValueOracle(lambda xs, ys, ws: np.sum(ys ** 2, axis=1) + ws[:, 0], lower,
                                 lambda rng, m: rng.uniform(size=(m, 1)), two_stage=False)
    est = ZoGradientEstimator(2, 0.1, batch=10)
    a = zo_gradient_samples(est, oracle, np.ones(2), make_rng(1), shared_base=True)
    assert calls["n"] == 1 + 10
    b = zo_gradient_samples(est, oracle, np.ones(2), make_rng(1), shared_base=False)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_lower_failures_are_wrapped():
    def lower(xs, ws, k):
        raise RuntimeError("boom")

    oracle = ImplicitValueOracle(lambda xs, ys, ws: xs[:, 0], lower, lambda rng, m: np.zeros((m, 1)), True)
    with pytest.raises(LowerLevelError, match="base point"):
        zo_gradient_minibatch(ZoGradientEstimator(1, 0.1, batch=3), oracle, np.zeros(1), make_rng(0))


def test_estimator_validation():
    with pytest.raises(ValueError):
        ZoGradientEstimator(2, 0.0)
    with pytest.raises(ValueError):
        ZoGradientEstimator(2, 0.1, batch=0)
    with pytest.raises(ValueError):
        ZoGradientEstimator(2, 0.1, mode="approximate")
