import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from smpec.geometry import Box, make_rng
from smpec.lower_level import (DiminishingConfig, NumericalFailure, ProjectionConfig, QpActiveSet, ViProblem,
                               VrSaConfig, affine_vi_exact, batch_size, deterministic_projection_solve, log_steps,
                               natural_residual, sa_solve_diminishing, vr_sa_solve)
from smpec.problems.bard import CONSTRAINTS, constraint_rhs


def affine_vi(A, y_star, box, noise=0.0):
    A = np.atleast_2d(A)

    def F(x, y, ws):
        ws = np.zeros((1, A.shape[0])) if ws is None else np.atleast_2d(ws)
        return (A @ (y - y_star))[None, :] + ws

    sample = lambda rng, m: rng.uniform(-noise, noise, size=(m, A.shape[0]))
    sym = 0.5 * (A + A.T)
    return ViProblem(F, box, mu=float(np.linalg.eigvalsh(sym).min()), lip=float(np.linalg.norm(A, 2)), sample=sample)


def test_step_and_batch_schedules():
    assert log_steps(5, 0) == 0
    assert log_steps(5, 9) == math.ceil(5 * math.log(10)) == 12
    assert [batch_size(1.0, 1 / 1.5, t) for t in range(12)] == [math.ceil(1.5 ** t) for t in range(12)]
    assert batch_size(1e-4, 1 / 1.5, 0) == 1


def test_vr_sa_zero_steps_at_first_outer_iteration():
    vi = affine_vi(2 * np.eye(2), np.array([1.0, -1.0]), Box(-10 * np.ones(2), 10 * np.ones(2)))
    rep = vr_sa_solve(vi, np.zeros(1), 0, VrSaConfig(0.25), make_rng(0), y0=np.array([3.0, 3.0]))
    assert rep.steps == 0 and rep.samples == 0
    np.testing.assert_array_equal(rep.y, [3.0, 3.0])


def test_vr_sa_counts_match_schedule():
    vi = affine_vi(2 * np.eye(2), np.zeros(2), Box(-10 * np.ones(2), 10 * np.ones(2)), noise=0.1)
    rep = vr_sa_solve(vi, np.zeros(1), 9, VrSaConfig(0.25), make_rng(0))
    assert rep.steps == 12 and rep.projections == 12
    assert rep.samples == sum(math.ceil(1.5 ** t) for t in range(12))


def test_vr_sa_geometric_decay_noise_free():
    y_star = np.array([1.0, -2.0, 3.0])
    vi = affine_vi(2 * np.eye(3), y_star, Box(-10 * np.ones(3), 10 * np.ones(3)))
    alpha = 0.25
    y0 = np.array([9.0, 9.0, -9.0])
    rep = vr_sa_solve(vi, np.zeros(1), 20, VrSaConfig(alpha), make_rng(1), y0=y0, record=True)
    e0 = np.linalg.norm(y0 - y_star)
    for t, y in enumerate(rep.trajectory):
        assert np.linalg.norm(y - y_star) <= (1 - alpha * 2.0) ** (t / 2) * e0 + 1e-12


def test_vr_sa_step_guards():
    vi = affine_vi(2 * np.eye(2), np.zeros(2), Box(-np.ones(2), np.ones(2)))
    with pytest.raises(ValueError):
        vr_sa_solve(vi, np.zeros(1), 3, VrSaConfig(1.0), make_rng(0))  # alpha >= 2 mu / L^2
    with pytest.warns(UserWarning):
        vr_sa_solve(vi, np.zeros(1), 3, VrSaConfig(0.5), make_rng(0))
    with pytest.raises(ValueError):
        vr_sa_solve(vi, np.zeros(1), 3, VrSaConfig(0.2, rho=1.0), make_rng(0))


def test_diminishing_one_step_at_k0():
    vi = affine_vi(np.array([[3.0]]), np.array([2.0]), Interval1(), noise=1.0)
    rep = sa_solve_diminishing(vi, np.zeros(1), 0, DiminishingConfig(0.5), make_rng(0))
    assert rep.steps == 1 and rep.samples == 1


def Interval1():
    return Box([0.0], [10.0])


def test_diminishing_requires_large_initial_step():
    vi = affine_vi(np.array([[3.0]]), np.array([2.0]), Interval1(), noise=1.0)
    with pytest.raises(ValueError):
        sa_solve_diminishing(vi, np.zeros(1), 3, DiminishingConfig(0.1), make_rng(0))


def test_diminishing_noise_free_matches_projected_gradient():
    vi = affine_vi(np.array([[3.0]]), np.array([2.0]), Interval1(), noise=0.0)
    cfg = DiminishingConfig(0.2, alpha=0.3, gamma_shift=2.0)
    rep = sa_solve_diminishing(vi, np.zeros(1), 30, cfg, make_rng(0))
    y, step = 5.0, 0.2
    for t in range(31):
        y = min(max(y - step * 3 * (y - 2), 0.0), 10.0)
        step = 0.3 / (t + 2.0)
    assert rep.y[0] == pytest.approx(y, abs=1e-14)


def recursion_bound(mu, sigma2, gamma, shift, e0, diam2, t):
    # e_{k+1} <= (1 - a gamma/(k+G)) e_k + b gamma^2/(k+G)^2 with a = 2 mu and
    # b = sigma^2 + mu^2 diam^2, whose solution is max{b gamma^2/(a gamma - 1), G e0}/(k+G)
    a, b = 2 * mu, sigma2 + mu ** 2 * diam2
    return max(b * gamma ** 2 / (a * gamma - 1), shift * e0) / (t + shift)


def exact_error_recursion(mu, sigma2, gamma0, gamma, shift, e0, t_steps):
    e, step = e0, gamma0
    for t in range(t_steps):
        e = (1 - mu * step) ** 2 * e + step ** 2 * sigma2
        step = gamma / (t + shift)
    return e


def test_diminishing_sa_rate_against_recursion():
    mu, gamma, shift = 3.0, 0.5, 1.0
    vi = affine_vi(np.array([[mu]]), np.array([2.0]), Interval1(), noise=1.0)
    cfg = DiminishingConfig(gamma, gamma_shift=shift)
    errs = [(sa_solve_diminishing(vi, np.zeros(1), 999, cfg, make_rng(s)).y[0] - 2.0) ** 2 for s in range(200)]
    e0, sigma2 = 9.0, 1 / 3
    bound = recursion_bound(mu, sigma2, gamma, shift, e0, 64.0, 1000)
    assert np.mean(errs) <= 4 * bound
    # the unprojected second-moment recursion is exact for the affine map; projection only helps
    exact = exact_error_recursion(mu, sigma2, gamma, gamma, shift, e0, 1000)
    se = np.std(errs, ddof=1) / np.sqrt(len(errs))
    assert np.mean(errs) <= exact + 3 * se


def test_projection_solver_zero_steps_and_counts():
    vi = affine_vi(2 * np.eye(2), np.zeros(2), Box(-10 * np.ones(2), 10 * np.ones(2)))
    rep = deterministic_projection_solve(vi, np.zeros(1), None, 0, ProjectionConfig(0.5), y0=np.ones(2))
    assert rep.steps == 0
    np.testing.assert_array_equal(rep.y, np.ones(2))
    rep = deterministic_projection_solve(vi, np.zeros(1), None, 9, ProjectionConfig(0.5))
    assert rep.projections == 12


def test_projection_contraction_factor_exact_at_bound():
    mu = 0.7
    vi = affine_vi(np.array([[mu]]), np.array([1.0]), Box([-100.0], [100.0]))
    alpha = mu / mu ** 2
    rep = deterministic_projection_solve(vi, np.zeros(1), None, 5, ProjectionConfig(alpha), y0=np.array([11.0]),
                                         record=True)
    e = [abs(y[0] - 1.0) for y in rep.trajectory]
    for a, b in zip(e[:-1], e[1:]):
        if a > 0:
            assert b == pytest.approx(abs(1 - alpha * mu) * a, abs=1e-14)


def test_projection_solver_rejects_large_step():
    vi = affine_vi(2 * np.eye(2), np.zeros(2), Box(-np.ones(2), np.ones(2)))
    with pytest.raises(ValueError):
        deterministic_projection_solve(vi, np.zeros(1), None, 3, ProjectionConfig(0.6))


def test_projection_solver_converges_to_cournot_equilibrium():
    N, a, b, c, x = 10, 10.0, 1.0, 0.1, 2.0

    def F(xh, y, ws):
        return ((c + b) * y + b * (xh[0] + y.sum()) - a)[None, :]

    vi = ViProblem(F, Box.nonnegative(N), mu=c + b, lip=c + b * (N + 1))
    cfg = ProjectionConfig(vi.mu / vi.lip ** 2, tau=200.0)
    rep = deterministic_projection_solve(vi, np.array([x]), None, 50, cfg)
    q = (a - b * x) / (c + b * (N + 1))
    np.testing.assert_allclose(rep.y, q, rtol=1e-8)


def test_affine_vi_exact_examples():
    np.testing.assert_allclose(affine_vi_exact(np.eye(2), -np.ones(2), Box.nonnegative(2)), [1.0, 1.0])
    np.testing.assert_allclose(affine_vi_exact(np.eye(2), np.ones(2), Box.nonnegative(2)), [0.0, 0.0])


def test_affine_vi_exact_cournot_clamps_to_zero():
    N, a, b, c, x = 10, 10.0, 1.0, 0.1, 50.0
    M = (c + b) * np.eye(N) + b * np.ones((N, N))
    y = affine_vi_exact(M, b * x - a * np.ones(N), Box.nonnegative(N))
    np.testing.assert_allclose(y, 0.0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_affine_vi_exact_natural_residual(seed):
    rng = make_rng(seed)
    n = 4
    B = rng.standard_normal((n, n))
    A = B @ B.T + np.eye(n) + 0.5 * (B - B.T)
    b = rng.standard_normal(n) * 3
    box = Box(-np.ones(n), 2 * np.ones(n))
    y = affine_vi_exact(A, b, box)
    assert natural_residual(A, b, box, y) <= 1e-9


def test_affine_vi_rejects_non_monotone():
    with pytest.raises(ValueError):
        affine_vi_exact(np.array([[1.0, 0.0], [0.0, -1.0]]), np.zeros(2), Box.nonnegative(2))


def scipy_qp(H, g, C, d):
    res = minimize(lambda y: 0.5 * y @ H @ y + g @ y, np.zeros(H.shape[0]), jac=lambda y: H @ y + g,
                   constraints=[{"type": "ineq", "fun": lambda y: d - C @ y, "jac": lambda y: -C}],
                   method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000})
    return res.x


def test_bard_follower_at_origin():
    # min y1^2 + y2^2 - 5 y2 s.t. -2y1 + y2 >= -3, 3y1 - y2 >= 4, y >= 0
    H = np.diag([2.0, 2.0])
    qp = QpActiveSet(H, CONSTRAINTS)
    y = qp.solve(np.array([[0.0, -5.0]]), constraint_rhs(np.zeros(2)))[0]
    np.testing.assert_allclose(y, scipy_qp(H, np.array([0.0, -5.0]), CONSTRAINTS, constraint_rhs(np.zeros(2))[0]),
                               atol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(0, 2), st.floats(3.0, 7.0), st.floats(0.5, 3.0), st.floats(0.5, 3.0))
def test_qp_active_set_matches_scipy(x1, x2, xi, c, d):
    H = np.diag([2 * c, 2 * d])
    g = np.array([0.0, -xi])
    rhs = constraint_rhs(np.array([x1, x2]))[0]
    y = QpActiveSet(H, CONSTRAINTS).solve(g[None], rhs[None])[0]
    np.testing.assert_allclose(y, scipy_qp(H, g, CONSTRAINTS, rhs), atol=1e-6)


def test_qp_batched_rows_independent():
    H = np.diag([2.0, 2.0])
    qp = QpActiveSet(H, CONSTRAINTS)
    xs = make_rng(3).uniform(0, 1, size=(50, 2))
    ys = qp.solve(np.array([[0.0, -5.0]]), constraint_rhs(xs))
    for i in range(50):
        np.testing.assert_allclose(ys[i], qp.solve(np.array([[0.0, -5.0]]), constraint_rhs(xs[i:i + 1]))[0])


def test_qp_infeasible_raises():
    qp = QpActiveSet(np.eye(1), np.array([[1.0], [-1.0]]))
    with pytest.raises(NumericalFailure):
        qp.solve(np.zeros((1, 1)), np.array([[-1.0, -1.0]]))  # y <= -1 and y >= 1
