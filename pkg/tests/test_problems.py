import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from smpec.geometry import Box, make_rng
from smpec.lower_level import ProjectionConfig, affine_vi_exact, deterministic_projection_solve, natural_residual
from smpec.problems import (BARON_OPTIMA, REGISTRY, appendix_problems, bard_bilevel, cournot_single_stage,
                            cournot_two_stage, grid_oracle, make_problem, problem1, problem2, problem3, problem4,
                            problem5)
from smpec.problems.appendix import P4_MATRIX, P4_SHIFT, upper_bounded_affine_vi
from smpec.problems.base import SmpecProblem


def interior_leader_optimum(mean_a, N, b, c, d):
    """Minimizer of -x(a - b(x + N(a - bx)/s)) + d x^2/2 when followers stay active."""
    s = c + b * (N + 1)
    return mean_a * (1 - b * N / s) / (2 * (b - b * b * N / s + 0.5 * d))


def cournot_matrix(N, b, c):
    return (c + b) * np.eye(N) + b * np.ones((N, N))


def test_cournot_follower_example_two_stage():
    p = cournot_two_stage()
    q = p.exact_lower(np.array([[2.0]]), np.array([[10.0]]))[0]
    np.testing.assert_allclose(q, 8 / 11.1)
    y = affine_vi_exact(cournot_matrix(10, 1.0, 0.1), np.full(10, 2.0 - 10.0), Box.nonnegative(10))
    np.testing.assert_allclose(q, y, atol=1e-12)


def test_cournot_follower_example_single_stage():
    p = cournot_single_stage()
    np.testing.assert_allclose(p.exact_lower(np.array([[0.0]]), None)[0], 10 / 3.11)
    assert p.vi.mu == pytest.approx(3.01) and p.vi.lip == pytest.approx(3.11)


def test_cournot_single_follower_collapses_to_monopoly():
    p = cournot_two_stage(N=1, b=2.0, c=0.5)
    q = p.exact_lower(np.array([[1.0]]), np.array([[9.0]]))[0, 0]
    assert q == pytest.approx((9.0 - 2.0) / (0.5 + 4.0))


def test_cournot_capacity_clamps_followers():
    p = cournot_two_stage()
    np.testing.assert_array_equal(p.exact_lower(np.array([[150.0]]), np.array([[7.5]])), 0.0)


def test_cournot_follower_consistency_on_probes():
    N, b, c = 10, 1.0, 0.1
    p = cournot_two_stage(N=N, b=b, c=c)
    rng = make_rng(4)
    M = cournot_matrix(N, b, c)
    cfg = ProjectionConfig(p.vi.mu / p.vi.lip ** 2, tau=2000.0)
    for _ in range(100):
        x, a = rng.uniform(0, 12), rng.uniform(7.5, 12.5)
        closed = p.exact_lower(np.array([[x]]), np.array([[a]]))[0]
        lcp = affine_vi_exact(M, np.full(N, b * x - a), Box.nonnegative(N))
        np.testing.assert_allclose(lcp, closed, atol=1e-8)
    for _ in range(3):
        x, a = rng.uniform(0, 12), rng.uniform(7.5, 12.5)
        closed = p.exact_lower(np.array([[x]]), np.array([[a]]))[0]
        it = deterministic_projection_solve(p.vi, np.array([x]), np.array([a]), 8, cfg).y
        np.testing.assert_allclose(it, closed, atol=1e-8)


@pytest.mark.parametrize("factory,kw", [(cournot_two_stage, {}), (cournot_single_stage, {})])
def test_cournot_leader_closed_form(factory, kw):
    p = factory(**kw)
    pr = p.params
    x = interior_leader_optimum(0.5 * (pr["a_low"] + pr["a_high"]), pr["N"], pr["b"], pr["c"], pr["d"])
    assert p.optimum.x_star[0] == pytest.approx(x, rel=1e-7)
    assert p.optimum.f_star == pytest.approx(p.objective(np.array([x])), abs=1e-10)


def test_cournot_grid_oracle_agrees_with_closed_form():
    p = cournot_two_stage()
    g = grid_oracle(p, resolution=41, mc_samples=20_000)
    assert abs(g.x_star[0] - p.optimum.x_star[0]) <= 0.05
    assert p.objective(g.x_star) - p.optimum.f_star <= 1e-3


def test_monotonicity_probes():
    rng = make_rng(0)
    for p in (cournot_two_stage(), cournot_single_stage(), cournot_two_stage(N=3, b=2.0, c=0.4)):
        N = p.dim_y
        for _ in range(10):
            x = rng.uniform(0, 10, size=1)
            y1, y2 = rng.uniform(0, 5, size=(2, N))
            F1 = p.vi.map(x, y1, np.array([[10.0]]))[0]
            F2 = p.vi.map(x, y2, np.array([[10.0]]))[0]
            d = y1 - y2
            assert (F1 - F2) @ d >= (p.vi.mu - 1e-9) * d @ d
            assert np.linalg.norm(F1 - F2) <= (p.vi.lip + 1e-9) * np.linalg.norm(d)
    sym = 0.5 * (P4_MATRIX + P4_MATRIX.T)
    p4 = problem4()
    assert np.linalg.eigvalsh(sym).min() >= p4.vi.mu - 1e-9 > 0


def test_bard_instances_and_follower():
    p = bard_bilevel()
    assert p.optimum.f_star == -7.50
    assert bard_bilevel(5, 0, 2, 2).optimum.f_star == -13.23
    assert len(BARON_OPTIMA) == 9
    with pytest.raises(ValueError):
        bard_bilevel(c_coef=0.0)


def test_bard_grid_oracle_reaches_global_value():
    g = grid_oracle(bard_bilevel(), resolution=41, mc_samples=50, refine=2)
    assert g.f_star == pytest.approx(-7.50, abs=1e-6)


def test_grid_oracle_constant_objective():
    p = SmpecProblem("const", Box(np.zeros(2), np.ones(2)), 1, lambda xs, ys, ws: np.full(xs.shape[0], 3.25),
                     lambda rng, m: np.zeros((m, 1)), lambda xs, ws: np.zeros((xs.shape[0], 1)))
    g = grid_oracle(p, resolution=5, mc_samples=10, refine=1)
    assert g.f_star == 3.25 and p.X.contains(g.x_star)


def test_grid_oracle_rejects_high_dimension():
    with pytest.raises(ValueError):
        grid_oracle(make_problem("hd2", n=3))


@pytest.mark.parametrize("gamma", [1.0, 1.1, 1.3])
def test_problem1_literature(gamma):
    p = problem1(gamma)
    res = minimize_scalar(lambda z: p.objective(np.array([z])), bounds=(1.0, 149.0), method="bounded",
                          options={"xatol": 1e-8})
    assert res.x == pytest.approx(p.optimum.x_star[0], abs=0.01)
    assert res.fun == pytest.approx(p.optimum.f_star, abs=0.01)


def test_problem1_followers_in_equilibrium():
    p = problem1()
    box = p.vi.set
    for x in (10.0, 55.55, 120.0):
        y = p.exact_lower(np.array([[x]]), np.zeros((1, 1)))[0]
        F = p.vi.map(np.array([x]), y, np.zeros((1, 1)))[0]
        assert np.linalg.norm(y - box.project(y - F)) <= 1e-7


def test_problem2_and_4_literature_points():
    p2, p4 = problem2(), problem4()
    assert p2.objective(np.array([0.5, 0.5])) == pytest.approx(-1.0)
    assert p4.objective(np.array([5.0, 9.0])) == pytest.approx(0.0, abs=1e-12)


def test_problem3_follower_is_a_projection():
    p = problem3()
    rng = make_rng(2)
    for x in rng.uniform(0, 50, size=(20, 2)):
        y = p.exact_lower(x[None], None)[0]
        Y = p.vi.set_for(x, None)
        F = p.vi.map(x, y, None)[0]
        assert np.linalg.norm(y - Y.project(y - 0.5 * F)) <= 1e-12
    assert p.objective(np.zeros(2)) == pytest.approx(0.0)


def test_problem4_follower_solves_box_vi():
    rng = make_rng(3)
    for x in rng.uniform(0, 10, size=(50, 2)):
        ub = np.array([15.0 - x[1], 15.0 - x[0]])
        y = upper_bounded_affine_vi(P4_MATRIX, P4_SHIFT, ub[None])[0]
        box = Box(np.full(2, -1e9), ub)
        assert natural_residual(P4_MATRIX, P4_SHIFT, box, y) <= 1e-9


@pytest.mark.parametrize("variant", [1, 2, 3])
def test_problem5_literature(variant):
    p = problem5(variant)
    x = p.optimum.x_star
    assert p.objective(x) == pytest.approx(p.optimum.f_star, abs=0.01)
    y = p.exact_lower(x[None], None)[0]
    assert np.all(y >= -1e-9)


def test_registry_and_appendix_list():
    assert set(REGISTRY) == {"cournot2s", "cournot1s", "bard", "p1", "p2", "p3", "p4", "p5", "hd1", "hd2"}
    with pytest.raises(KeyError):
        make_problem("nope")
    probs = appendix_problems()
    assert len(probs) == 9 and all(q.optimum is not None for q in probs)
    assert make_problem("hd1", n=3).dim_y == 3
    assert make_problem("hd2", n=4).dim_x == 4


def test_sign_convention_round_trip():
    p = cournot_two_stage()
    assert p.sense == -1 and p.reported(p.optimum.f_star) > 0
