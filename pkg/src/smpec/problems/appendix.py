"""Deterministic MPECs from the literature and two stochastic high-dimensional variants.

Deterministic instances are run through the two-stage drivers with a dummy
sample (always 0), so every scheme applies unchanged.
"""
from __future__ import annotations

import numba
import numpy as np
from scipy.optimize import minimize, nnls

from ..geometry import Ball, Box, Interval
from ..lower_level import ViProblem
from .base import AnalyticOptimum, SmpecProblem


def _no_sample(rng, size):
    return np.zeros((size, 1))


# --------------------------------------------------------------------------- oligopoly
@numba.njit(cache=True)
def _response(c, kf, beta, p, dp_abs, L):
    """Follower best response: root of c + kf y^(1/beta) + y |p'| - p on [0, L]."""
    if c - p >= 0.0:
        return 0.0
    if c + kf * L ** (1.0 / beta) + L * dp_abs - p <= 0.0:
        return L
    if beta == 1.0:
        return (p - c) / (kf + dp_abs)
    lo, hi = 0.0, L
    y = min(L, (p - c) / (dp_abs + kf + 1e-300))
    for _ in range(100):
        phi = c + kf * y ** (1.0 / beta) + y * dp_abs - p
        if phi > 0.0:
            hi = y
        else:
            lo = y
        dphi = kf / beta * y ** (1.0 / beta - 1.0) + dp_abs if y > 0.0 else np.inf
        y_new = y - phi / dphi
        if not (lo < y_new < hi):
            y_new = 0.5 * (lo + hi)
        if abs(y_new - y) <= 1e-15 * (1.0 + y) or hi - lo <= 1e-15 * (1.0 + hi):
            return y_new
        y = y_new
    return y


@numba.njit(cache=True)
def _excess(x, g, Q, c, kf, beta, L):
    p = 5000.0 ** (1.0 / g) * Q ** (-1.0 / g)
    tot = x - Q
    for i in range(c.shape[0]):
        tot += _response(c[i], kf[i], beta[i], p, p / (g * Q), L)
    return tot


@numba.njit(cache=True)
def _market_rows(xs, gammas, c, kf, beta, L):
    """Follower equilibrium per row: the total output Q solves Q = x + sum_i y_i(Q).
    The excess supply is decreasing in Q; Illinois regula falsi on log Q."""
    n_rows = xs.shape[0]
    n = c.shape[0]
    out = np.empty((n_rows, n))
    for r in range(n_rows):
        x = xs[r]
        g = gammas[r]
        a = np.log(max(x, 1e-10))
        b = np.log(x + n * L + 1e-10)
        fa = _excess(x, g, np.exp(a), c, kf, beta, L)
        fb = _excess(x, g, np.exp(b), c, kf, beta, L)
        m = a if fa <= 0.0 else b
        side = 0
        if fa > 0.0 and fb < 0.0:
            for _ in range(200):
                m = (a * fb - b * fa) / (fb - fa)
                if not (a < m < b):
                    m = 0.5 * (a + b)
                fm = _excess(x, g, np.exp(m), c, kf, beta, L)
                if fm > 0.0:
                    a, fa = m, fm
                    if side == 1:
                        fb *= 0.5
                    side = 1
                else:
                    b, fb = m, fm
                    if side == -1:
                        fa *= 0.5
                    side = -1
                if fm == 0.0 or b - a <= 1e-15 * (1.0 + abs(m)):
                    break
        Q = np.exp(m)
        p = 5000.0 ** (1.0 / g) * Q ** (-1.0 / g)
        for i in range(n):
            out[r, i] = _response(c[i], kf[i], beta[i], p, p / (g * Q), L)
    return out


def _deterministic_value(upper, exact_lower):
    """Closed-form objective for problems without randomness: one follower solve."""

    def expected(x):
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        w = np.zeros((1, 1))
        return float(upper(xs, exact_lower(xs, w), w)[0])

    return expected


def _cost(v, c, k, beta):
    # r(v) = c v + beta/(beta+1) K^(-1/beta) v^((1+beta)/beta)
    return c * v + beta / (beta + 1.0) * k ** (-1.0 / beta) * v ** ((1.0 + beta) / beta)


def _oligopoly(name, costs, K, betas, L, sample, gamma_of, staging, optimum=None, info=None):
    costs, K, betas = (np.asarray(v, dtype=float) for v in (costs, K, betas))
    cf, kf, bf = costs[1:], K[1:] ** (-1.0 / betas[1:]), betas[1:]
    n = cf.shape[0]

    def exact_lower(xs, ws):
        g = gamma_of(np.atleast_2d(ws) if ws is not None else np.zeros((xs.shape[0], 1)), xs.shape[0])
        return _market_rows(np.ascontiguousarray(xs[:, 0]), g, cf, kf, bf, float(L))

    def upper(xs, ys, ws):
        x = xs[:, 0]
        g = gamma_of(ws, xs.shape[0])
        Q = x + ys.sum(axis=1)
        price = 5000.0 ** (1.0 / g) * np.maximum(Q, 1e-300) ** (-1.0 / g)
        return _cost(np.maximum(x, 0.0), costs[0], K[0], betas[0]) - x * price

    def vi_map(x, y, ws):
        g = gamma_of(ws, 1)[0]
        Q = x[0] + y.sum()
        p = 5000.0 ** (1.0 / g) * Q ** (-1.0 / g)
        grad = cf + kf * np.maximum(y, 0.0) ** (1.0 / bf)
        return (grad - p + y * p / (g * Q))[None, :]

    # the follower map is not globally strongly monotone in closed form;
    # these moduli are conservative probes on the box, used only for step sizes
    vi = ViProblem(vi_map, Box(np.zeros(n), np.full(n, float(L))), mu=0.05, lip=5.0, sample=sample)
    return SmpecProblem(name=name, X=Interval(0.0, L), dim_y=n, upper=upper, sample_omega=sample,
                        exact_lower=exact_lower, staging=staging, vi=vi, optimum=optimum,
                        expected=_deterministic_value(upper, exact_lower) if sample is _no_sample else None,
                        deterministic=sample is _no_sample,
                        info=info or {}, params=dict(L=L))


P1_TABLE = {1.0: (55.55, -343.35), 1.1: (42.54, -203.15), 1.3: (24.14, -68.14)}


def problem1(gamma=1.0, L=150.0) -> SmpecProblem:
    """Five-firm oligopoly: the leader is firm 1, firms 2..5 play Cournot-Nash."""
    lit = P1_TABLE.get(float(gamma))
    opt = None if lit is None else AnalyticOptimum(np.array([lit[0]]), lit[1], "literature")
    return _oligopoly("p1", [10, 8, 6, 4, 2], [5] * 5, [1.2, 1.1, 1.0, 0.9, 0.8], L, _no_sample,
                      lambda ws, m: np.full(m, float(gamma)), "two", opt)


def hd_oligopoly(n=5, L=150.0, g_low=0.9, g_high=1.1) -> SmpecProblem:
    """n identical followers (c=6, beta=1, K=5) and random demand exponent gamma(w)."""

    def sample(rng, size):
        return rng.uniform(g_low, g_high, size=(size, 1))

    def gamma_of(ws, m):
        return np.ascontiguousarray(np.broadcast_to(np.atleast_2d(ws)[:, 0], (m,)), dtype=float)

    return _oligopoly("hd1", [6.0] * (n + 1), [5.0] * (n + 1), [1.0] * (n + 1), L, sample, gamma_of, "two")


# --------------------------------------------------------------------------- problems 2-4
def problem2() -> SmpecProblem:
    Y = Box([0.5, 0.5], [1.5, 1.5])

    def exact_lower(xs, ws):
        return np.clip(xs, 0.5, 1.5)

    def upper(xs, ys, ws):
        return np.sum(xs ** 2 - 2 * xs + ys ** 2, axis=1)

    vi = ViProblem(lambda x, y, ws: (2 * y - 2 * x)[None, :], Y, mu=2.0, lip=2.0)
    return SmpecProblem("p2", Box([0.0, 0.0], [2.0, 2.0]), 2, upper, _no_sample, exact_lower, vi=vi,
                        expected=_deterministic_value(upper, exact_lower), deterministic=True,
                        optimum=AnalyticOptimum(np.array([0.5, 0.5]), -1.0, "literature"))


def problem3(R=100.0, x0=(5.0, 5.0)) -> SmpecProblem:
    def caps(x):
        return np.minimum(20.0, (x - 10.0) / 2.0)

    def exact_lower(xs, ws):
        return np.clip(xs - 20.0, -10.0, caps(xs))

    def upper(xs, ys, ws):
        pen = np.maximum(0.0, xs[:, 0] + xs[:, 1] + ys[:, 0] - 2 * ys[:, 1] - 40.0)
        return 2 * xs.sum(axis=1) - 3 * ys.sum(axis=1) - 60.0 + R * pen ** 2

    vi = ViProblem(lambda x, y, ws: (2 * y - 2 * x + 40.0)[None, :], Box([-10.0, -10.0], [20.0, 20.0]), mu=2.0,
                   lip=2.0, set_for=lambda x, w: Box([-10.0, -10.0], caps(np.asarray(x, dtype=float))))
    return SmpecProblem("p3", Box([0.0, 0.0], [50.0, 50.0]), 2, upper, _no_sample, exact_lower, vi=vi,
                        expected=_deterministic_value(upper, exact_lower), deterministic=True,
                        optimum=AnalyticOptimum(np.array([0.0, 0.0]), 0.01, "literature"), start=np.asarray(x0, dtype=float),
                        params=dict(R=R))


P4_MATRIX = np.array([[2.0, 8.0 / 3.0], [1.25, 2.0]])
P4_SHIFT = np.array([-34.0, -24.25])


@numba.njit(cache=True)
def _upper_bounded_rows(A, q, ub, tol):
    m = ub.shape[0]
    out = np.empty((m, 2))
    ok = np.ones(m, dtype=np.bool_)
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    free0 = (-q[0] * A[1, 1] + q[1] * A[0, 1]) / det
    free1 = (-q[1] * A[0, 0] + q[0] * A[1, 0]) / det
    for r in range(m):
        u0, u1 = ub[r, 0], ub[r, 1]
        eps = tol * (1.0 + max(abs(u0), abs(u1)))
        # no bound binds
        if free0 <= u0 + eps and free1 <= u1 + eps:
            out[r, 0], out[r, 1] = free0, free1
            continue
        # first bound binds
        y1 = -(q[1] + A[1, 0] * u0) / A[1, 1]
        if y1 <= u1 + eps and A[0, 0] * u0 + A[0, 1] * y1 + q[0] <= eps:
            out[r, 0], out[r, 1] = u0, y1
            continue
        # second bound binds
        y0 = -(q[0] + A[0, 1] * u1) / A[0, 0]
        if y0 <= u0 + eps and A[1, 0] * y0 + A[1, 1] * u1 + q[1] <= eps:
            out[r, 0], out[r, 1] = y0, u1
            continue
        # both bind
        if A[0, 0] * u0 + A[0, 1] * u1 + q[0] <= eps and A[1, 0] * u0 + A[1, 1] * u1 + q[1] <= eps:
            out[r, 0], out[r, 1] = u0, u1
            continue
        ok[r] = False
    return out, ok


def upper_bounded_affine_vi(A, q, ub):
    """Rows of VI({y <= ub}, Ay + q) for 2x2 A by enumerating which bounds bind.
    At a bound the map component must be <= 0, elsewhere it vanishes."""
    ub = np.ascontiguousarray(np.atleast_2d(ub), dtype=float)
    out, ok = _upper_bounded_rows(np.asarray(A, dtype=float), np.asarray(q, dtype=float), ub, 1e-10)
    if not ok.all():
        raise RuntimeError("box VI enumeration found no solution")
    return out


def problem4() -> SmpecProblem:
    def bounds(xs):
        xs = np.atleast_2d(xs)
        return np.stack([15.0 - xs[:, 1], 15.0 - xs[:, 0]], axis=1)

    def exact_lower(xs, ws):
        return upper_bounded_affine_vi(P4_MATRIX, P4_SHIFT, bounds(xs))

    def upper(xs, ys, ws):
        return 0.5 * np.sum((xs - ys) ** 2, axis=1)

    sym = 0.5 * (P4_MATRIX + P4_MATRIX.T)
    vi = ViProblem(lambda x, y, ws: (P4_MATRIX @ y + P4_SHIFT)[None, :], Box(np.full(2, -np.inf), np.full(2, 15.0)),
                   mu=float(np.linalg.eigvalsh(sym).min()), lip=float(np.linalg.norm(P4_MATRIX, 2)),
                   set_for=lambda x, w: Box(np.full(2, -np.inf), bounds(x)[0]))
    return SmpecProblem("p4", Box([0.0, 0.0], [10.0, 10.0]), 2, upper, _no_sample, exact_lower, vi=vi,
                        expected=_deterministic_value(upper, exact_lower), deterministic=True,
                        optimum=AnalyticOptimum(np.array([5.0, 9.0]), 0.0, "literature"))


# --------------------------------------------------------------------------- problem 5
P5_TABLE = {1: (4.06, 3.20), 2: (5.15, 3.45), 3: (2.39, 4.60)}


def _p5_kkt(x):
    """KKT point (y1..y6) of the convex program whose optimality system is the
    six-component map: primal by SLSQP, multipliers by nonnegative least squares
    on the stationarity equations."""
    q1, l1 = 1.0 + 0.2 * x, 3.0 + 1.333 * x
    q2, l2 = 1.0 + 0.1 * x, x
    obj = lambda y: 0.5 * q1 * y[0] ** 2 - l1 * y[0] + 0.5 * q2 * y[1] ** 2 - l2 * y[1]
    jac = lambda y: np.array([q1 * y[0] - l1, q2 * y[1] - l2])
    cons = [
        {"type": "ineq", "fun": lambda y: 0.333 * y[0] - y[1] + 1.0 - 0.1 * x, "jac": lambda y: np.array([0.333, -1.0])},
        {"type": "ineq", "fun": lambda y: 9.0 + 0.1 * x - y[0] ** 2 - y[1] ** 2, "jac": lambda y: np.array([-2 * y[0], -2 * y[1]])},
    ]
    res = minimize(obj, np.array([0.5, 0.5]), jac=jac, bounds=[(0, None), (0, None)], constraints=cons,
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    y = res.x
    g = np.array([0.333 * y[0] - y[1] + 1.0 - 0.1 * x, 9.0 + 0.1 * x - y[0] ** 2 - y[1] ** 2, y[0], y[1]])
    grads = np.array([[0.333, -1.0], [-2 * y[0], -2 * y[1]], [1.0, 0.0], [0.0, 1.0]]).T
    active = g <= 1e-7
    mult = np.zeros(4)
    if active.any():
        mult[active], _ = nnls(grads[:, active], jac(y))
    return np.concatenate([y, mult])


def problem5(variant=1) -> SmpecProblem:
    """Best effort: the follower is solved as the underlying convex program."""
    if variant not in P5_TABLE:
        raise ValueError("variant must be 1, 2 or 3")

    def exact_lower(xs, ws):
        return np.array([_p5_kkt(float(x)) for x in xs[:, 0]])

    def upper(xs, ys, ws):
        base = (ys[:, 0] - 3.0) ** 2 + (ys[:, 1] - 4.0) ** 2
        if variant == 2:
            base = base + (ys[:, 2] - 1.0) ** 2
        elif variant == 3:
            base = base + 10.0 * ys[:, 3] ** 2
        return 0.5 * base

    x_lit, f_lit = P5_TABLE[variant]
    return SmpecProblem("p5", Interval(0.0, 10.0), 6, upper, _no_sample, exact_lower,
                        expected=_deterministic_value(upper, exact_lower), deterministic=True,
                        optimum=AnalyticOptimum(np.array([x_lit]), f_lit, "literature"),
                        params=dict(variant=variant))


# --------------------------------------------------------------------------- hd2
def hd_projection(n=2, w_low=-0.5, w_high=0.5) -> SmpecProblem:
    """E[||x - 1||^2 + ||y(w)||^2] with y(w) = P_B[x - w/2], B the ball of radius 0.5 about 1."""
    Y = Ball(np.ones(n), 0.5)

    def sample(rng, size):
        return rng.uniform(w_low, w_high, size=(size, n))

    def exact_lower(xs, ws):
        return Y.project(xs - 0.5 * np.atleast_2d(ws))

    def upper(xs, ys, ws):
        return np.sum((xs - 1.0) ** 2, axis=1) + np.sum(ys ** 2, axis=1)

    vi = ViProblem(lambda x, y, ws: 2 * y[None, :] - 2 * x[None, :] + np.atleast_2d(ws), Y, mu=2.0, lip=2.0,
                   sample=sample)
    return SmpecProblem("hd2", Box(np.zeros(n), np.full(n, 2.0)), n, upper, sample, exact_lower, vi=vi)
