"""Bard-type bilevel program with a stochastic follower (nonconvex implicit objective).

Leader:   min  -a x1^2 - b x2^2 - 3 x2 - 4 y1 + y2^2
          s.t. x1^2 + 2 x2 <= 4,  0 <= x1 <= 1,  0 <= x2 <= 2
Follower: min  E[c y1^2 + d y2^2 - xi y2],   xi ~ U(4, 6)
          s.t. 2 y1 - y2 <= x1^2 - 2 x1 + x2^2 + 3,  -3 y1 + y2 <= x2 - 4,  y >= 0

(the follower's 2 x1^2 term is constant in y and dropped).  The expectation
only shifts the linear term, so the follower solves a QP in E[xi] = 5.
"""
from __future__ import annotations

import numpy as np

from ..geometry import Box, Intersection, QuadraticSublevel, polyhedron_from_matrix
from ..lower_level import QpActiveSet, ViProblem
from .base import AnalyticOptimum, InexactSettings, SmpecProblem

# global optima reported by a global solver for the nine published instances
BARON_OPTIMA = {
    (1, 0, 1, 1): -7.50, (1, 0, 2, 2): -9.23, (1, 0, 3, 3): -9.25,
    (5, 0, 1, 1): -11.50, (5, 0, 2, 2): -13.23, (5, 0, 3, 3): -13.25,
    (10, 0, 1, 1): -16.50, (10, 0, 2, 2): -18.23, (10, 0, 3, 3): -18.25,
}

CONSTRAINTS = np.array([[2.0, -1.0], [-3.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def leader_set() -> Intersection:
    return Intersection((Box([0.0, 0.0], [1.0, 2.0]), QuadraticSublevel([1.0, 0.0], [0.0, 2.0], 4.0)))


def constraint_rhs(xs) -> np.ndarray:
    xs = np.atleast_2d(xs)
    x1, x2 = xs[:, 0], xs[:, 1]
    z = np.zeros_like(x1)
    return np.stack([x1 ** 2 - 2 * x1 + x2 ** 2 + 3, x2 - 4, z, z], axis=1)


def bard_bilevel(a_coef=1.0, b_coef=0.0, c_coef=1.0, d_coef=1.0, xi_low=4.0, xi_high=6.0,
                 x0=None) -> SmpecProblem:
    if not (c_coef > 0 and d_coef > 0):
        raise ValueError("follower objective must be strongly convex (c, d > 0)")
    H = np.diag([2.0 * c_coef, 2.0 * d_coef])
    qp = QpActiveSet(H, CONSTRAINTS)
    mean_xi = 0.5 * (xi_low + xi_high)

    def sample(rng, size):
        return rng.uniform(xi_low, xi_high, size=(size, 1))

    def solve(xs, xi_bar):
        return qp.solve(np.array([[0.0, -xi_bar]]), constraint_rhs(xs))

    def exact_lower(xs, ws):
        return solve(xs, mean_xi)

    def saa_lower(xs, ws):
        return solve(xs, float(np.mean(np.atleast_2d(ws)[:, 0])))

    def upper(xs, ys, ws):
        x1, x2 = xs[:, 0], xs[:, 1]
        return -a_coef * x1 ** 2 - b_coef * x2 ** 2 - 3 * x2 - 4 * ys[:, 0] + ys[:, 1] ** 2

    def expected(x):
        xs = np.atleast_2d(x)
        return float(upper(xs, exact_lower(xs, None), None)[0])

    def vi_map(x, y, ws):
        ws = np.atleast_2d(ws)
        out = np.empty((ws.shape[0], 2))
        out[:, 0] = H[0, 0] * y[0]
        out[:, 1] = H[1, 1] * y[1] - ws[:, 0]
        return out

    def set_for(x, w=None):
        return polyhedron_from_matrix(CONSTRAINTS, constraint_rhs(x)[0])

    vi = ViProblem(vi_map, Box.nonnegative(2), mu=float(H.diagonal().min()), lip=float(H.diagonal().max()),
                   sample=sample, set_for=set_for)
    key = (a_coef, b_coef, c_coef, d_coef)
    target = BARON_OPTIMA.get(tuple(float(v) for v in key))
    optimum = None if target is None else AnalyticOptimum(None, target, "literature")
    return SmpecProblem(
        name="bard", X=leader_set(), dim_y=2, upper=upper, sample_omega=sample, exact_lower=exact_lower,
        staging="single", vi=vi, inexact=InexactSettings(sa_alpha0=1.0, sa_shift=0.01), expected=expected,
        optimum=optimum, start=None if x0 is None else np.asarray(x0, dtype=float),
        info={"mu_F": vi.mu, "L_F": vi.lip},
        params=dict(a=a_coef, b=b_coef, c=c_coef, d=d_coef, saa_lower=saa_lower),
    )
