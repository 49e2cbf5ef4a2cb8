"""Stackelberg-Nash-Cournot games with a leader and N symmetric followers.

Inverse demand p(Q) = a - bQ with random intercept a ~ U(a_low, a_high);
followers have quadratic cost (c/2) q^2 and the leader (d/2) x^2.  The
followers' equilibrium is the LCP 0 <= q  _|_  Mq + b x - a >= 0 with
M = (c+b) I + b 11', whose symmetric solution is

    q_i = max(0, (a - b x) / s),     s = c + b (N + 1).

Two-stage: followers see the realized a.  Single-stage: followers respond to
E[a] while the leader's revenue uses the realized a.  The leader maximizes
profit, so everything below is stored as negative profit.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar

from ..geometry import Box, Interval
from ..lower_level import ViProblem
from .base import AnalyticOptimum, InexactSettings, SmpecProblem


def positive_part_mean(t, lo, hi):
    """E[max(0, a - t)] for a ~ U(lo, hi), vectorized in t."""
    t = np.asarray(t, dtype=float)
    if hi == lo:
        return np.maximum(0.0, lo - t)
    mid = (hi - np.clip(t, lo, hi)) ** 2 / (2 * (hi - lo))
    return np.where(t <= lo, 0.5 * (lo + hi) - t, mid)


def _leader_optimum(expected, breakpoints, x_u):
    """Minimize a convex scalar function on [0, x_u]: bounded Brent on each
    piece between breakpoints, then keep the best candidate."""
    pts = sorted({0.0, x_u, *[p for p in breakpoints if 0.0 < p < x_u]})
    best_x, best_f = 0.0, np.inf
    for lo, hi in zip(pts[:-1], pts[1:]):
        res = minimize_scalar(lambda z: expected(np.array([z])), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-13 * (1 + hi)})
        for z in (lo, hi, res.x):
            f = expected(np.array([z]))
            if f < best_f:
                best_x, best_f = z, f
    return np.array([best_x]), float(best_f)


def _base(N, b, c, d, a_low, a_high, x_u, x0):
    if not (b > 0 and c > 0 and d > 0):
        raise ValueError("b, c, d must be positive")
    if N < 1:
        raise ValueError("need at least one follower")
    if not a_low <= a_high:
        raise ValueError("empty intercept range")
    s = c + b * (N + 1)
    mean_a = 0.5 * (a_low + a_high)

    def sample(rng, size):
        return rng.uniform(a_low, a_high, size=(size, 1))

    def upper(xs, ys, ws):
        x = xs[:, 0]
        Q = ys.sum(axis=1)
        return -(x * (ws[:, 0] - b * (x + Q)) - 0.5 * d * x * x)

    def vi_map(x, y, ws):
        base = (c + b) * y + b * (x[0] + y.sum())
        return base[None, :] - np.atleast_2d(ws)[:, :1]

    vi = ViProblem(vi_map, Box.nonnegative(N), mu=c + b, lip=c + b * (N + 1), sample=sample)
    return s, mean_a, sample, upper, vi


def cournot_two_stage(N=10, b=1.0, c=0.1, d=0.1, a_low=7.5, a_high=12.5, x_u=150.0, x0=0.0) -> SmpecProblem:
    s, mean_a, sample, upper, vi = _base(N, b, c, d, a_low, a_high, x_u, x0)

    def exact_lower(xs, ws):
        q = np.maximum(0.0, (np.atleast_2d(ws)[:, 0] - b * xs[:, 0]) / s)
        return np.repeat(q[:, None], N, axis=1)

    def expected(x):
        x = float(np.atleast_1d(x)[0])
        return -x * mean_a + b * x * x + (b * N * x / s) * float(positive_part_mean(b * x, a_low, a_high)) + 0.5 * d * x * x

    def implicit_gradient(xs, ws):
        x = xs[:, 0]
        a = np.atleast_2d(ws)[:, 0]
        active = a > b * x
        Q = N * np.maximum(0.0, (a - b * x) / s)
        dQ = np.where(active, -b * N / s, 0.0)
        return (-a + 2 * b * x + b * Q + b * x * dQ + d * x)[:, None]

    x_star, f_star = _leader_optimum(expected, [a_low / b, a_high / b], x_u)
    kappa = (c + b) / s
    return SmpecProblem(
        name="cournot2s", X=Interval(0.0, x_u), dim_y=N, upper=upper, sample_omega=sample,
        exact_lower=exact_lower, staging="two", vi=vi, expected=expected,
        optimum=AnalyticOptimum(x_star, f_star, "closed-form"), start=np.array([x0]), sense=-1,
        info={"mu_F": c + b, "L_F": c + b * (N + 1), "curvature": 2 * b * kappa + d},
        params=dict(N=N, b=b, c=c, d=d, a_low=a_low, a_high=a_high, x_u=x_u, implicit_gradient=implicit_gradient),
    )


def cournot_single_stage(N=10, b=0.01, c=3.0, d=0.1, a_low=7.5, a_high=12.5, x_u=150.0, x0=0.0,
                         vr_sa_alpha=0.15, m0=1e-4) -> SmpecProblem:
    s, mean_a, sample, upper, vi = _base(N, b, c, d, a_low, a_high, x_u, x0)

    def follower(x, a_bar):
        return np.maximum(0.0, (a_bar - b * x) / s)

    def exact_lower(xs, ws):
        return np.repeat(follower(xs[:, 0], mean_a)[:, None], N, axis=1)

    def saa_lower(xs, ws):
        # followers face the empirical mean of the fixed sample
        return np.repeat(follower(xs[:, 0], float(np.mean(ws[:, 0])))[:, None], N, axis=1)

    def expected(x):
        x = float(np.atleast_1d(x)[0])
        Q = N * float(follower(x, mean_a))
        return -x * (mean_a - b * (x + Q)) + 0.5 * d * x * x

    def implicit_gradient(xs, ws):
        x = xs[:, 0]
        a = np.atleast_2d(ws)[:, 0]
        a_bar = float(np.mean(a))
        Q = N * follower(x, a_bar)
        dQ = np.where(a_bar > b * x, -b * N / s, 0.0)
        return (-a + 2 * b * x + b * Q + b * x * dQ + d * x)[:, None]

    x_star, f_star = _leader_optimum(expected, [mean_a / b], x_u)
    kappa = (c + b) / s
    return SmpecProblem(
        name="cournot1s", X=Interval(0.0, x_u), dim_y=N, upper=upper, sample_omega=sample,
        exact_lower=exact_lower, staging="single", vi=vi,
        inexact=InexactSettings(vr_sa_alpha=vr_sa_alpha, m0=m0), expected=expected,
        optimum=AnalyticOptimum(x_star, f_star, "closed-form"), start=np.array([x0]), sense=-1,
        info={"mu_F": c + b, "L_F": c + b * (N + 1), "curvature": 2 * b * kappa + d},
        params=dict(N=N, b=b, c=c, d=d, a_low=a_low, a_high=a_high, x_u=x_u, saa_lower=saa_lower,
                    implicit_gradient=implicit_gradient),
    )
