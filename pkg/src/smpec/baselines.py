"""Sample average approximation baseline and replicate statistics.

The SAA solver fixes ``K_samples`` draws of w and minimizes the empirical
implicit objective over X by projected gradient with Armijo backtracking.
Gradients come from the problem's analytic implicit gradient when it provides
one, otherwise from central differences with exact follower solves.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats


class SaaStallError(RuntimeError):
    pass


@dataclass(frozen=True)
class SaaConfig:
    K_samples: int = 1000
    step0: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-8
    armijo: float = 1e-4
    max_halvings: int = 60
    stall_limit: int = 50
    stationary_tol: float = 1e-4  # projected-gradient size accepted when backtracking fails
    fd_step: float = 1e-6  # relative to 1 + ||x||
    use_analytic: bool = True

    def __post_init__(self):
        if self.K_samples < 1:
            raise ValueError("K_samples must be at least 1")
        if not self.step0 > 0:
            raise ValueError("initial step must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SaaResult:
    x_hat: np.ndarray
    value: float
    iterations: int
    converged: bool
    wall_time: float
    trace: list = field(default_factory=list)


class SaaObjective:
    """Empirical implicit objective over a fixed sample."""

    def __init__(self, problem, ws: np.ndarray):
        self.problem = problem
        self.ws = np.atleast_2d(ws)
        self.lower = problem.params.get("saa_lower") if problem.staging == "single" else None
        self.gradient_fn = problem.params.get("implicit_gradient")
        self.evaluations = 0

    def follower(self, xs: np.ndarray) -> np.ndarray:
        p = self.problem
        if p.staging == "two":
            return p.exact_lower(xs, self.ws)
        if self.lower is not None:
            return self.lower(xs[:1], self.ws).repeat(xs.shape[0], axis=0)
        return np.broadcast_to(p.exact_lower(xs[:1], None), (xs.shape[0], p.dim_y))

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xs = np.broadcast_to(x, (self.ws.shape[0], x.shape[0]))
        self.evaluations += 1
        return float(np.mean(self.problem.upper(xs, self.follower(xs), self.ws)))

    def gradient(self, x, cfg: SaaConfig, fd_scale: float = 1.0) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if cfg.use_analytic and self.gradient_fn is not None:
            xs = np.broadcast_to(x, (self.ws.shape[0], x.shape[0]))
            return np.mean(self.gradient_fn(xs, self.ws), axis=0)
        h = fd_scale * cfg.fd_step * (1.0 + np.linalg.norm(x))
        g = np.empty_like(x)
        for i in range(x.shape[0]):
            e = np.zeros_like(x)
            e[i] = h
            g[i] = (self(x + e) - self(x - e)) / (2 * h)
        return g


def saa_solve(problem, cfg: SaaConfig, rng: np.random.Generator, x0=None, ws=None) -> SaaResult:
    """Projected gradient on the SAA objective.  ``ws`` overrides the sample."""
    t0 = time.perf_counter()
    if ws is None:
        ws = problem.sample_omega(rng, cfg.K_samples)
    obj = SaaObjective(problem, ws)
    X = problem.X
    x = problem.x0() if x0 is None else X.project(np.atleast_1d(np.asarray(x0, dtype=float)))
    fx = obj(x)
    trace = [fx]
    step = cfg.step0
    stalls = 0
    fd_scale = 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        g = obj.gradient(x, cfg, fd_scale)
        if np.linalg.norm(X.project(x - cfg.step0 * g) - x) / cfg.step0 <= cfg.tol:
            converged = True
            break
        accepted = False
        s = step
        for _ in range(cfg.max_halvings):
            x_new = X.project(x - s * g)
            f_new = obj(x_new)
            if f_new <= fx + cfg.armijo * float(g @ (x_new - x)) and f_new < fx:
                accepted = True
                break
            s *= 0.5
        if accepted:
            moved = np.linalg.norm(x_new - x)
            x, fx = x_new, f_new
            trace.append(fx)
            stalls = 0
            fd_scale = 1.0
            step = min(2.0 * s, cfg.step0)
            if moved / s <= cfg.tol:
                converged = True
                break
        else:
            d = X.project(x - cfg.step0 * g) - x
            h = cfg.fd_step * (1.0 + np.linalg.norm(x))
            slope = (obj(X.project(x + h * d / np.linalg.norm(d))) - fx) / h
            if slope >= -cfg.stationary_tol * (1.0 + abs(fx)):
                # no one-sided descent along the projected direction (e.g. a kink minimizer)
                converged = True
                break
            stalls += 1
            step = cfg.step0
            fd_scale *= 2.0
            if stalls >= cfg.stall_limit:
                raise SaaStallError(f"objective did not decrease for {stalls} consecutive steps at x={x}")
    return SaaResult(x, fx, it, converged, time.perf_counter() - t0, trace)


@dataclass(frozen=True)
class ConfidenceInterval:
    mean: float
    half_width: float
    n: int

    @property
    def lower(self) -> float:
        return self.mean - self.half_width

    @property
    def upper(self) -> float:
        return self.mean + self.half_width


def confidence_interval(values, level: float = 0.95) -> ConfidenceInterval:
    """Two-sided Student-t interval mean +- t_{(1+level)/2, n-1} s / sqrt(n)."""
    v = np.asarray(list(values), dtype=float).ravel()
    if v.size < 2:
        raise ValueError("need at least two values for a confidence interval")
    s = float(np.std(v, ddof=1))
    t = float(stats.t.ppf(0.5 * (1.0 + level), v.size - 1))
    return ConfidenceInterval(float(v.mean()), t * s / np.sqrt(v.size), int(v.size))
