"""Zeroth-order upper-level schemes for implicit stochastic MPECs.

* :func:`run_convex` -- projected single-sample ZO step with weighted
  iterate averaging (single- or two-stage, exact or inexact follower);
* :func:`run_nonconvex` -- constant step, growing mini-batch N_k = k+1,
  output x_R with R uniform on the tail {ceil(lam K), ..., K};
* :func:`run_accelerated` -- Nesterov-type momentum with batch
  floor((k+1)^(1+delta)), exact follower only.

The driver never touches the follower directly: a problem hands out an
:class:`~smpec.smoothing.ImplicitValueOracle` bound to the requested lower
solver, and the driver reads that oracle's counters at the end.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import SphereSampler, sample_sphere
from .lower_level import batch_size, log_steps
from .smoothing import (LowerLevelError, ZoGradientEstimator, zo_gradient_minibatch,
                        zo_gradient_sample, zo_gradient_samples)


@dataclass(frozen=True)
class Schedule:
    gamma0: float = 1.0
    a: float = 0.5
    eta0: float = 1.0
    b: float = 0.5
    r: float = 0.0
    tau: float = 5.0
    rho: float = 1 / 1.5
    m0: float = 1.0
    lam: float = 0.5
    K: int = 1000
    delta: float = 0.01

    def __post_init__(self):
        if not (self.gamma0 > 0 and self.eta0 > 0):
            raise ValueError("gamma0 and eta0 must be positive")
        if self.a < 0 or self.b < 0:
            raise ValueError("decay exponents must be nonnegative")
        if not 0 <= self.r < 1:
            raise ValueError("averaging exponent r must lie in [0, 1)")
        if not 0 < self.lam < 1:
            raise ValueError("tail fraction lambda must lie in (0, 1)")
        if self.K < 0:
            raise ValueError("iteration budget must be nonnegative")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    @classmethod
    def accelerated(cls, K: int = 1000, delta: float = 0.01, **kw) -> "Schedule":
        """gamma_k = 1/(2(k+1)), eta_k = 1/(k+1)."""
        return cls(gamma0=0.5, a=1.0, eta0=1.0, b=1.0, K=K, delta=delta, **kw)

    @classmethod
    def constant(cls, gamma: float, eta: float, K: int, **kw) -> "Schedule":
        return cls(gamma0=gamma, a=0.0, eta0=eta, b=0.0, K=K, **kw)


@dataclass(frozen=True)
class ScheduleValues:
    gamma: float
    eta: float
    t: int
    N: int
    M: tuple


def schedule_eval(sched: Schedule, k: int, mode: str = "convex") -> ScheduleValues:
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    gamma = sched.gamma0 / (k + 1) ** sched.a
    eta = sched.eta0 / (k + 1) ** sched.b
    t = log_steps(sched.tau, k)
    if mode == "convex":
        N = 1
    elif mode == "nonconvex":
        N = k + 1
    elif mode == "accelerated":
        # floor((k+1)^(1+delta)); the guard absorbs pow() rounding at exact powers
        N = int(math.floor((k + 1) ** (1 + sched.delta) + 1e-9))
    else:
        raise ValueError(f"unknown schedule mode {mode!r}")
    M = tuple(batch_size(sched.m0, sched.rho, j) for j in range(t))
    return ScheduleValues(gamma, eta, t, N, M)


@dataclass
class AveragingState:
    """x_bar_k = sum_j gamma_j^r x_j / sum_j gamma_j^r, kept recursively."""

    S: float
    x_bar: np.ndarray

    @classmethod
    def start(cls, x0, gamma0: float, r: float) -> "AveragingState":
        return cls(gamma0 ** r, np.array(x0, dtype=float))

    def update(self, x, gamma: float, r: float):
        w = gamma ** r
        S_new = self.S + w
        self.x_bar = (self.S * self.x_bar + w * np.asarray(x, dtype=float)) / S_new
        self.S = S_new
        return self.x_bar


@dataclass
class RunTrace:
    x: np.ndarray  # averaged iterate (convex), x_R (nonconvex) or z_K (accelerated)
    x_last: np.ndarray
    seed: Optional[int] = None
    iterates: Optional[list] = None
    R: Optional[int] = None
    upper_projections: int = 0
    upper_samples: int = 0
    lower_solves: int = 0
    lower_projections: int = 0
    lower_samples: int = 0
    wall_time: float = 0.0
    snapshots: dict = field(default_factory=dict)

    def counters(self) -> dict:
        return dict(upper_projections=self.upper_projections, upper_samples=self.upper_samples,
                    lower_solves=self.lower_solves, lower_projections=self.lower_projections,
                    lower_samples=self.lower_samples)


def _start_point(problem, x0):
    x = problem.x0() if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    return problem.X.project(x)


def _finish(trace: RunTrace, oracle, t0):
    trace.lower_solves = oracle.lower_solves
    trace.lower_projections = getattr(oracle, "lower_projections", 0)
    trace.lower_samples = getattr(oracle, "lower_samples", 0)
    trace.wall_time = time.perf_counter() - t0
    return trace


def _at_iteration(exc: LowerLevelError, k: int) -> LowerLevelError:
    return LowerLevelError(f"iteration {k}: {exc}")


def run_convex(problem, sched: Schedule, lower_mode: str, rng: np.random.Generator, x0=None,
               record: bool = False, snapshot_at=(), seed: Optional[int] = None) -> RunTrace:
    """Single-sample projected ZO scheme with weighted averaging.

    In inexact mode the follower is solved by VR-SA (single-stage) or by the
    fixed-sample projection method (two-stage) with ceil(tau ln(k+1)) steps.
    ``snapshot_at`` stores the averaged iterate after the listed iteration
    counts, which lets one run supply several budgets K.
    """
    t0 = time.perf_counter()
    oracle = problem.oracle(lower_mode, rng, scheme="convex", sched=sched)
    x = _start_point(problem, x0)
    n = x.shape[0]
    avg = AveragingState.start(x, sched.gamma0, sched.r)
    sampler = SphereSampler(n, rng)
    trace = RunTrace(x=avg.x_bar.copy(), x_last=x.copy(), seed=seed, iterates=[x.copy()] if record else None)
    wanted = set(int(s) for s in snapshot_at)
    for k in range(sched.K):
        gamma = sched.gamma0 / (k + 1) ** sched.a
        eta = sched.eta0 / (k + 1) ** sched.b
        est = ZoGradientEstimator(n, eta, lower_mode)
        v = sample_sphere(sampler, eta)
        w = problem.sample_omega(rng, 1)
        try:
            g = zo_gradient_sample(est, oracle, x, v, w, k)
        except LowerLevelError as exc:
            raise _at_iteration(exc, k) from exc
        x = problem.X.project(x - gamma * g)
        trace.upper_projections += 1
        trace.upper_samples += 1
        avg.update(x, sched.gamma0 / (k + 2) ** sched.a, sched.r)
        if record:
            trace.iterates.append(x.copy())
        if k + 1 in wanted:
            trace.snapshots[k + 1] = avg.x_bar.copy()
    trace.x = avg.x_bar.copy()
    trace.x_last = x
    return _finish(trace, oracle, t0)


def run_nonconvex(problem, sched: Schedule, lower_mode: str, rng: np.random.Generator, x0=None,
                  record: bool = False, lipschitz: Optional[float] = None, seed: Optional[int] = None) -> RunTrace:
    """Constant-step mini-batch ZO scheme; returns x_R for R uniform on the tail."""
    t0 = time.perf_counter()
    gamma, eta = sched.gamma0, sched.eta0
    L0 = lipschitz if lipschitz is not None else problem.info.get("L0")
    x = _start_point(problem, x0)
    n = x.shape[0]
    if L0 is not None:
        if not gamma < eta / (n * L0):
            raise ValueError(f"stepsize {gamma} must be below eta/(n L0) = {eta / (n * L0):.4g}")
    else:
        warnings.warn("no Lipschitz constant declared; stepsize condition gamma < eta/(n L0) unchecked", stacklevel=2)
    oracle = problem.oracle(lower_mode, rng, scheme="nonconvex", sched=sched)
    K = sched.K
    tail = int(math.ceil(sched.lam * K))
    kept = {}
    if tail == 0:
        kept[0] = x.copy()
    trace = RunTrace(x=x.copy(), x_last=x.copy(), seed=seed, iterates=[x.copy()] if record else None)
    shared = problem.staging == "single"
    for k in range(K):
        est = ZoGradientEstimator(n, eta, lower_mode, batch=k + 1)
        try:
            g = zo_gradient_minibatch(est, oracle, x, rng, k, shared_base=shared)
        except LowerLevelError as exc:
            raise _at_iteration(exc, k) from exc
        x = problem.X.project(x - gamma * g)
        trace.upper_projections += 1
        trace.upper_samples += k + 1
        if k + 1 >= tail:
            kept[k + 1] = x.copy()
        if record:
            trace.iterates.append(x.copy())
    R = int(rng.integers(tail, K + 1)) if K > 0 else 0
    trace.R = R
    trace.x = kept[R]
    trace.x_last = x
    return _finish(trace, oracle, t0)


def momentum_sequence(K: int) -> np.ndarray:
    lam = np.empty(K + 1)
    lam[0] = 1.0
    for k in range(K):
        lam[k + 1] = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * lam[k] ** 2))
    return lam


def run_accelerated(problem, sched: Schedule, rng: np.random.Generator, x0=None, record: bool = False,
                    seed: Optional[int] = None) -> RunTrace:
    """Accelerated exact scheme: z_{k+1} = P[x_k - gamma_k g], then momentum on z."""
    t0 = time.perf_counter()
    oracle = problem.oracle("exact", rng, scheme="accelerated", sched=sched)
    x = _start_point(problem, x0)
    n = x.shape[0]
    z = x.copy()
    lam = 1.0
    trace = RunTrace(x=z.copy(), x_last=x.copy(), seed=seed, iterates=[z.copy()] if record else None)
    for k in range(sched.K):
        vals = schedule_eval(sched, k, "accelerated")
        est = ZoGradientEstimator(n, vals.eta, "exact", batch=max(vals.N, 1))
        try:
            g = zo_gradient_minibatch(est, oracle, x, rng, k)
        except LowerLevelError as exc:
            raise _at_iteration(exc, k) from exc
        z_new = problem.X.project(x - vals.gamma * g)
        lam_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * lam * lam))
        x = z_new + ((lam - 1.0) / lam_new) * (z_new - z)
        z, lam = z_new, lam_new
        trace.upper_projections += 1
        trace.upper_samples += est.batch
        if record:
            trace.iterates.append(z.copy())
    trace.x = z.copy()
    trace.x_last = x
    return _finish(trace, oracle, t0)


@dataclass(frozen=True)
class ResidualConfig:
    eta: float
    beta: float
    mc_batch: int = 10_000

    def __post_init__(self):
        if not (self.eta > 0 and self.beta > 0):
            raise ValueError("eta and beta must be positive")
        if self.mc_batch < 2:
            raise ValueError("mc_batch must be at least 2")


def residual_map(X, x, grad, beta: float) -> np.ndarray:
    return beta * (x - X.project(x - grad / beta))


def residual_norm(problem, x, cfg: ResidualConfig, rng: np.random.Generator) -> tuple:
    """||beta (x - P_X[x - grad f_eta(x)/beta])|| with a first-order standard error.

    The smoothed gradient is a mini-batch of exact ZO samples.  Its covariance
    is pushed through a finite-difference Jacobian of the residual map and the
    reported error is the root of the propagated trace, which stays meaningful
    when the residual itself is near zero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    oracle = problem.oracle("exact", rng, scheme="residual")
    est = ZoGradientEstimator(n, cfg.eta, "exact", batch=cfg.mc_batch)
    G = zo_gradient_samples(est, oracle, x, rng)
    mean = G.mean(axis=0)
    cov = np.atleast_2d(np.cov(G, rowvar=False)) / cfg.mc_batch
    value = float(np.linalg.norm(residual_map(problem.X, x, mean, cfg.beta)))
    h = 1e-6 * (1.0 + np.abs(mean))
    jac = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        up = residual_map(problem.X, x, mean + e, cfg.beta)
        dn = residual_map(problem.X, x, mean - e, cfg.beta)
        jac[:, i] = (up - dn) / (2 * h[i])
    stderr = float(np.sqrt(max(np.trace(jac @ cov @ jac.T), 0.0)))
    return value, stderr
