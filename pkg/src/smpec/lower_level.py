"""Solvers for parametrized strongly monotone variational inequalities.

Three projection schemes drive the follower problem:

* :func:`vr_sa_solve` -- stochastic approximation with geometrically growing
  mini-batches, ``ceil(tau ln(k+1))`` steps at outer iteration k;
* :func:`sa_solve_diminishing` -- single-sample SA with stepsize
  ``alpha/(t + Gamma)``, ``k+1`` steps;
* :func:`deterministic_projection_solve` -- fixed-sample projection method.

:func:`affine_vi_exact` and :func:`qp_active_set` provide exact answers for
affine maps and small quadratic programs.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numba
import numpy as np

from .geometry import Box, ConvexSet


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


@dataclass
class ViProblem:
    """VI(Y, F(x, .)) with a possibly sampled map.

    ``map(x, y, ws)`` returns one row per sample row in ``ws`` (shape
    ``(M, dim_y)``); deterministic maps ignore ``ws`` but must still return
    a 2-D array.  ``set_for(x, w)`` builds Y when it depends on the leader
    decision or the sample.
    """

    map: Callable[[np.ndarray, np.ndarray, Optional[np.ndarray]], np.ndarray]
    set: ConvexSet
    mu: float
    lip: float
    sample: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    set_for: Optional[Callable[[np.ndarray, Optional[np.ndarray]], ConvexSet]] = None
    noise_bound: Optional[float] = None  # nu_y in the batch-size lower bound

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("strong monotonicity modulus must be positive")
        if self.lip < self.mu:
            raise ValueError("Lipschitz constant must be at least the monotonicity modulus")

    def feasible_set(self, x, w=None) -> ConvexSet:
        return self.set if self.set_for is None else self.set_for(x, w)

    def mean_map(self, x, y, ws=None) -> np.ndarray:
        return np.atleast_2d(self.map(x, y, ws)).mean(axis=0)


@dataclass
class ViSolveReport:
    y: np.ndarray
    projections: int = 0
    samples: int = 0
    steps: int = 0
    trajectory: Optional[list] = None


@dataclass(frozen=True)
class VrSaConfig:
    alpha: float
    rho: float = 1 / 1.5
    m0: float = 1.0
    tau: float = 5.0


@dataclass(frozen=True)
class DiminishingConfig:
    alpha0: float
    alpha: Optional[float] = None  # numerator of alpha/(t + Gamma); defaults to alpha0
    gamma_shift: float = 1.0


@dataclass(frozen=True)
class ProjectionConfig:
    alpha: float
    tau: float = 5.0


def log_steps(tau: float, k: int) -> int:
    """t_k = ceil(tau ln(k+1))."""
    return int(math.ceil(tau * math.log(k + 1) - 1e-12))


def batch_size(m0: float, rho: float, t: int) -> int:
    """M_t = max(1, ceil(M0 rho^-t))."""
    return max(1, int(math.ceil(m0 * rho ** (-t) - 1e-9)))


def _start(vi: ViProblem, x_hat, w, y0):
    Y = vi.feasible_set(x_hat, w)
    y = Y.anchor() if y0 is None else Y.project(np.asarray(y0, dtype=float))
    return Y, y


def vr_sa_solve(vi: ViProblem, x_hat, k: int, cfg: VrSaConfig, rng: np.random.Generator,
                y0=None, record: bool = False) -> ViSolveReport:
    if not 0 < cfg.rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if cfg.tau <= 0 or cfg.m0 <= 0:
        raise ValueError("tau and M0 must be positive")
    _check_step(cfg.alpha, vi.mu / (2 * vi.lip ** 2), 2 * vi.mu / vi.lip ** 2, "VR-SA")
    if vi.noise_bound is not None and cfg.m0 < 2 * vi.noise_bound ** 2 / vi.lip ** 2:
        warnings.warn("M0 below 2 nu_y^2 / L_F^2; geometric decay is not guaranteed", stacklevel=2)
    if vi.sample is None:
        raise ValueError("VR-SA needs a sampled map")
    Y, y = _start(vi, x_hat, None, y0)
    t_k = log_steps(cfg.tau, k)
    rep = ViSolveReport(y=y, trajectory=[y.copy()] if record else None)
    for t in range(t_k):
        M = batch_size(cfg.m0, cfg.rho, t)
        ws = vi.sample(rng, M)
        y = Y.project(y - cfg.alpha * vi.mean_map(x_hat, y, ws))
        rep.samples += M
        rep.projections += 1
        if record:
            rep.trajectory.append(y.copy())
    rep.steps = t_k
    rep.y = y
    return rep


def sa_solve_diminishing(vi: ViProblem, x_hat, k: int, cfg: DiminishingConfig, rng: np.random.Generator,
                         y0=None, record: bool = False) -> ViSolveReport:
    if not cfg.alpha0 > 1 / (2 * vi.mu):
        raise ValueError(f"initial stepsize must exceed 1/(2 mu_F) = {1 / (2 * vi.mu):.4g}")
    if cfg.gamma_shift <= 0:
        raise ValueError("Gamma must be positive")
    if cfg.gamma_shift < 1:
        warnings.warn("Gamma < 1 makes the second SA step very long", stacklevel=2)
    if vi.sample is None:
        raise ValueError("SA needs a sampled map")
    alpha = cfg.alpha0 if cfg.alpha is None else cfg.alpha
    Y, y = _start(vi, x_hat, None, y0)
    t_k = k + 1
    rep = ViSolveReport(y=y, trajectory=[y.copy()] if record else None)
    step = cfg.alpha0
    for t in range(t_k):
        ws = vi.sample(rng, 1)
        y = Y.project(y - step * vi.mean_map(x_hat, y, ws))
        step = alpha / (t + cfg.gamma_shift)
        rep.samples += 1
        rep.projections += 1
        if record:
            rep.trajectory.append(y.copy())
    rep.steps = t_k
    rep.y = y
    return rep


def deterministic_projection_solve(vi: ViProblem, x_hat, omega, k: int, cfg: ProjectionConfig,
                                   y0=None, record: bool = False) -> ViSolveReport:
    bound = vi.mu / vi.lip ** 2
    if not 0 < cfg.alpha <= bound * (1 + 1e-12):
        raise ValueError(f"stepsize must lie in (0, mu_F/L_F^2 = {bound:.4g}]")
    if cfg.tau <= 0:
        raise ValueError("tau must be positive")
    w = None if omega is None else np.atleast_2d(omega)
    Y, y = _start(vi, x_hat, omega, y0)
    t_k = log_steps(cfg.tau, k)
    rep = ViSolveReport(y=y, trajectory=[y.copy()] if record else None)
    for _ in range(t_k):
        y = Y.project(y - cfg.alpha * vi.mean_map(x_hat, y, w))
        if record:
            rep.trajectory.append(y.copy())
    rep.projections = rep.steps = t_k
    rep.y = y
    return rep


def _check_step(alpha, theory_bound, hard_bound, name):
    if not alpha > 0:
        raise ValueError(f"{name} stepsize must be positive")
    if alpha >= hard_bound:
        raise ValueError(f"{name} stepsize {alpha} >= 2 mu_F/L_F^2 = {hard_bound:.4g}; projection step is not contractive")
    if alpha > theory_bound * (1 + 1e-12):
        warnings.warn(f"{name} stepsize {alpha} exceeds mu_F/(2 L_F^2) = {theory_bound:.4g}", stacklevel=3)


def natural_residual(A, b, set_: ConvexSet, y) -> float:
    return float(np.linalg.norm(y - set_.project(y - (A @ y + b))))


def affine_vi_exact(A, b, set_: ConvexSet, tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """Solve VI(set, y -> A y + b) for A with positive definite symmetric part.

    Boxes use a semismooth Newton (active-set) iteration on the natural map,
    which terminates finitely for these problems; other sets fall back to
    the projection method with step mu/L^2.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    sym = 0.5 * (A + A.T)
    mu = float(np.linalg.eigvalsh(sym).min())
    if mu <= 0:
        raise ValueError("affine map is not strongly monotone (symmetric part not positive definite)")
    scale = 1.0 + np.linalg.norm(b)
    if isinstance(set_, Box):
        y = _box_active_set(A, b, set_, tol * scale)
        if y is not None:
            return y
    L = float(np.linalg.norm(A, 2))
    alpha = mu / L ** 2
    y = set_.anchor()
    res = np.inf
    for _ in range(max_iter):
        y = set_.project(y - alpha * (A @ y + b))
        res = natural_residual(A, b, set_, y)
        if res <= tol * scale:
            return y
    raise NumericalFailure("affine VI projection method did not converge", res)


def _box_active_set(A, b, box: Box, tol, max_iter=200):
    n = A.shape[0]
    lo, hi = box.lower, box.upper
    y = box.anchor()
    seen = set()
    for _ in range(max_iter):
        z = y - (A @ y + b)
        at_lo = z <= lo
        at_hi = z >= hi
        free = ~(at_lo | at_hi)
        key = (at_lo.tobytes(), at_hi.tobytes())
        y_new = np.where(at_lo, lo, np.where(at_hi, hi, 0.0))
        if free.any():
            fixed = ~free
            rhs = -b[free] - A[np.ix_(free, fixed)] @ y_new[fixed]
            y_new[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
        y = y_new
        if natural_residual(A, b, box, y) <= tol:
            return y
        if key in seen:
            return None
        seen.add(key)
    return None


class QpActiveSet:
    """Exact solver for min 1/2 y'Hy + g'y  s.t.  C y <= d, H positive definite,
    by enumerating active sets of size <= dim.  Only g and d may vary, and both
    can be batched, so many small follower QPs are solved at once.

    Each active set S contributes one linear map from (-g, d) to (y, lambda);
    the maps are stacked so a batch is handled by a single tensor product.
    """

    def __init__(self, H, C, tol: float = 1e-9):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.tol = tol
        p = self.H.shape[0]
        m = self.C.shape[0]
        maps = []
        self.cases = []
        for size in range(0, min(p, m) + 1):
            for S in itertools.combinations(range(m), size):
                S = list(S)
                K = np.zeros((p + size, p + size))
                K[:p, :p] = self.H
                K[:p, p:] = self.C[S].T
                K[p:, :p] = self.C[S]
                if abs(np.linalg.det(K)) < 1e-12:
                    continue
                Kinv = np.linalg.inv(K)
                W = np.zeros((p + m, p + m))
                cols = list(range(p)) + [p + j for j in S]
                rows = list(range(p)) + [p + j for j in S]
                W[np.ix_(rows, cols)] = Kinv
                maps.append(W)
                self.cases.append(S)
        self.maps = np.array(maps)

    def solve(self, g, d) -> np.ndarray:
        g = np.atleast_2d(np.asarray(g, dtype=float))
        d = np.atleast_2d(np.asarray(d, dtype=float))
        m_batch = max(g.shape[0], d.shape[0])
        g = np.broadcast_to(g, (m_batch, g.shape[1]))
        d = np.broadcast_to(d, (m_batch, d.shape[1]))
        y, ok = _qp_enumerate(self.maps, self.C, np.ascontiguousarray(g), np.ascontiguousarray(d), self.tol)
        if not ok.all():
            raise NumericalFailure("no KKT point found; QP infeasible?", float((~ok).sum()))
        return y


@numba.njit(cache=True)
def _qp_enumerate(maps, C, g, d, tol):
    # A strictly convex QP has exactly one KKT point, so the first active set
    # passing primal and dual feasibility is the answer.  Neighbouring rows
    # usually share an active set; the scan starts from the last hit.
    n_case, size, _ = maps.shape
    batch, p = g.shape
    m = C.shape[0]
    out = np.empty((batch, p))
    found = np.zeros(batch, dtype=np.bool_)
    rhs = np.empty(size)
    sol = np.empty(size)
    start = 0
    for b in range(batch):
        scale = 0.0
        for i in range(p):
            rhs[i] = -g[b, i]
            scale = max(scale, abs(g[b, i]))
        for j in range(m):
            rhs[p + j] = d[b, j]
            scale = max(scale, abs(d[b, j]))
        eps = tol * (1.0 + scale)
        for step in range(n_case):
            c = (start + step) % n_case
            for i in range(size):
                acc = 0.0
                for j in range(size):
                    acc += maps[c, i, j] * rhs[j]
                sol[i] = acc
            ok = True
            for j in range(m):
                if sol[p + j] < -eps:
                    ok = False
                    break
                row = 0.0
                for i in range(p):
                    row += C[j, i] * sol[i]
                if row > d[b, j] + eps:
                    ok = False
                    break
            if ok:
                for i in range(p):
                    out[b, i] = sol[i]
                found[b] = True
                start = c
                break
    return out, found


def projection_fixed_point(F: Callable[[np.ndarray], np.ndarray], Y: ConvexSet, y0, alpha: float,
                           tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Iterate y <- P_Y(y - alpha F(y)) until the step is below tol; works on batches
    of rows when ``F`` and the projection do."""
    y = np.asarray(y0, dtype=float)
    diff = np.inf
    for _ in range(max_iter):
        y_new = Y.project(y - alpha * F(y))
        diff = float(np.max(np.abs(y_new - y)))
        y = y_new
        if diff <= tol * (1.0 + float(np.max(np.abs(y)))):
            return y
    raise NumericalFailure("projection fixed point iteration did not converge", diff)
