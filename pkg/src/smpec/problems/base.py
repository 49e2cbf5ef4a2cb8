"""Problem container shared by the benchmark zoo.

A :class:`SmpecProblem` bundles the leader set, the sampled upper objective,
an exact batched follower solver and (optionally) a :class:`ViProblem` for
the inexact projection solvers.  Objectives are always in minimization form;
``sense = -1`` marks problems whose published values are maxima.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..geometry import ConvexSet, make_rng
from ..lower_level import (DiminishingConfig, ProjectionConfig, ViProblem, VrSaConfig,
                           deterministic_projection_solve, sa_solve_diminishing, vr_sa_solve)
from ..smoothing import ImplicitValueOracle

VALIDATION_SEED = 90_210
VALIDATION_SIZE = 100_000


@dataclass(frozen=True)
class AnalyticOptimum:
    x_star: np.ndarray
    f_star: float
    provenance: str  # "closed-form", "grid-oracle" or "literature"
    stderr: float = 0.0


@dataclass(frozen=True)
class InexactSettings:
    """Follower step rules used when a driver asks for inexact solves."""

    vr_sa_alpha: Optional[float] = None
    sa_alpha0: Optional[float] = None
    sa_shift: float = 1.0
    projection_alpha: Optional[float] = None
    m0: Optional[float] = None  # overrides the schedule's M0 when set
    common_numbers: bool = True  # reuse one sample stream for all solves of an outer iteration


@dataclass
class SmpecProblem:
    name: str
    X: ConvexSet
    dim_y: int
    upper: Callable  # (xs, ys, ws) -> values, row-batched
    sample_omega: Callable  # (rng, size) -> (size, p)
    exact_lower: Callable  # (xs, ws or None) -> ys
    staging: str = "two"  # "single" or "two"
    vi: Optional[ViProblem] = None
    inexact: InexactSettings = field(default_factory=InexactSettings)
    expected: Optional[Callable] = None  # closed-form E[f(x, y(x[,w]), w)]
    optimum: Optional[AnalyticOptimum] = None
    start: Optional[np.ndarray] = None
    sense: int = 1
    deterministic: bool = False  # sample_omega is a dummy; no randomness anywhere
    info: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    _validation: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.staging not in ("single", "two"):
            raise ValueError("staging must be 'single' or 'two'")

    @property
    def dim_x(self) -> int:
        return self.X.dim

    def x0(self) -> np.ndarray:
        return self.X.anchor() if self.start is None else self.X.project(self.start)

    # ------------------------------------------------------------------ oracles
    def oracle(self, mode: str, rng: np.random.Generator, scheme: str = "convex", sched=None) -> ImplicitValueOracle:
        two = self.staging == "two"
        if mode == "exact":
            return ImplicitValueOracle(self.upper, lambda xs, ws, k: self.exact_lower(xs, ws),
                                       self.sample_omega, two_stage=two, deterministic=self.deterministic)
        if mode != "inexact":
            raise ValueError(f"unknown lower-level mode {mode!r}")
        if self.vi is None:
            raise ValueError(f"problem {self.name} has no VI description for inexact solves")
        oracle = ImplicitValueOracle(self.upper, None, self.sample_omega, two_stage=two,
                                     deterministic=self.deterministic)
        solve_one = self._inexact_solver(scheme, sched)
        crn = self.inexact.common_numbers
        stream = {"k": None, "seed": None}

        def lower(xs, ws, k):
            if crn and stream["k"] != k:
                stream["k"], stream["seed"] = k, int(rng.integers(2 ** 63))
            out = np.empty((xs.shape[0], self.dim_y))
            for i, x in enumerate(xs):
                sub = make_rng(stream["seed"]) if crn else rng
                rep = solve_one(x, None if ws is None else ws[i], k, sub)
                out[i] = rep.y
                oracle.lower_projections += rep.projections
                oracle.lower_samples += rep.samples
            return out

        oracle.lower = lower
        return oracle

    def _inexact_solver(self, scheme, sched):
        vi, st = self.vi, self.inexact
        tau = 5.0 if sched is None else sched.tau
        if self.staging == "two":
            alpha = st.projection_alpha or vi.mu / vi.lip ** 2
            cfg = ProjectionConfig(alpha, tau)
            return lambda x, w, k, rng: deterministic_projection_solve(vi, x, w, k, cfg)
        if scheme == "nonconvex":
            alpha0 = st.sa_alpha0 or 1.0 / vi.mu
            cfg = DiminishingConfig(alpha0, gamma_shift=st.sa_shift)
            return lambda x, w, k, rng: sa_solve_diminishing(vi, x, k, cfg, rng)
        alpha = st.vr_sa_alpha or vi.mu / (2 * vi.lip ** 2)
        rho = 1 / 1.5 if sched is None else sched.rho
        m0 = st.m0 if st.m0 is not None else (1.0 if sched is None else sched.m0)
        cfg = VrSaConfig(alpha, rho, m0, tau)
        return lambda x, w, k, rng: vr_sa_solve(vi, x, k, cfg, rng)

    # --------------------------------------------------------------- evaluation
    def validation_set(self) -> np.ndarray:
        if self._validation is None:
            self._validation = np.atleast_2d(self.sample_omega(make_rng(VALIDATION_SEED), VALIDATION_SIZE))
        return self._validation

    def sample_average(self, x, ws) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ws = np.atleast_2d(ws)
        xs = np.broadcast_to(x, (ws.shape[0], x.shape[0]))
        if self.staging == "two":
            ys = self.exact_lower(xs, ws)
        else:
            ys = np.broadcast_to(self.exact_lower(x[None], None), (ws.shape[0], self.dim_y))
        return float(np.mean(self.upper(xs, ys, ws)))

    def objective(self, x) -> float:
        """E[f] at x in minimization form: closed form when known, else the
        mean over the fixed validation sample."""
        if self.expected is not None:
            return float(self.expected(np.atleast_1d(np.asarray(x, dtype=float))))
        return self.sample_average(x, self.validation_set())

    def reported(self, value: float) -> float:
        """Convert a minimization-form value back to the published sign."""
        return self.sense * value

    def gap(self, x) -> float:
        if self.optimum is None:
            raise ValueError(f"problem {self.name} has no reference optimum")
        return self.objective(x) - self.optimum.f_star


def grid_oracle(problem: SmpecProblem, resolution: int = 41, mc_samples: int = 1000, refine: int = 4,
                seed: int = VALIDATION_SEED, max_nodes: int = 2_000_000) -> AnalyticOptimum:
    """Brute-force optimum for dim_x <= 2: evaluate a grid over the bounding box
    of X with exact follower solves and a fixed sample, then zoom in around the
    best node ``refine`` times."""
    if problem.dim_x > 2:
        raise ValueError("grid oracle supports at most two leader variables")
    box = problem.X.bounding_box()
    if not (np.all(np.isfinite(box.lower)) and np.all(np.isfinite(box.upper))):
        raise ValueError("grid oracle needs a bounded leader set")
    ws = np.atleast_2d(problem.sample_omega(make_rng(seed), mc_samples))
    lo, hi = box.lower.copy(), box.upper.copy()
    used = 0
    best_x, best_f = None, np.inf
    for _ in range(refine + 1):
        axes = [np.linspace(l, h, resolution) for l, h in zip(lo, hi)]
        nodes = np.array(np.meshgrid(*axes, indexing="ij")).reshape(problem.dim_x, -1).T
        used += nodes.shape[0] * mc_samples
        if used > max_nodes * mc_samples:
            raise RuntimeError("grid oracle budget exceeded")
        for x in nodes:
            if not problem.X.contains(x, tol=1e-12):
                continue
            f = problem.sample_average(x, ws)
            if f < best_f - 1e-15:
                best_x, best_f = x.copy(), f
        if best_x is None:
            raise RuntimeError("no feasible grid node")
        cell = (hi - lo) / (resolution - 1)
        lo = np.maximum(box.lower, best_x - 2 * cell)
        hi = np.minimum(box.upper, best_x + 2 * cell)
    xs = np.broadcast_to(best_x, (ws.shape[0], problem.dim_x))
    if problem.staging == "two":
        vals = problem.upper(xs, problem.exact_lower(xs, ws), ws)
    else:
        y = problem.exact_lower(best_x[None], None)
        vals = problem.upper(xs, np.broadcast_to(y, (ws.shape[0], problem.dim_y)), ws)
    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return AnalyticOptimum(best_x, float(best_f), "grid-oracle", se)
