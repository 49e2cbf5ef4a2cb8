"""Spherical smoothing and zeroth-order gradient estimates of implicit objectives.

For a function h and radius eta the smoothed function is the ball average
h_eta(x) = E[h(x + eta u)], u uniform in the unit ball.  Its gradient equals
(n/eta) E[h(x+v) v/|v|] for v uniform on the sphere of radius eta, which gives
the two-point estimate

    g(x, v, w) = (n/eta) (f(x+v, y(x+v), w) - f(x, y(x), w)) v/|v|

with the same sample w in both evaluations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import SphereSampler, sample_ball, sample_sphere


class LowerLevelError(RuntimeError):
    """A lower-level solve failed while evaluating the implicit objective."""


@dataclass
class ImplicitValueOracle:
    """Evaluates the implicit upper objective f(x, y(x[, w]), w) in batches.

    ``upper(xs, ys, ws)`` and ``lower(xs, ws, k)`` work on row-stacked
    arrays.  In single-stage mode ``lower`` is called with ``ws=None`` since
    the follower response does not depend on the upper-level sample.
    ``lower_solves`` counts every follower solution produced; inexact solvers
    add their projection and sample counts to the other two counters.
    """

    upper: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lower: Callable[[np.ndarray, Optional[np.ndarray], int], np.ndarray]
    sample_omega: Callable[[np.random.Generator, int], np.ndarray]
    two_stage: bool
    inexactness: float = 0.0
    lower_solves: int = 0
    lower_projections: int = 0
    lower_samples: int = 0
    deterministic: bool = False  # no randomness at all: one base solve serves every row

    def solve(self, xs: np.ndarray, ws: np.ndarray | None, k: int = 0, where: str = "") -> np.ndarray:
        xs = np.atleast_2d(xs)
        try:
            ys = self.lower(xs, ws if self.two_stage else None, k)
        except Exception as exc:  # re-raised with the evaluation site attached
            raise LowerLevelError(f"lower-level solve failed at {where or 'evaluation point'}: {exc}") from exc
        self.lower_solves += xs.shape[0]
        return ys

    def __call__(self, xs, ws, k: int = 0, where: str = "") -> np.ndarray:
        xs = np.atleast_2d(xs)
        ws = np.atleast_2d(ws)
        return self.upper(xs, self.solve(xs, ws, k, where), ws)


@dataclass(frozen=True)
class ZoGradientEstimator:
    n: int
    eta: float
    mode: str = "exact"
    batch: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("smoothing radius must be positive")
        if self.batch < 1:
            raise ValueError("batch size must be at least 1")
        if self.mode not in ("exact", "inexact"):
            raise ValueError(f"unknown mode {self.mode!r}")


def zo_gradient_sample(est: ZoGradientEstimator, oracle: ImplicitValueOracle, x, v, omega, k: int = 0) -> np.ndarray:
    """Single two-point estimate; exactly two implicit evaluations with one shared sample."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.atleast_2d(omega)
    base = oracle(x[None], w, k, where="base point x")[0]
    pert = oracle((x + v)[None], w, k, where="perturbed point x+v")[0]
    return (est.n / est.eta) * (pert - base) * v / np.linalg.norm(v)


def _differences(est, oracle, x, rng, k, shared_base):
    x = np.asarray(x, dtype=float)
    N = est.batch
    V = sample_sphere(SphereSampler(est.n, rng), est.eta, size=N)
    W = np.atleast_2d(oracle.sample_omega(rng, N))
    if oracle.deterministic:
        base = oracle(x[None], W[:1], k, where="base point x")[0]
    elif shared_base and not oracle.two_stage:
        y0 = oracle.solve(x[None], None, k, where="base point x")
        base = oracle.upper(np.broadcast_to(x, (N, est.n)), np.broadcast_to(y0, (N, y0.shape[1])), W)
    else:
        base = oracle(np.broadcast_to(x, (N, est.n)), W, k, where="base point x")
    pert = oracle(x + V, W, k, where="perturbed points x+v")
    return pert - base, V


def zo_gradient_samples(est: ZoGradientEstimator, oracle: ImplicitValueOracle, x, rng: np.random.Generator,
                        k: int = 0, shared_base: bool = False) -> np.ndarray:
    """``est.batch`` independent two-point estimates stacked as rows.

    Directions are drawn before samples.  With ``shared_base`` (single-stage
    mini-batch scheme) the follower response at x is solved once and reused
    for every base evaluation; otherwise each row solves its own.
    """
    diff, V = _differences(est, oracle, x, rng, k, shared_base)
    # |v| = eta for every row
    return (est.n / est.eta ** 2) * diff[:, None] * V


def zo_gradient_minibatch(est: ZoGradientEstimator, oracle: ImplicitValueOracle, x, rng: np.random.Generator,
                          k: int = 0, shared_base: bool = False) -> np.ndarray:
    diff, V = _differences(est, oracle, x, rng, k, shared_base)
    return (est.n / est.eta ** 2) * (diff @ V) / est.batch


def mean_and_stderr(samples: np.ndarray):
    samples = np.asarray(samples, dtype=float)
    m = samples.shape[0]
    mean = samples.mean(axis=0)
    if m < 2:
        return mean, np.full_like(mean, np.inf)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(m)


def smoothed_value_mc(h: Callable, x, eta: float, M: int, rng: np.random.Generator, vectorized: bool = True):
    """Monte Carlo estimate of h_eta(x) and its standard error.

    ``h`` maps an (M, n) batch to M values when ``vectorized``; otherwise it
    is called on one point at a time.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    U = sample_ball(SphereSampler(x.shape[0], rng), 1.0, size=M)
    pts = x + eta * U
    vals = np.asarray(h(pts) if vectorized else [h(p) for p in pts], dtype=float).reshape(M)
    mean, se = mean_and_stderr(vals)
    if M < 2 or np.all(vals == vals[0]):
        se = 0.0 if np.all(vals == vals[0]) else se
    return float(mean), float(se)
