"""Convex sets, Euclidean projections and uniform sphere/ball sampling.

Every set is an immutable object exposing ``project``, ``contains`` and
``dim``.  Projections accept a single point of shape ``(n,)`` or a batch of
shape ``(m, n)`` where the variant admits a closed form; the iterative
variants (``Polyhedron``, ``Intersection``) work point by point.

Randomness comes from :func:`make_rng`, which wraps numpy's counter-based
Philox bit generator so a seed maps to the same stream on every platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 100_000


class ProjectionError(RuntimeError):
    """An iterative projection hit its sweep cap before meeting tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def make_rng(seed: int) -> np.random.Generator:
    """Seeded stream used throughout the toolkit (Philox-4x64, counter based)."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _as_vector(x, name="point") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def _check_dim(point: np.ndarray, dim: int):
    if point.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: point has {point.shape[-1]} entries, set has {dim}")


class ConvexSet:
    """Base class; subclasses implement ``_project`` on a checked array."""

    dim: int

    def project(self, point) -> np.ndarray:
        p = _as_vector(point)
        _check_dim(p, self.dim)
        return self._project(p)

    def _project(self, p: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def contains(self, point, tol: float = 1e-9) -> bool:
        p = _as_vector(point)
        return bool(np.linalg.norm(self.project(p) - p) <= tol * (1.0 + np.linalg.norm(p)))

    def bounding_box(self) -> "Box":
        """A box containing the set (possibly with infinite sides)."""
        return Box(np.full(self.dim, -np.inf), np.full(self.dim, np.inf))

    def anchor(self) -> np.ndarray:
        """Deterministic feasible starting point: center of the bounding box,
        falling back to the finite side (or 0) on unbounded coordinates."""
        box = self.bounding_box()
        lo, hi = box.lower, box.upper
        c = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi),
                     np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0)))
        return self.project(c)


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo.copy())
        object.__setattr__(self, "upper", hi.copy())

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def _project(self, p):
        # np.clip with infinite bounds leaves that side untouched
        return np.clip(p, self.lower, self.upper)

    def bounding_box(self):
        return self

    @classmethod
    def nonnegative(cls, n: int) -> "Box":
        return cls(np.zeros(n), np.full(n, np.inf))


def Interval(lower: float, upper: float) -> Box:
    """One-dimensional box, the usual feasible set of a scalar leader."""
    return Box(np.array([lower], dtype=float), np.array([upper], dtype=float))


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))

    @property
    def dim(self):
        return self.center.shape[0]

    def _project(self, p):
        d = p - self.center
        norm = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(norm > self.radius, self.radius / np.maximum(norm, 1e-300), 1.0)
        return self.center + d * scale

    def bounding_box(self):
        return Box(self.center - self.radius, self.center + self.radius)


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """{y : normal . y <= offset}."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.normal, dtype=float))
        if not np.any(a):
            raise ValueError("halfspace normal must be nonzero")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def dim(self):
        return self.normal.shape[0]

    def _project(self, p):
        a = self.normal
        viol = p @ a - self.offset
        step = np.maximum(viol, 0.0) / (a @ a)
        return p - np.multiply.outer(step, a) if p.ndim > 1 else p - step * a


@dataclass(frozen=True, eq=False)
class QuadraticSublevel(ConvexSet):
    """{y : sum_i q_i y_i^2 + c . y <= bound} with q >= 0 (diagonal convex quadratic).

    Projection solves the one-dimensional KKT equation in the multiplier
    by bracketing root finding.
    """

    quad: np.ndarray
    linear: np.ndarray
    bound: float

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.quad, dtype=float))
        c = np.atleast_1d(np.asarray(self.linear, dtype=float))
        if np.any(q < 0):
            raise ValueError("quadratic coefficients must be nonnegative")
        object.__setattr__(self, "quad", q)
        object.__setattr__(self, "linear", c)

    @property
    def dim(self):
        return self.quad.shape[0]

    def value(self, y):
        return np.sum(self.quad * y * y, axis=-1) + y @ self.linear - self.bound

    def _point(self, p, lam):
        return (p - lam * self.linear) / (1.0 + 2.0 * lam * self.quad)

    def _project(self, p):
        if p.ndim > 1:
            return np.array([self._project(row) for row in p])
        if self.value(p) <= 0:
            return p.copy()
        lam, ok = _sublevel_multiplier(self.quad, self.linear, float(self.bound), p)
        if not ok:
            raise ProjectionError("quadratic sublevel set appears empty", float(self.value(self._point(p, lam))))
        return self._point(p, lam)


@numba.njit(cache=True)
def _sublevel_value(q, c, bound, p, lam):
    v = -bound
    for i in range(q.shape[0]):
        z = (p[i] - lam * c[i]) / (1.0 + 2.0 * lam * q[i])
        v += q[i] * z * z + c[i] * z
    return v


@numba.njit(cache=True)
def _sublevel_multiplier(q, c, bound, p):
    """Root of the decreasing function lam -> value(point(lam)) on [0, inf) by
    bracketing and bisection polished with secant steps."""
    lo, hi = 0.0, 1.0
    while _sublevel_value(q, c, bound, p, hi) > 0:
        hi *= 2.0
        if hi > 1e300:
            return hi, False
    f_lo = _sublevel_value(q, c, bound, p, lo)
    f_hi = _sublevel_value(q, c, bound, p, hi)
    for _ in range(200):
        # secant guess, falling back to bisection when it leaves the bracket
        mid = hi - f_hi * (hi - lo) / (f_hi - f_lo) if f_hi != f_lo else 0.5 * (lo + hi)
        if not (lo < mid < hi) or (hi - lo) > 0.5 * hi:
            mid = 0.5 * (lo + hi)
        f_mid = _sublevel_value(q, c, bound, p, mid)
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if hi - lo <= 1e-15 * (1.0 + hi) or f_mid == 0.0:
            break
    return hi, True


@dataclass(frozen=True, eq=False)
class Intersection(ConvexSet):
    """Intersection of simple sets, projected by Dykstra's alternating projections."""

    sets: tuple
    tol: float = DYKSTRA_TOL
    max_sweeps: int = DYKSTRA_MAX_SWEEPS

    def __post_init__(self):
        sets = tuple(self.sets)
        if not sets:
            raise ValueError("intersection needs at least one set")
        dims = {s.dim for s in sets}
        if len(dims) != 1:
            raise ValueError("all sets in an intersection must share a dimension")
        object.__setattr__(self, "sets", sets)

    @property
    def dim(self):
        return self.sets[0].dim

    def bounding_box(self):
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for s in self.sets:
            b = s.bounding_box()
            lo = np.maximum(lo, b.lower)
            hi = np.minimum(hi, b.upper)
        return Box(lo, np.maximum(lo, hi))

    def _encoded(self):
        # (kind, first vector, second vector, scalar) per member for the compiled sweep
        enc = getattr(self, "_enc", None)
        if enc is None:
            parts = [_encode(s) for s in self.sets]
            enc = False if any(e is None for e in parts) else (
                np.array([e[0] for e in parts], dtype=np.int64),
                np.array([e[1] for e in parts]), np.array([e[2] for e in parts]),
                np.array([e[3] for e in parts], dtype=float))
            object.__setattr__(self, "_enc", enc)
        return enc

    def _project(self, p):
        if p.ndim > 1:
            return np.array([self._project(row) for row in p])
        if len(self.sets) == 1:
            return self.sets[0]._project(p)
        enc = self._encoded()
        if enc is not False and _boxed_sublevel(enc[0]):
            return _project_boxed_sublevel(enc, p)
        if enc is not False:
            x, change, ok = _dykstra(enc[0], enc[1], enc[2], enc[3], np.ascontiguousarray(p, dtype=float),
                                     self.tol, self.max_sweeps)
            if not ok:
                raise ProjectionError("Dykstra projection did not converge", float(change))
            return x
        x = p.copy()
        incr = [np.zeros_like(p) for _ in self.sets]
        change = np.inf
        for _ in range(self.max_sweeps):
            x_start = x
            moved = 0.0
            for i, s in enumerate(self.sets):
                y = s._project(x + incr[i])
                new_incr = x + incr[i] - y
                moved += float(np.sum((new_incr - incr[i]) ** 2))
                incr[i] = new_incr
                x = y
            change = np.sqrt(np.sum((x - x_start) ** 2) + moved)
            if change <= self.tol * (1.0 + np.linalg.norm(x)):
                return x
        raise ProjectionError("Dykstra projection did not converge", float(change))


_BOX, _HALFSPACE, _BALL, _SUBLEVEL = 0, 1, 2, 3


def _encode(s):
    if isinstance(s, Box):
        return _BOX, s.lower, s.upper, 0.0
    if isinstance(s, Halfspace):
        return _HALFSPACE, s.normal, np.zeros_like(s.normal), s.offset
    if isinstance(s, Ball):
        return _BALL, s.center, np.zeros_like(s.center), s.radius
    if isinstance(s, QuadraticSublevel):
        return _SUBLEVEL, s.quad, s.linear, float(s.bound)
    return None


@numba.njit(cache=True)
def _project_simple(kind, u, w, scal, p):
    n = p.shape[0]
    out = p.copy()
    if kind == 0:
        for i in range(n):
            out[i] = min(max(p[i], u[i]), w[i])
    elif kind == 1:
        viol = -scal
        nn = 0.0
        for i in range(n):
            viol += u[i] * p[i]
            nn += u[i] * u[i]
        if viol > 0:
            for i in range(n):
                out[i] = p[i] - viol / nn * u[i]
    elif kind == 2:
        r = 0.0
        for i in range(n):
            r += (p[i] - u[i]) ** 2
        r = np.sqrt(r)
        if r > scal:
            for i in range(n):
                out[i] = u[i] + (p[i] - u[i]) * scal / r
    else:
        if _sublevel_value(u, w, scal, p, 0.0) > 0:
            lam, _ = _sublevel_multiplier(u, w, scal, p)
            for i in range(n):
                out[i] = (p[i] - lam * w[i]) / (1.0 + 2.0 * lam * u[i])
    return out


def _boxed_sublevel(kinds) -> bool:
    return int(np.sum(kinds == _SUBLEVEL)) == 1 and bool(np.all((kinds == _BOX) | (kinds == _SUBLEVEL)))


def _project_boxed_sublevel(enc, p):
    """Exact projection onto (boxes) x (one diagonal quadratic sublevel set).

    The Lagrangian is separable, so each coordinate is the clipped stationary
    point for the multiplier, and the constraint value is nonincreasing in it.
    """
    kinds, first, second, scal = enc
    boxes = kinds == _BOX
    lo = np.max(first[boxes], axis=0)
    hi = np.min(second[boxes], axis=0)
    if np.any(lo > hi):
        raise ProjectionError("box constraints are inconsistent", float(np.max(lo - hi)))
    j = int(np.flatnonzero(kinds == _SUBLEVEL)[0])
    lam, ok = _boxed_multiplier(first[j], second[j], float(scal[j]), lo, hi, p)
    if not ok:
        raise ProjectionError("box and quadratic sublevel set do not intersect", float(lam))
    return _boxed_point(first[j], second[j], lo, hi, p, lam)


@numba.njit(cache=True)
def _boxed_point(q, c, lo, hi, p, lam):
    out = np.empty_like(p)
    for i in range(p.shape[0]):
        out[i] = min(max((p[i] - lam * c[i]) / (1.0 + 2.0 * lam * q[i]), lo[i]), hi[i])
    return out


@numba.njit(cache=True)
def _boxed_value(q, c, bound, lo, hi, p, lam):
    y = _boxed_point(q, c, lo, hi, p, lam)
    v = -bound
    for i in range(p.shape[0]):
        v += q[i] * y[i] * y[i] + c[i] * y[i]
    return v


@numba.njit(cache=True)
def _boxed_multiplier(q, c, bound, lo, hi, p):
    f0 = _boxed_value(q, c, bound, lo, hi, p, 0.0)
    if f0 <= 0.0:
        return 0.0, True
    lo_l, hi_l = 0.0, 1.0
    while _boxed_value(q, c, bound, lo, hi, p, hi_l) > 0.0:
        lo_l = hi_l
        hi_l *= 2.0
        if hi_l > 1e300:
            return _boxed_value(q, c, bound, lo, hi, p, hi_l), False
    for _ in range(400):
        mid = 0.5 * (lo_l + hi_l)
        if _boxed_value(q, c, bound, lo, hi, p, mid) > 0.0:
            lo_l = mid
        else:
            hi_l = mid
        if hi_l - lo_l <= 1e-15 * (1.0 + hi_l):
            break
    return hi_l, True


@numba.njit(cache=True)
def _dykstra(kinds, first, second, scal, p, tol, max_sweeps):
    m = kinds.shape[0]
    n = p.shape[0]
    x = p.copy()
    incr = np.zeros((m, n))
    change = np.inf
    for _ in range(max_sweeps):
        x_start = x.copy()
        moved = 0.0
        for i in range(m):
            z = x + incr[i]
            y = _project_simple(kinds[i], first[i], second[i], scal[i], z)
            new_incr = z - y
            moved += np.sum((new_incr - incr[i]) ** 2)
            incr[i] = new_incr
            x = y
        # the iterate can repeat exactly while the increments still move
        change = np.sqrt(np.sum((x - x_start) ** 2) + moved)
        if change <= tol * (1.0 + np.sqrt(np.sum(x * x))):
            return x, change, True
    return x, change, False


def Polyhedron(halfspaces: Sequence[Halfspace], box: Box | None = None, **kw) -> Intersection:
    """{y : A y <= b} optionally intersected with a box, projected by Dykstra."""
    sets = list(halfspaces)
    if box is not None:
        sets.append(box)
    return Intersection(tuple(sets), **kw)


def polyhedron_from_matrix(A, b, box: Box | None = None, **kw) -> Intersection:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return Polyhedron([Halfspace(a, bi) for a, bi in zip(A, b)], box, **kw)


def project(set_: ConvexSet, point) -> np.ndarray:
    return set_.project(point)


@dataclass
class SphereSampler:
    """Uniform directions in R^n from a seeded stream.

    Directions are normalized standard Gaussians; ball points scale a sphere
    point by U^(1/n).
    """

    n: int
    rng: np.random.Generator = field(default_factory=lambda: make_rng(0))

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")


def _unit_directions(rng: np.random.Generator, n: int, size) -> np.ndarray:
    shape = (n,) if size is None else (size, n)
    g = rng.standard_normal(shape)
    norm = np.sqrt(np.einsum("...i,...i->...", g, g))[..., None]
    # a zero Gaussian draw has probability 0; redraw defensively
    while np.any(norm == 0):
        bad = (norm == 0).reshape(-1)
        g.reshape(-1, n)[bad] = rng.standard_normal((int(bad.sum()), n))
        norm = np.sqrt(np.einsum("...i,...i->...", g, g))[..., None]
    return g / norm


def sample_sphere(sampler: SphereSampler, radius: float, size: int | None = None) -> np.ndarray:
    if not radius > 0:
        raise ValueError("sphere radius must be positive")
    return radius * _unit_directions(sampler.rng, sampler.n, size)


def sample_ball(sampler: SphereSampler, radius: float, size: int | None = None) -> np.ndarray:
    if not radius > 0:
        raise ValueError("ball radius must be positive")
    u = _unit_directions(sampler.rng, sampler.n, size)
    r = sampler.rng.random(() if size is None else (size, 1)) ** (1.0 / sampler.n)
    return radius * r * u
