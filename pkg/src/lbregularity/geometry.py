"""Backward-characteristic geometry in bounded convex domains.

All ray routines are vectorized: points and velocities broadcast over leading
axes with the coordinate on the last axis.  The backward trajectory from x
with velocity zeta is x - t*zeta, t >= 0; it leaves the domain at the exit
point p(x, zeta) after the exit time tau(x, zeta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import DomainError, NoTrajectoryError
from .reports import CheckReport

GRAZING_TOL = 1e-6


@dataclass(frozen=True)
class BoundaryPoint:
    point: np.ndarray
    normal: np.ndarray


class ConvexDomain:
    """Bounded convex body described by a level function (negative inside)."""

    center: np.ndarray

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def bounding_box(self):
        raise NotImplementedError

    def level(self, x):
        raise NotImplementedError

    def normal(self, X):
        raise NotImplementedError

    def _exit_time(self, x, zeta):
        """Exit time without validation; points on or marginally outside give ~0."""
        raise NotImplementedError

    def _distance(self, x):
        raise NotImplementedError

    def contains(self, x, margin: float = 0.0):
        return self.level(x) < -margin

    def boundary_residual(self, X):
        """Distance-like residual of a point from the boundary (length units)."""
        raise NotImplementedError

    def sample_interior(self, rng: np.random.Generator, n: int, min_distance: float = 0.0):
        lo, hi = self.bounding_box
        out = np.empty((0, 3))
        while len(out) < n:
            cand = rng.uniform(lo, hi, size=(max(2 * (n - len(out)), 64), 3))
            keep = self.contains(cand)
            cand = cand[keep]
            if min_distance > 0 and len(cand):
                cand = cand[self._distance(cand) >= min_distance]
            out = np.vstack([out, cand])
        return out[:n]

    def forward_exit(self, x, direction):
        """Point where x + t*direction (t >= 0) leaves the domain."""
        d = np.asarray(direction, dtype=float)
        t = self._exit_time(x, -d)
        return np.asarray(x, dtype=float) + t[..., None] * d


@dataclass(frozen=True, eq=False)
class Ball(ConvexDomain):
    center: np.ndarray = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise DomainError("radius must be positive")

    @property
    def diameter(self):
        return 2.0 * self.radius

    @property
    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def level(self, x):
        return np.linalg.norm(np.asarray(x, dtype=float) - self.center, axis=-1) - self.radius

    boundary_residual = level

    def normal(self, X):
        v = np.asarray(X, dtype=float) - self.center
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def _exit_time(self, x, zeta):
        return _unit_ball_exit((np.asarray(x, dtype=float) - self.center) / self.radius,
                               np.asarray(zeta, dtype=float) / self.radius)

    def _distance(self, x):
        return self.radius - np.linalg.norm(np.asarray(x, dtype=float) - self.center, axis=-1)


def _unit_ball_exit(x, z):
    """Positive root t of |x - t z| = 1, computed without cancellation."""
    b = np.sum(x * z, axis=-1)
    zz = np.sum(z * z, axis=-1)
    c = 1.0 - np.sum(x * x, axis=-1)
    disc = np.sqrt(np.maximum(b * b + zz * c, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(b >= 0, (b + disc) / zz, c / (disc - b))
    return np.maximum(t, 0.0)


@dataclass(frozen=True, eq=False)
class Ellipsoid(ConvexDomain):
    center: np.ndarray = (0.0, 0.0, 0.0)
    semi_axes: np.ndarray = (2.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "semi_axes", np.asarray(self.semi_axes, dtype=float))
        if np.any(self.semi_axes <= 0) or self.semi_axes.shape != (3,):
            raise DomainError("semi_axes must be three positive numbers")

    @property
    def diameter(self):
        return 2.0 * float(self.semi_axes.max())

    @property
    def bounding_box(self):
        return self.center - self.semi_axes, self.center + self.semi_axes

    def level(self, x):
        return np.linalg.norm((np.asarray(x, dtype=float) - self.center) / self.semi_axes, axis=-1) - 1.0

    def boundary_residual(self, X):
        return self.level(X) * float(self.semi_axes.min())

    def normal(self, X):
        g = (np.asarray(X, dtype=float) - self.center) / self.semi_axes**2
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def _exit_time(self, x, zeta):
        a = self.semi_axes
        return _unit_ball_exit((np.asarray(x, dtype=float) - self.center) / a, np.asarray(zeta, dtype=float) / a)

    def _distance(self, x):
        """Nearest-point distance via the Lagrange multiplier t of X = x a^2 / (a^2 + t)."""
        y = np.atleast_2d(np.asarray(x, dtype=float) - self.center)
        a2 = self.semi_axes**2
        amin2 = a2.min()
        lo = np.full(len(y), -amin2)
        hi = np.zeros(len(y))

        def F(t):
            return np.sum(y**2 * a2 / (a2 + t[:, None]) ** 2, axis=1) - 1.0

        minor = np.isclose(a2, amin2, rtol=1e-12)
        on_minor = np.sum(y[:, minor] ** 2, axis=1) > 0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                Fm = F(mid)
            up = Fm > 0
            lo = np.where(up, mid, lo)
            hi = np.where(up, hi, mid)
        t = 0.5 * (lo + hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            X = y * a2 / (a2 + t[:, None])
        # points on the minor-axis plane(s): the multiplier sits at -amin^2
        deg = ~on_minor
        if np.any(deg):
            Xd = np.where(minor, 0.0, y[deg] * a2 / (a2 - amin2 + np.where(minor, 1.0, 0.0)))
            rest = 1.0 - np.sum(np.where(minor, 0.0, Xd**2 / a2), axis=1)
            first = int(np.argmax(minor))
            good = rest >= 0
            Xd[good, first] = np.sqrt(amin2 * rest[good])
            dist_d = np.linalg.norm(y[deg] - Xd, axis=1)
            # if the degenerate candidate is invalid fall back to the bisection value
            dist_b = np.linalg.norm(y[deg] - X[deg], axis=1)
            X_dist = np.where(good, dist_d, dist_b)
            out = np.linalg.norm(y - X, axis=1)
            out[deg] = X_dist
            return out.reshape(np.shape(x)[:-1])
        return np.linalg.norm(y - X, axis=1).reshape(np.shape(x)[:-1])


@dataclass(frozen=True, eq=False)
class LevelSetDomain(ConvexDomain):
    """Generic convex body from a convex level function and its gradient.

    Exit times use bisection along the ray to 1e-12 of the diameter; distances
    minimize the ray length over directions.
    """

    level_fn: Callable = None
    grad_fn: Callable = None
    center: np.ndarray = (0.0, 0.0, 0.0)
    bound_radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    @cached_property
    def _diameter(self):
        rng = np.random.default_rng(0)
        d = rng.normal(size=(2000, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = self.forward_exit(np.broadcast_to(self.center, d.shape), d)
        return float(max(np.linalg.norm(pts[i] - pts, axis=1).max() for i in range(0, 2000, 20)))

    @property
    def diameter(self):
        return self._diameter

    @property
    def bounding_box(self):
        return self.center - self.bound_radius, self.center + self.bound_radius

    def level(self, x):
        return self.level_fn(np.asarray(x, dtype=float))

    boundary_residual = level

    def normal(self, X):
        g = self.grad_fn(np.asarray(X, dtype=float))
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def _exit_time(self, x, zeta):
        x = np.asarray(x, dtype=float)
        z = np.asarray(zeta, dtype=float)
        x, z = np.broadcast_arrays(x, z)
        speed = np.linalg.norm(z, axis=-1)
        hi = (np.linalg.norm(x - self.center, axis=-1) + self.bound_radius) / speed
        lo = np.zeros_like(hi)
        tol = 1e-12 * 2.0 * self.bound_radius
        while np.any((hi - lo) * speed > tol):
            mid = 0.5 * (lo + hi)
            inside = self.level_fn(x - mid[..., None] * z) < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return 0.5 * (lo + hi)

    def _distance(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(pts))
        starts = [(t, p) for t in (0.3, 1.2, 2.0, 2.8) for p in (0.0, 1.6, 3.2, 4.8)]
        for i, p0 in enumerate(pts):
            def ray(ang, p0=p0):
                th, ph = ang
                d = np.array([math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)])
                return float(self._exit_time(p0, d))
            best = min(optimize.minimize(ray, s, method="Nelder-Mead",
                                         options={"xatol": 1e-10, "fatol": 1e-13}).fun for s in starts)
            out[i] = best
        return out.reshape(np.shape(x)[:-1])


def _validate(domain, x, zeta):
    x = np.asarray(x, dtype=float)
    z = np.asarray(zeta, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise DomainError("non-finite point or velocity")
    if np.any(np.linalg.norm(z, axis=-1) == 0):
        raise NoTrajectoryError("zero velocity has no backward trajectory")
    if np.any(~domain.contains(x)):
        raise DomainError("point is not interior")
    return x, z


def exit_time(domain: ConvexDomain, x, zeta):
    """Backward exit time tau(x, zeta) > 0."""
    x, z = _validate(domain, x, zeta)
    t = domain._exit_time(x, z)
    return float(t) if np.ndim(t) == 0 else t


def exit_point(domain: ConvexDomain, x, zeta) -> BoundaryPoint:
    """Backward exit point p(x, zeta) = x - tau zeta with its outward normal."""
    x, z = _validate(domain, x, zeta)
    t = np.asarray(domain._exit_time(x, z))
    P = x - t[..., None] * z
    return BoundaryPoint(P, domain.normal(P))


def distance_to_boundary(domain: ConvexDomain, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite point")
    if np.any(~domain.contains(x)):
        raise DomainError("point is not interior")
    d = domain._distance(x)
    return float(d) if np.ndim(d) == 0 else d


def _angle(u, v):
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.arctan2(cross, dot)


def parallax_angle(x0, x1, y):
    """Angle x0-y-x1 in [0, pi]."""
    x0, x1, y = (np.asarray(v, dtype=float) for v in (x0, x1, y))
    u, v = x0 - y, x1 - y
    if np.any(np.linalg.norm(u, axis=-1) == 0) or np.any(np.linalg.norm(v, axis=-1) == 0):
        raise DomainError("observer coincides with an endpoint")
    th = _angle(u, v)
    return float(th) if np.ndim(th) == 0 else th


def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def check_parallax_bound(samples: int, a: float, seed: int = 0) -> CheckReport:
    """Count violations of theta < (pi/4) d^(1-a) over admissible random triples."""
    if not 0.0 < a < 1.0:
        raise DomainError("a must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    d = 10.0 ** rng.uniform(-6.0, 0.0, samples)
    x0 = rng.uniform(-1.0, 1.0, (samples, 3))
    x1 = x0 + d[:, None] * _unit(rng, samples)
    rho = 2.0 * d**a * (1.0 + 10.0 ** rng.uniform(-9.0, 1.0, samples))
    y = x0 + rho[:, None] * _unit(rng, samples)
    dd = np.linalg.norm(x1 - x0, axis=1)
    admissible = (np.linalg.norm(y - x0, axis=1) > 2.0 * dd**a) & (dd <= 1.0)
    theta = _angle(x0 - y, x1 - y)
    bound = 0.25 * np.pi * dd ** (1.0 - a)
    bad = admissible & (theta >= bound)
    ratio = np.where(admissible, theta / bound, 0.0)
    return CheckReport(
        check_name="parallax_bound",
        params={"a": a},
        samples=int(admissible.sum()),
        violations=int(bad.sum()),
        empirical_sup=float(ratio.max()),
        passed=not bool(bad.any()),
        seed=seed,
        paper_ref="parallax estimate: |y - x0| > 2 d^a and d <= 1 imply theta < (pi/4) d^(1-a)",
        details={"excluded": int((~admissible).sum())},
    )


def _stability(q, n):
    s1 = float(np.max(q[:n])) if n else 0.0
    s2 = float(np.max(q)) if len(q) else 0.0
    return s2, (s2 / s1 - 1.0) if s1 > 0 else 0.0


def _non_grazing(domain, P, z):
    n = domain.normal(P)
    return np.abs(np.sum(n * z, axis=-1)) / np.linalg.norm(z, axis=-1) >= GRAZING_TOL


def check_exit_continuity(domain: ConvexDomain, samples: int, seed: int = 0, drift_tol: float = 0.2) -> CheckReport:
    """Empirical sups of |dp| / ((1+1/d0)|x-y|) and |dtau||zeta| / ((1+1/d0)|x-y|).

    Draws 2*samples pairs; the stability ratio compares the sup over the
    first half to the sup over all.
    """
    rng = np.random.default_rng(seed)
    n = 2 * samples
    x = domain.sample_interior(rng, n)
    y = np.empty_like(x)
    todo = np.arange(n)
    while len(todo):
        eps = 10.0 ** rng.uniform(-4.0, 0.0, len(todo)) * domain.diameter / 2.0
        cand = x[todo] + eps[:, None] * _unit(rng, len(todo))
        ok = domain.contains(cand)
        y[todo[ok]] = cand[ok]
        todo = todo[~ok]
    z = rng.normal(size=(n, 3))
    tx, ty = domain._exit_time(x, z), domain._exit_time(y, z)
    Px, Py = x - tx[:, None] * z, y - ty[:, None] * z
    keep = _non_grazing(domain, Px, z) & _non_grazing(domain, Py, z)
    d0 = np.minimum(domain._distance(x), domain._distance(y))
    sep = np.linalg.norm(x - y, axis=1)
    w = (1.0 + 1.0 / d0) * sep
    qp = np.where(keep, np.linalg.norm(Px - Py, axis=1) / w, 0.0)
    qt = np.where(keep, np.abs(tx - ty) * np.linalg.norm(z, axis=1) / w, 0.0)
    sp, rp = _stability(qp, samples)
    st, rt = _stability(qt, samples)
    drift = max(rp, rt)
    finite = bool(np.all(np.isfinite(qp)) and np.all(np.isfinite(qt)))
    return CheckReport(
        check_name="exit_continuity",
        params={"domain": type(domain).__name__},
        samples=int(keep.sum()),
        empirical_sup=max(sp, st),
        stability_ratio=drift,
        passed=finite and drift <= drift_tol,
        seed=seed,
        paper_ref="exit point and exit time Lipschitz in x with constant C6 (1 + 1/d0)",
        details={"sup_exit_point": sp, "sup_exit_time": st, "drift_point": rp, "drift_time": rt,
                 "grazing_excluded": int((~keep).sum())},
    )


def _rotate(v, axis, angle):
    """Rodrigues rotation of rows of v about unit axes (assumed perpendicular to v)."""
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    return v * c + np.cross(axis, v) * s + axis * np.sum(axis * v, axis=1, keepdims=True) * (1 - c)


def check_angle_continuity(domain: ConvexDomain, samples: int, seed: int = 0, drift_tol: float = 0.2) -> CheckReport:
    """Empirical sups of |P1-P2| and ||xP1|-|xP2|| over (1+1/d0) theta."""
    rng = np.random.default_rng(seed)
    n = 2 * samples
    x = domain.sample_interior(rng, n)
    z1 = rng.normal(size=(n, 3))
    axis = np.cross(z1, rng.normal(size=(n, 3)))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    theta = 10.0 ** rng.uniform(-4.0, 0.0, n)
    z2 = _rotate(z1, axis, theta) * rng.uniform(0.2, 5.0, n)[:, None]
    t1, t2 = domain._exit_time(x, z1), domain._exit_time(x, z2)
    P1, P2 = x - t1[:, None] * z1, x - t2[:, None] * z2
    keep = _non_grazing(domain, P1, z1) & _non_grazing(domain, P2, z2)
    d0 = domain._distance(x)
    w = (1.0 + 1.0 / d0) * _angle(z1, z2)
    qp = np.where(keep, np.linalg.norm(P1 - P2, axis=1) / w, 0.0)
    ql = np.where(keep, np.abs(np.linalg.norm(x - P1, axis=1) - np.linalg.norm(x - P2, axis=1)) / w, 0.0)
    sp, rp = _stability(qp, samples)
    sl, rl = _stability(ql, samples)
    drift = max(rp, rl)
    return CheckReport(
        check_name="angle_continuity",
        params={"domain": type(domain).__name__},
        samples=int(keep.sum()),
        empirical_sup=max(sp, sl),
        stability_ratio=drift,
        passed=bool(np.all(np.isfinite(qp)) and drift <= drift_tol),
        seed=seed,
        paper_ref="exit point and chord length Lipschitz in the velocity angle with constant C7 (1 + 1/d0)",
        details={"sup_point": sp, "sup_length": sl, "drift_point": rp, "drift_length": rl},
    )


def check_segment_distance(domain: ConvexDomain, samples: int, seed: int = 0) -> CheckReport:
    """Violations of |zX| <= (R/d0) d(z, boundary) for z on the chord from x to X = p(x, zeta)."""
    rng = np.random.default_rng(seed)
    x = domain.sample_interior(rng, samples)
    z = rng.normal(size=(samples, 3))
    X = x - domain._exit_time(x, z)[:, None] * z
    t = np.where(rng.random(samples) < 0.5, rng.random(samples), 1.0 - 10.0 ** rng.uniform(-8.0, 0.0, samples))
    pt = x + t[:, None] * (X - x)
    R = domain.diameter
    d0 = domain._distance(x)
    lhs = np.linalg.norm(pt - X, axis=1)
    interior = domain.contains(pt)
    dz = np.zeros(samples)
    dz[interior] = domain._distance(pt[interior])
    rhs = R / d0 * dz
    bad = lhs > rhs + 1e-12 * R
    return CheckReport(
        check_name="segment_distance",
        params={"domain": type(domain).__name__},
        samples=samples,
        violations=int(bad.sum()),
        empirical_sup=float(np.max(np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), 0.0))),
        passed=not bool(bad.any()),
        seed=seed,
        paper_ref="|zX| <= (R/d0) d(z, boundary) for z on the chord from x to its exit point",
    )


def domain_from_config(cfg: dict) -> ConvexDomain:
    shape = cfg.get("shape", "ball")
    center = cfg.get("center", [0.0, 0.0, 0.0])
    if shape == "ball":
        return Ball(center, float(cfg.get("radius", 1.0)))
    if shape == "ellipsoid":
        return Ellipsoid(center, cfg.get("semi_axes", [2.0, 1.0, 1.0]))
    raise DomainError(f"unknown domain shape {shape!r}")
