"""Damped transport along backward characteristics.

The stationary problem is solved in its integral form

    f(x, z) = f_b(p(x, z), z) exp(-nu tau) + int_0^tau exp(-nu s) K(f)(x - z s, z) ds,

with tau = tau(x, z) the backward exit time and p(x, z) the exit point.
Unknowns live on a Cartesian spatial lattice times a spherical velocity grid.
K is applied by product integration (rows of ``k_weights``) and the path
integral uses the substitution u = (1 - exp(-nu s)) / nu, which absorbs the
damping exactly, followed by composite Gauss-Legendre panels graded towards
both ends of the path.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DomainError
from .geometry import ConvexDomain, _validate
from .kernel import (CenteredQuadrature, VelocityQuadrature, _model_of, k_weights)
from .reports import CheckReport, _clean

SMALL_SPEED = 1e-3


# ----------------------------------------------------------------------------
# boundary data


@dataclass(frozen=True)
class BoundaryDatum:
    """Incoming data on the boundary, defined where eta . n(X) < 0.

    kind ``zero`` and ``constant`` are what they say.  ``holder`` is the test
    family

        c0 exp(-|eta|^2 / 4) (1 + amp |sin(wx . X + wv . eta)|^sigma),

    Hoelder of order sigma jointly in (X, eta), with envelope
    phi(eta) = c0 (1 + amp) exp(-|eta|^2 / 4).
    """

    kind: str = "holder"
    c0: float = 1.0
    amp: float = 0.5
    sigma: float = 0.4
    omega_x: tuple = (1.3, -0.7, 0.9)
    omega_v: tuple = (0.6, 0.4, -0.5)

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "holder"):
            raise DomainError(f"unknown boundary datum kind {self.kind!r}")
        if not 0.0 < self.sigma < 1.0:
            raise DomainError("sigma must lie in (0, 1)")
        if self.kind == "holder" and (self.c0 < 0 or self.amp < 0):
            raise DomainError("holder datum needs c0 >= 0 and amp >= 0")

    def evaluate(self, X, eta):
        X = np.asarray(X, dtype=float)
        eta = np.asarray(eta, dtype=float)
        shape = np.broadcast_shapes(X.shape, eta.shape)[:-1]
        if self.kind == "zero":
            return np.zeros(shape)
        if self.kind == "constant":
            return np.full(shape, float(self.c0))
        th = X @ np.asarray(self.omega_x, float) + eta @ np.asarray(self.omega_v, float)
        g = np.exp(-0.25 * np.sum(eta * eta, axis=-1))
        return self.c0 * g * (1.0 + self.amp * np.abs(np.sin(th)) ** self.sigma)

    def envelope(self, speed):
        speed = np.asarray(speed, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(speed)
        if self.kind == "constant":
            return np.full_like(speed, abs(self.c0))
        return self.c0 * (1.0 + self.amp) * np.exp(-0.25 * speed**2)

    @property
    def holder_sigma(self) -> float:
        return self.sigma

    @property
    def holder_M(self) -> float:
        """Bound for sup|f| plus the sigma-Hoelder seminorm.

        |sin a|^s - |sin b|^s is bounded by |a - b|^s, the phase is Lipschitz
        with constant W = sqrt(|wx|^2 + |wv|^2), and the Gaussian factor is
        1-Lipschitz and bounded by 1, hence sigma-Hoelder with constant 1.
        """
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return abs(self.c0)
        W = math.hypot(np.linalg.norm(self.omega_x), np.linalg.norm(self.omega_v))
        return self.c0 * (self.amp * W**self.sigma + (1.0 + self.amp))

    @classmethod
    def from_config(cls, cfg: dict) -> "BoundaryDatum":
        kind = cfg.get("kind", "holder")
        if kind == "constant":
            return cls("constant", c0=float(cfg.get("value", cfg.get("c0", 1.0))))
        if kind == "zero":
            return cls("zero")
        return cls("holder", c0=float(cfg.get("c0", 1.0)), amp=float(cfg.get("amp", 0.5)),
                   sigma=float(cfg.get("sigma", 0.4)),
                   omega_x=tuple(cfg.get("omega_x", (1.3, -0.7, 0.9))),
                   omega_v=tuple(cfg.get("omega_v", (0.6, 0.4, -0.5))))


def incoming_points(domain: ConvexDomain, rng: np.random.Generator, n: int, grazing: float = 1e-6):
    """Random (X, eta) on Gamma_-: X on the boundary, eta . n(X) < 0."""
    Xs, Es = [], []
    while sum(len(x) for x in Xs) < n:
        x = domain.sample_interior(rng, n)
        eta = rng.normal(size=(n, 3))
        P = x - domain._exit_time(x, eta)[:, None] * eta
        nn = domain.normal(P)
        ok = np.sum(eta * nn, axis=1) < -grazing * np.linalg.norm(eta, axis=1)
        Xs.append(P[ok])
        Es.append(eta[ok])
    return np.concatenate(Xs)[:n], np.concatenate(Es)[:n]


# ----------------------------------------------------------------------------
# path quadrature


@dataclass(frozen=True)
class PathRule:
    """Composite Gauss-Legendre rule on [0, 1] in the damped variable u/U."""

    order: int = 3
    edges: tuple = (0.0, 0.1, 0.5, 0.9, 1.0)

    @cached_property
    def reference(self):
        x, w = np.polynomial.legendre.leggauss(self.order)
        e = np.asarray(self.edges, dtype=float)
        a, b = e[:-1, None], e[1:, None]
        return (0.5 * (b - a) * (x + 1.0) + a).ravel(), (0.5 * (b - a) * w).ravel()

    @property
    def size(self) -> int:
        return self.order * (len(self.edges) - 1)

    def nodes(self, tau, nu):
        """Path nodes s and weights with int_0^tau e^{-nu s} F(s) ds ~ sum w F(s)."""
        tau = np.asarray(tau, dtype=float)
        nu = np.asarray(nu, dtype=float)
        x, w = self.reference
        U = -np.expm1(-nu * tau) / nu
        u = U[..., None] * x
        s = -np.log1p(-nu[..., None] * u) / nu[..., None]
        return s, U[..., None] * w


# ----------------------------------------------------------------------------
# phase grid and field


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """Spatial lattice times a spherical velocity grid.

    ``layout="radial"`` (default) places nodes at x = c + rho R(w) w, with
    R(w) the distance from the centre c to the boundary along the unit
    direction w, on a tensor grid in (rho, theta, phi).  The rho nodes are
    graded towards the boundary, where the damped boundary term has a layer
    of width |z| / nu; interpolation is trilinear in (rho, theta, phi).

    ``layout="cartesian"`` uses a uniform lattice over the bounding box.
    Exterior nodes carry values evaluated at the boundary point on the ray
    from the centre, a continuous extension for trilinear interpolation.
    """

    domain: ConvexDomain
    spatial_shape: tuple = (13, 10, 10)
    layout: str = "radial"
    grading: float = 2.0
    velocity: VelocityQuadrature = field(default_factory=VelocityQuadrature)
    centered: CenteredQuadrature = field(default_factory=lambda: CenteredQuadrature(16, 16, 16))
    path: PathRule = field(default_factory=PathRule)

    def __post_init__(self):
        if self.layout not in ("radial", "cartesian"):
            raise DomainError(f"unknown spatial layout {self.layout!r}")
        shape = tuple(int(n) for n in np.broadcast_to(self.spatial_shape, 3))
        object.__setattr__(self, "spatial_shape", shape)
        if min(shape) < 2 or (self.layout == "radial" and shape[2] < 3):
            raise DomainError(f"spatial_shape {shape} too small")
        if self.grading < 1.0:
            raise DomainError("grading must be >= 1")

    @classmethod
    def cartesian(cls, domain, n_space: int = 11, **kw) -> "PhaseGrid":
        return cls(domain, (n_space,) * 3, "cartesian", **kw)

    # -- coordinates ---------------------------------------------------------

    @cached_property
    def axes(self):
        n0, n1, n2 = self.spatial_shape
        if self.layout == "cartesian":
            lo, hi = self.domain.bounding_box
            return [np.linspace(lo[c], hi[c], self.spatial_shape[c]) for c in range(3)]
        t = np.linspace(0.0, 1.0, n0)
        return [1.0 - (1.0 - t) ** self.grading, np.linspace(0.0, np.pi, n1),
                2.0 * np.pi * np.arange(n2) / n2]

    def _reach(self, w):
        """Distance R(w) from the centre to the boundary along unit directions w."""
        from .geometry import Ball, Ellipsoid
        d = self.domain
        if isinstance(d, Ball):
            return np.full(w.shape[:-1], float(d.radius))
        if isinstance(d, Ellipsoid):
            return 1.0 / np.sqrt(np.sum((w / d.semi_axes) ** 2, axis=-1))
        P = d.forward_exit(np.broadcast_to(d.center, w.shape), w)
        return np.linalg.norm(P - d.center, axis=-1)

    @cached_property
    def lattice(self):
        A = np.meshgrid(*self.axes, indexing="ij")
        if self.layout == "cartesian":
            return np.stack(A, axis=-1).reshape(-1, 3)
        rho, th, ph = (a.reshape(-1) for a in A)
        w = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
        return self.domain.center + (rho * (1.0 - 1e-9) * self._reach(w))[:, None] * w

    @cached_property
    def inside(self):
        return self.domain.contains(self.lattice)

    @cached_property
    def interior_nodes(self):
        """Indices of nodes strictly inside (excludes the outermost radial shell)."""
        if self.layout == "cartesian":
            return np.flatnonzero(self.inside)
        n0, n1, n2 = self.spatial_shape
        return np.arange((n0 - 1) * n1 * n2)

    @cached_property
    def eval_points(self):
        """Lattice nodes, with exterior ones pulled onto the boundary."""
        x = self.lattice.copy()
        out = ~self.inside
        if np.any(out):
            c = self.domain.center
            P = self.domain.forward_exit(np.broadcast_to(c, x[out].shape), x[out] - c)
            x[out] = c + (P - c) * (1.0 - 1e-9)
        return x

    @cached_property
    def weights(self):
        """Spatial quadrature weights (trapezoid in the lattice coordinates)."""
        def trap(a):
            d = np.diff(a)
            w = np.zeros_like(a)
            w[:-1] += 0.5 * d
            w[1:] += 0.5 * d
            return w
        if self.layout == "cartesian":
            sp = [a[1] - a[0] for a in self.axes]
            return np.where(self.inside, np.prod(sp), 0.0)
        rho, th, ph = self.axes
        wr, wt = trap(rho), trap(th)
        wp = np.full(len(ph), 2.0 * np.pi / len(ph))
        W = (wr * rho**2)[:, None, None] * (wt * np.sin(th))[None, :, None] * wp[None, None, :]
        R = np.linalg.norm(self.lattice - self.domain.center, axis=1)
        r_node = np.repeat(rho, len(th) * len(ph))
        reach = np.where(r_node > 0, R / np.where(r_node > 0, r_node, 1.0) / (1.0 - 1e-9), 0.0)
        # the centre carries no direction; use the mean reach for its Jacobian
        reach[r_node == 0] = np.mean(reach[r_node == rho[-1]])
        return W.reshape(-1) * reach**3

    @property
    def shape(self):
        return (len(self.lattice), self.velocity.size)

    def _coords(self, p):
        if self.layout == "cartesian":
            return p
        d = p - self.domain.center
        r = np.linalg.norm(d, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        w = np.where((r > 0)[..., None], d / safe[..., None], np.array([0.0, 0.0, 1.0]))
        rho = r / self._reach(w)
        th = np.arccos(np.clip(w[..., 2], -1.0, 1.0))
        ph = np.mod(np.arctan2(w[..., 1], w[..., 0]), 2.0 * np.pi)
        return np.stack([rho, th, ph], axis=-1)

    def _parts(self, points):
        """Per-axis (lower index, upper index, fraction) of the enclosing cell."""
        q = self._coords(np.asarray(points, dtype=float))
        parts = []
        for c, ax in enumerate(self.axes):
            n = len(ax)
            if c == 2 and self.layout == "radial":
                t = q[..., 2] * (n / (2.0 * np.pi))
                i0 = np.floor(t).astype(np.intp)
                f = t - i0
                i0 %= n
                i1 = i0 + 1
                i1[i1 == n] = 0
                parts.append((i0, i1, f))
                continue
            x = np.clip(q[..., c], ax[0], ax[-1])
            i = np.clip(np.searchsorted(ax, x) - 1, 0, n - 2)
            f = (x - ax[i]) / (ax[i + 1] - ax[i])
            parts.append((i, i + 1, f))
        return parts

    def _corners(self, points):
        n0, n1, n2 = self.spatial_shape
        (a0, a1, fa), (b0, b1, fb), (c0, c1, fc) = self._parts(points)
        ga, gb, gc = 1.0 - fa, 1.0 - fb, 1.0 - fc
        for a, wa in ((a0, ga), (a1, fa)):
            for b, wb in ((b0, gb), (b1, fb)):
                ab = (a * n1 + b) * n2
                wab = wa * wb
                for c, wc in ((c0, gc), (c1, fc)):
                    yield ab + c, wab * wc

    def trilinear(self, points):
        """Flat lattice indices (..., 8) and weights (..., 8) at points (..., 3)."""
        idx, wts = zip(*self._corners(points))
        return np.stack(idx, axis=-1), np.stack(wts, axis=-1)

    def interpolate(self, values, points, cols=None):
        """Trilinear interpolation of lattice values.

        ``values`` is (Nx,) or (Nx, Nv); with ``cols`` (broadcastable to the
        point shape) each point reads its own velocity column.
        """
        v = np.asarray(values)
        out = 0.0
        if cols is None:
            for i, w in self._corners(points):
                g = v[i]
                out = out + g * (w[..., None] if g.ndim > w.ndim else w)
            return out
        if v.ndim == 2:
            flat = v.reshape(-1)
            nv = v.shape[1]
            c = np.asarray(cols)
            for i, w in self._corners(points):
                out = out + flat[i * nv + c] * w
            return out
        raise DomainError("cols given for a one-dimensional value array")

    def describe(self) -> dict:
        v, c, p = self.velocity, self.centered, self.path
        return {"layout": self.layout, "spatial_shape": list(self.spatial_shape), "grading": self.grading,
                "velocity": {"r_max": v.r_max, "radial_nodes": v.radial_nodes, "polar_nodes": v.polar_nodes,
                             "azimuthal_nodes": v.azimuthal_nodes},
                "centered": {"radial": c.radial, "polar": c.polar, "azimuthal": c.azimuthal, "r_max": c.r_max},
                "path": {"order": p.order, "edges": list(p.edges)}}


# ----------------------------------------------------------------------------
# discrete operator


class TransportOperator:
    """Cached pieces of the fixed-point map for one kernel on one grid."""

    def __init__(self, kernel, grid: PhaseGrid):
        self.kernel = kernel
        self.grid = grid
        self.model = _model_of(kernel)

    @cached_property
    def nus(self):
        return np.asarray(self.kernel.nu(self.grid.velocity.speeds), dtype=float)

    @cached_property
    def W(self):
        """Product-integration matrix (Nv, Nv): K(f)(., z_j) = sum_l W[j, l] f(., z_l)."""
        return self.rows(self.grid.velocity.nodes)

    def rows(self, zetas):
        """Product-integration rows for arbitrary velocities.

        The last batch of at least 1024 velocities is memoized, so several
        terms evaluated at one large pair sample share a single computation.
        """
        zetas = np.atleast_2d(np.asarray(zetas, dtype=float))
        if self.model.c1 == 0.0:
            return np.zeros((len(zetas), self.grid.velocity.size))
        key = (zetas.shape, hash(zetas.tobytes()))
        memo = self.__dict__.get("_rows_memo")
        if memo is not None and memo[0] == key:
            return memo[1]
        out = k_weights(self.kernel, self.grid.centered, self.grid.velocity, zetas)
        if len(zetas) >= 1024:
            self._rows_memo = (key, out)
        return out

    @cached_property
    def tau(self):
        """Exit times (Nx, Nv) from the lattice evaluation points."""
        g = self.grid
        z = g.velocity.nodes
        return g.domain._exit_time(g.eval_points[:, None, :], z[None, :, :])

    def boundary_term(self, bdry: BoundaryDatum):
        """I at every lattice node and velocity node, shape (Nx, Nv)."""
        cache = self.__dict__.setdefault("_bterms", {})
        if bdry not in cache:
            g = self.grid
            z = g.velocity.nodes
            cache[bdry] = boundary_term(bdry, self.kernel, g.domain, g.eval_points[:, None, :],
                                        z[None, :, :], tau=self.tau)
        return cache[bdry]

    def kf(self, values):
        return values @ self.W.T

    def path_source(self, kf, y, cols, tau=None):
        """int_0^tau e^{-nu s} kf~(y - z_c s, z_c) ds for velocity node columns ``cols``.

        ``y`` is (M, 3) and ``cols`` (M,), with kf~ the trilinear interpolant
        of the lattice values ``kf`` (Nx, Nv).
        """
        g = self.grid
        z = g.velocity.nodes[cols]
        nu = self.nus[cols]
        if tau is None:
            tau = g.domain._exit_time(y, z)
        s, w = g.path.nodes(tau, nu)
        pts = y[:, None, :] - s[..., None] * z[:, None, :]
        vals = g.interpolate(kf, pts, np.asarray(cols)[:, None])
        return np.sum(vals * w, axis=-1)

    def sweep(self, values, B, threads: int = 1, chunk: int = 16):
        """One application of the fixed-point map to lattice values (Nx, Nv)."""
        g = self.grid
        Nx, Nv = g.shape
        kf = self.kf(values)
        out = np.empty_like(values)
        y = g.eval_points

        def work(j0):
            cols = np.arange(j0, min(j0 + chunk, Nv))
            yy = np.repeat(y[None], len(cols), axis=0).reshape(-1, 3)
            cc = np.repeat(cols, Nx)
            tt = self.tau[:, cols].T.reshape(-1)
            out[:, cols] = B[:, cols] + self.path_source(kf, yy, cc, tau=tt).reshape(len(cols), Nx).T

        starts = range(0, Nv, chunk)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                list(ex.map(work, starts))
        else:
            for j0 in starts:
                work(j0)
        return out


_OPERATORS: dict = {}


def get_operator(kernel, grid: PhaseGrid) -> TransportOperator:
    key = (kernel, id(grid))
    op = _OPERATORS.get(key)
    if op is None or op.grid is not grid:
        if len(_OPERATORS) > 8:
            _OPERATORS.clear()
        op = _OPERATORS[key] = TransportOperator(kernel, grid)
    return op


def boundary_term(bdry: BoundaryDatum, kernel, domain: ConvexDomain, x, zeta, tau=None):
    """f_b(p(x, z), z) exp(-nu(|z|) tau(x, z)), zero below the small-speed cutoff."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    x, zeta = np.broadcast_arrays(x, zeta)
    speed = np.linalg.norm(zeta, axis=-1)
    ok = speed >= SMALL_SPEED
    zs = np.where(ok[..., None], zeta, 1.0)
    if tau is None:
        tau = domain._exit_time(x, zs)
    P = x - tau[..., None] * zs
    val = bdry.evaluate(P, zs) * np.exp(-np.asarray(kernel.nu(speed)) * tau)
    return np.where(ok, val, 0.0)


# ----------------------------------------------------------------------------
# the field


@dataclass(eq=False)
class DistributionField:
    """Lattice values f(x_i, z_j) with off-grid evaluation.

    Off-grid (x, z) is evaluated by one application of the fixed-point map at
    the exact velocity: the boundary term is exact and K is re-quadratured at
    z against the spatially interpolated field, so f itself is never
    interpolated in velocity.
    """

    grid: PhaseGrid
    kernel: object
    values: np.ndarray
    bdry: BoundaryDatum | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise DomainError(f"field shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field contains non-finite values")

    @property
    def operator(self) -> TransportOperator:
        return get_operator(self.kernel, self.grid)

    @cached_property
    def kf(self):
        return self.operator.kf(self.values)

    def evaluate(self, x, zeta):
        """f at arbitrary interior points and velocities (rows of x and zeta)."""
        return phase_terms(self, x, zeta, terms=("f",))["f"]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values[self.grid.interior_nodes])))


def phase_terms(field: DistributionField, x, zeta, terms=("I", "II", "f"), chunk: int = 512) -> dict:
    """I, II (solver discretization) and f at arbitrary (x, zeta) rows, sharing the K rows."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    zeta = np.atleast_2d(np.asarray(zeta, dtype=float))
    x, zeta = np.broadcast_arrays(x, zeta)
    op, g = field.operator, field.grid
    bdry = field.bdry if field.bdry is not None else BoundaryDatum("zero")
    speed = np.linalg.norm(zeta, axis=1)
    zs = np.where(speed[:, None] >= SMALL_SPEED, zeta, SMALL_SPEED)
    out = {t: np.empty(len(x)) for t in terms}
    need_path = "II" in terms or "f" in terms
    rows = op.rows(zs) if need_path else None
    for a in range(0, len(x), chunk):
        sl = slice(a, a + chunk)
        xx, zz = x[sl], zs[sl]
        I = boundary_term(bdry, field.kernel, g.domain, xx, zeta[sl])
        if "I" in terms:
            out["I"][sl] = I
        if not need_path:
            continue
        tau = g.domain._exit_time(xx, zz)
        s, w = g.path.nodes(tau, np.asarray(field.kernel.nu(np.linalg.norm(zz, axis=1))))
        pts = xx[:, None, :] - s[..., None] * zz[:, None, :]
        own = np.arange(len(xx))[:, None]
        R = rows[sl].T
        if "f" in terms:
            out["f"][sl] = I + np.sum(g.interpolate(field.values @ R, pts, own) * w, axis=1)
        if "II" in terms:
            out["II"][sl] = np.sum(g.interpolate(op.boundary_term(bdry) @ R, pts, own) * w, axis=1)
    return out


# ----------------------------------------------------------------------------
# Picard iteration


@dataclass
class ConvergenceReport:
    status: str
    iterations: int
    update_history: list
    residual: float
    wall_time: float = 0.0
    params: dict = field(default_factory=dict)

    @property
    def ratios(self):
        h = np.asarray(self.update_history, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = h[1:] / h[:-1]
        return r[np.isfinite(r)].tolist()

    @property
    def contraction(self) -> float:
        """Median ratio of successive updates (nan if fewer than two)."""
        r = [q for q in self.ratios if q > 0]
        return float(np.median(r)) if r else float("nan")

    def to_dict(self) -> dict:
        return _clean({"status": self.status, "iterations": self.iterations,
                       "update_history": self.update_history, "ratios": self.ratios,
                       "contraction": self.contraction, "residual": self.residual,
                       "params": self.params})

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def picard_solve(bdry: BoundaryDatum, kernel, domain: ConvexDomain, grid: PhaseGrid,
                 tol: float = 1e-8, max_iter: int = 100, threads: int = 1):
    """Iterate f <- RHS(f) from zero; returns (field, ConvergenceReport).

    Non-convergence is reported with status ``diverged``, never raised.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if grid.domain is not domain:
        raise DomainError("grid was built for a different domain")
    t0 = time.perf_counter()
    op = get_operator(kernel, grid)
    B = op.boundary_term(bdry)
    f = np.zeros(grid.shape)
    history = []
    status = "diverged"
    for it in range(1, max_iter + 1):
        new = op.sweep(f, B, threads=threads)
        upd = float(np.max(np.abs(new - f)))
        history.append(upd)
        f = new
        if not math.isfinite(upd) or (len(history) > 3 and upd > 1e8 * max(history[0], 1e-300)):
            break
        if upd < tol:
            status = "converged"
            break
    if np.all(np.isfinite(f)):
        residual = float(np.max(np.abs(op.sweep(f, B, threads=threads) - f)))
    else:
        residual = float("inf")
        f = np.nan_to_num(f, nan=0.0, posinf=0.0, neginf=0.0)
    rep = ConvergenceReport(status, len(history), history, residual, time.perf_counter() - t0,
                            params={"tol": tol, "max_iter": max_iter, "grid": grid.describe()})
    return DistributionField(grid, kernel, f, bdry), rep


def damped_transport_rhs(field: DistributionField, bdry: BoundaryDatum, kernel, domain: ConvexDomain, x, zeta):
    """Right-hand side of the integral equation at one phase point."""
    x, zeta = _validate(domain, x, zeta)
    fld = DistributionField(field.grid, kernel, field.values, bdry)
    return float(fld.evaluate(x, zeta)[0])


# ----------------------------------------------------------------------------
# iterated decomposition  f = I + II + III


def evaluate_I(bdry: BoundaryDatum, kernel, domain: ConvexDomain, x, zeta):
    """Boundary term f_b(p(x, z), z) exp(-nu tau)."""
    x, zeta = _validate(domain, x, zeta)
    v = boundary_term(bdry, kernel, domain, x, zeta)
    return float(v) if np.ndim(v) == 0 else v


def _path_points(grid: PhaseGrid, kernel, x, zeta):
    tau = grid.domain._exit_time(x, zeta)
    s, w = grid.path.nodes(tau, np.asarray(kernel.nu(np.linalg.norm(zeta))))
    return x - s[:, None] * zeta, w


def evaluate_II(bdry: BoundaryDatum, kernel, domain: ConvexDomain, grid: PhaseGrid, x, zeta,
                exact: bool = False):
    """Once-collided boundary term int_0^tau e^{-nu s} K(I)(x - z s, z) ds.

    With ``exact`` the boundary term is evaluated at every path point and
    velocity node.  Otherwise K(I) is taken from the lattice interpolant of
    its nodal values, the discretization the solver itself uses; the exact
    variant resolves the boundary layer of I that a coarse lattice cannot.
    """
    x, zeta = _validate(domain, x, zeta)
    if _model_of(kernel).c1 == 0.0 or bdry.kind == "zero":
        return 0.0
    op = get_operator(kernel, grid)
    row = op.rows(zeta)[0]
    y, w = _path_points(grid, kernel, x, zeta)
    if exact:
        z = grid.velocity.nodes
        B = boundary_term(bdry, kernel, domain, y[:, None, :], z[None, :, :])     # (P, Nv)
        return float(w @ (B @ row))
    col = op.boundary_term(bdry) @ row
    return float(w @ grid.interpolate(col, y))


def _H(field: DistributionField, y):
    """Damped path integrals of interpolated K(f) from points y (M, 3) along every velocity node."""
    op = field.operator
    Nv = field.grid.velocity.size
    M = len(y)
    yy = np.repeat(y, Nv, axis=0)
    cc = np.tile(np.arange(Nv), M)
    return op.path_source(field.kf, yy, cc).reshape(M, Nv)


def evaluate_G(field: DistributionField, kernel, domain: ConvexDomain, x0, zeta):
    """G(x0, z) = int k(z, z') int_0^tau(x0, z') e^{-nu(z') t} K(f)(x0 - z' t, z') dt dz'.

    z' runs over the velocity nodes with product-integration weights, the
    same discretization the solver uses, so III = int e^{-nu s} G ds holds
    exactly at the discrete level.
    """
    x0, zeta = _validate(domain, x0, zeta)
    _check_field(field, kernel, domain)
    row = field.operator.rows(zeta)[0]
    return float(_H(field, x0[None])[0] @ row)


def evaluate_III(field: DistributionField, kernel, domain: ConvexDomain, x, zeta):
    """Twice-collided term int_0^tau e^{-nu s} G(x - z s, z) ds."""
    x, zeta = _validate(domain, x, zeta)
    _check_field(field, kernel, domain)
    if _model_of(kernel).c1 == 0.0:
        return 0.0
    row = field.operator.rows(zeta)[0]
    y, w = _path_points(field.grid, kernel, x, zeta)
    return float(w @ (_H(field, y) @ row))


def _check_field(field, kernel, domain):
    if field.grid.domain is not domain:
        raise DomainError("field lives on a different domain")
    if field.kernel != kernel:
        raise DomainError("field was solved with a different kernel")


def decomposition_residual(field: DistributionField, n: int = 20, seed: int = 0, tol: float = 1e-3) -> CheckReport:
    """|f - (I + II + III)| at random interior lattice phase nodes.

    II uses the solver's discretization of the first collision; the gap to
    the exactly evaluated II (boundary term at every path point) is recorded
    alongside as a measure of the lattice's resolution of the boundary layer.
    """
    rng = np.random.default_rng(seed)
    g = field.grid
    nodes = g.velocity.nodes
    ii = rng.choice(g.interior_nodes, size=n)
    jj = rng.integers(0, g.velocity.size, size=n)
    bdry = field.bdry if field.bdry is not None else BoundaryDatum("zero")
    rows, worst, gap = [], 0.0, 0.0
    for i, j in zip(ii, jj):
        x, z = g.lattice[i], nodes[j]
        a = evaluate_I(bdry, field.kernel, g.domain, x, z)
        b = evaluate_II(bdry, field.kernel, g.domain, g, x, z)
        bx = evaluate_II(bdry, field.kernel, g.domain, g, x, z, exact=True)
        c = evaluate_III(field, field.kernel, g.domain, x, z)
        r = abs(field.values[i, j] - (a + b + c))
        worst = max(worst, r)
        gap = max(gap, abs(b - bx))
        rows.append({"node": int(i), "velocity_node": int(j), "f": field.values[i, j],
                     "I": a, "II": b, "II_exact": bx, "III": c, "residual": r})
    return CheckReport("decomposition_residual", {"n": n, "tol": tol}, samples=n, empirical_sup=worst,
                       passed=bool(worst <= tol), seed=seed,
                       paper_ref="iterated decomposition f = I + II + III",
                       details={"exact_II_gap": gap, "probes": rows})


def pure_transport_check(bdry: BoundaryDatum, kernel, domain: ConvexDomain, grid: PhaseGrid,
                         tol: float = 1e-10) -> CheckReport:
    """With the collision kernel switched off the solution is exp(-nu tau) f_b(p) exactly."""
    from dataclasses import replace
    from .kernel import CollisionKernel
    free = CollisionKernel.from_model(replace(_model_of(kernel), c1=0.0))
    field, rep = picard_solve(bdry, free, domain, grid, tol=1e-14, max_iter=5)
    g = grid
    z = np.broadcast_to(g.velocity.nodes, (g.shape[0],) + g.velocity.nodes.shape).reshape(-1, 3)
    x = np.repeat(g.eval_points, g.shape[1], axis=0)
    exact = boundary_term(bdry, free, domain, x, z).reshape(g.shape)
    err = float(np.max(np.abs(field.values - exact)))
    return CheckReport("pure_transport_limit", {"tol": tol, "kind": bdry.kind}, samples=int(exact.size),
                       empirical_sup=err, passed=bool(err <= tol and rep.status == "converged"),
                       paper_ref="collisionless limit: f = exp(-nu tau) f_b(p(x, zeta))",
                       details={"iterations": rep.iterations, "status": rep.status})


# ----------------------------------------------------------------------------
# G in two coordinate systems, with an analytic source in place of K(f)


def g_centered(source, kernel, domain: ConvexDomain, x0, zeta, quad: CenteredQuadrature,
               path: PathRule = PathRule(8, (0.0, 0.1, 0.5, 0.9, 1.0))):
    """G with z' = z + r w centred at z and the backward t-path from x0 along z'."""
    x0 = np.asarray(x0, dtype=float)
    pts, wk = quad.nodes(kernel, np.asarray(zeta, dtype=float)[None])
    zp, wk = pts[0], wk[0]
    sp = np.linalg.norm(zp, axis=1)
    keep = (sp > 1e-12) & (wk != 0)
    zp, wk, sp = zp[keep], wk[keep], sp[keep]
    tau = domain._exit_time(np.broadcast_to(x0, zp.shape), zp)
    t, wt = path.nodes(tau, np.asarray(kernel.nu(sp)))
    y = x0 - t[..., None] * zp[:, None, :]
    S = source(y, np.broadcast_to(zp[:, None, :], y.shape))
    return float(np.sum(wk * np.sum(wt * S, axis=1)))


def _gl(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * (x + 1.0) + a, 0.5 * (b - a) * w


def _duffy_rect(s, r0, r1, V, n):
    """Nodes (rho, v) and weights on [r0, r1] x [0, V] resolving a corner singularity at (s, 0)."""
    A = r1 - r0
    x, w = _gl(0.0, 1.0, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX = np.outer(w, w)
    sgn = 1.0 if s == r0 else -1.0
    # triangle under the diagonal (a = A xi, v = V xi eta) and over it (v = V xi, a = A xi eta)
    a = np.concatenate([A * X, A * X * Y]).ravel()
    v = np.concatenate([V * X * Y, V * X]).ravel()
    wt = np.concatenate([A * V * X * WX, A * V * X * WX]).ravel()
    return s + sgn * a, v, wt


def g_polar(source, kernel, domain: ConvexDomain, x0, zeta, n_rv: int = 24, n_phi: int = 24,
            path: PathRule = PathRule(8, (0.0, 0.1, 0.5, 0.9, 1.0)), r_max: float = 12.0):
    """G in the coordinates y = x0 - r w, z' = rho w (dy drho / |x0 - y|^2 form).

    G = int drho int dw int_0^l(w) dr rho k(z, rho w) e^{-nu(rho) r / rho} S(x0 - r w, rho w).
    The polar angle about z is written mu = 1 - v^2 and the (rho, v) plane is
    split at rho = |z| with a Duffy map at the singular corner.
    """
    from .kernel import _frames, kernel_value
    x0 = np.asarray(x0, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    e1, e2, e3, s = (q[0] for q in _frames(zeta[None]))
    V = math.sqrt(2.0)
    if s < 1e-12 or s >= r_max:
        rho_n, wr = _gl(0.0, r_max, n_rv)
        v_n, wv = _gl(0.0, V, n_rv)
        rho = np.repeat(rho_n, n_rv)
        v = np.tile(v_n, n_rv)
        wrv = np.outer(wr, wv).ravel()
    else:
        parts = [_duffy_rect(s, 0.0, s, V, n_rv // 2 or 1)[0:3], _duffy_rect(s, s, r_max, V, n_rv // 2 or 1)]
        rho = np.concatenate([parts[0][0], parts[1][0]])
        v = np.concatenate([parts[0][1], parts[1][1]])
        wrv = np.concatenate([parts[0][2], parts[1][2]])
    mu = 1.0 - v**2
    wmu = 2.0 * v * wrv                                     # d mu = 2 v dv
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    sn = np.sqrt(np.maximum(1.0 - mu**2, 0.0))
    om = (sn[:, None, None] * (np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2)
          + mu[:, None, None] * e3)                          # (Q, F, 3)
    om = om.reshape(-1, 3)
    rho_q = np.repeat(rho, n_phi)
    w_q = np.repeat(wmu, n_phi) * (2.0 * np.pi / n_phi)
    zp = rho_q[:, None] * om
    with np.errstate(divide="ignore", invalid="ignore"):
        kv = np.where(np.linalg.norm(zp - zeta, axis=1) > 0,
                      kernel_value(kernel, np.broadcast_to(zeta, zp.shape), np.where(
                          (np.linalg.norm(zp - zeta, axis=1) > 0)[:, None], zp, zp + 1.0)), 0.0)
    ell = domain._exit_time(np.broadcast_to(x0, om.shape), om)
    rate = np.asarray(kernel.nu(rho_q)) / rho_q
    r, wt = path.nodes(ell, rate)
    y = x0 - r[..., None] * om[:, None, :]
    S = source(y, np.broadcast_to(zp[:, None, :], y.shape))
    return float(np.sum(w_q * rho_q * kv * np.sum(wt * S, axis=1)))


def analytic_source(y, w):
    """Smooth test source used in place of K(f) when comparing the G formulations."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    return np.exp(-0.25 * np.sum(w * w, axis=-1)) * (1.0 + 0.5 * np.cos(
        y @ np.array([1.1, -0.4, 0.7]) + w @ np.array([0.3, 0.5, -0.2])))


def dual_g_check(kernel, domain: ConvexDomain, probes: int = 10, seed: int = 0, rtol: float = 1e-4,
                 quad: CenteredQuadrature | None = None, n_rv: int = 32, n_phi: int = 32,
                 source=analytic_source) -> CheckReport:
    """Compare the centred (s, z') form of G with the (r, w, rho) form at random probes."""
    rng = np.random.default_rng(seed)
    quad = quad or CenteredQuadrature(32, 32, 32)
    xs = domain.sample_interior(rng, probes, min_distance=0.1)
    zs = rng.normal(size=(probes, 3))
    rows, worst = [], 0.0
    for x, z in zip(xs, zs):
        a = g_centered(source, kernel, domain, x, z, quad)
        b = g_polar(source, kernel, domain, x, z, n_rv=n_rv, n_phi=n_phi)
        rel = abs(a - b) / max(abs(a), abs(b), 1e-300)
        worst = max(worst, rel)
        rows.append({"x": x, "zeta": z, "centered": a, "polar": b, "rel": rel})
    return CheckReport("dual_g_formulation", {"probes": probes, "rtol": rtol}, samples=probes,
                       empirical_sup=worst, passed=bool(worst <= rtol), seed=seed,
                       paper_ref="space-parametrized G agrees with the (s, zeta') form",
                       details={"probes": rows})


# ----------------------------------------------------------------------------
# checkpoints


def describe_domain(domain: ConvexDomain) -> dict:
    from .geometry import Ball, Ellipsoid
    if isinstance(domain, Ball):
        return {"shape": "ball", "center": list(domain.center), "radius": float(domain.radius)}
    if isinstance(domain, Ellipsoid):
        return {"shape": "ellipsoid", "center": list(domain.center), "semi_axes": list(domain.semi_axes)}
    return {"shape": type(domain).__name__, "center": list(domain.center)}


def save_field(field: DistributionField, path, interior_only: bool = False):
    """Write (x1, x2, x3, z1, z2, z3, value) rows to ``path`` and a JSON header beside it."""
    from dataclasses import asdict
    path = Path(path)
    g = field.grid
    Nx, Nv = g.shape
    keep = np.flatnonzero(g.inside) if interior_only else np.arange(Nx)
    X = np.repeat(g.lattice[keep], Nv, axis=0)
    Z = np.tile(g.velocity.nodes, (len(keep), 1))
    data = np.column_stack([X, Z, field.values[keep].reshape(-1)])
    np.savetxt(path, data, delimiter=",", header="x1,x2,x3,zeta1,zeta2,zeta3,value", comments="", fmt="%.17g")
    header = {"grid": g.describe(), "domain": describe_domain(g.domain),
              "model": asdict(_model_of(field.kernel)),
              "boundary": asdict(field.bdry) if field.bdry is not None else None,
              "rows": int(len(data)), "interior_only": interior_only,
              "layout": "lattice-major: row = i * Nv + j"}
    Path(str(path) + ".json").write_text(json.dumps(_clean(header), indent=2, sort_keys=True) + "\n")
    return path


def load_field(path):
    """Read a checkpoint back as (header dict, rows array of shape (n, 7))."""
    path = Path(path)
    header = json.loads(Path(str(path) + ".json").read_text())
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, rows
