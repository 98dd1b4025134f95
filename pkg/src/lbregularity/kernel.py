"""Collision model: frequency nu, the model kernel k and the smoothing operator K.

The kernel used throughout is the function that saturates the standard Grad
cutoff bound,

    k(z, w) = c1 |z - w|^-1 (1 + |z| + |w|)^-(1 - gamma)
              * exp(-(1 - delta)/4 * (|z - w|^2 + ((|z|^2 - |w|^2) / |z - w|)^2)),

so it is symmetric, has the 1/|z - w| singularity and the anisotropic Gaussian
decay of the true linearized kernel.  Every integral against k is done in
spherical coordinates centred on the singular point, where the r^2 Jacobian
cancels the pole.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import CubicSpline

from .errors import DomainError, SingularityError, TruncationWarning

SQRT_PI = math.sqrt(math.pi)
PI32 = math.pi**1.5


@dataclass(frozen=True)
class PotentialModel:
    """Cutoff cross-section parameters.

    ``gamma`` is the hard-potential exponent (0 is the Maxwellian gas; 1, the
    hard sphere, is accepted for the frequency and decay probes).  ``beta0`` is
    the angular integral of beta(theta); only it enters nu.  ``c1`` scales the
    kernel and may be 0 to switch collisions off; ``c2`` is the gradient bound
    amplitude and is carried for reporting only.
    """

    gamma: float = 0.5
    delta: float = 0.5
    beta0: float = 1.0
    c1: float = 0.2
    c2: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "delta", "beta0", "c1", "c2"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if self.beta0 <= 0:
            raise DomainError(f"beta0 must be positive, got {self.beta0}")
        if self.c1 < 0:
            raise DomainError(f"c1 must be nonnegative, got {self.c1}")
        if self.c2 <= 0:
            raise DomainError(f"c2 must be positive, got {self.c2}")

    @property
    def gauss_rate(self) -> float:
        """Coefficient (1 - delta)/4 of the kernel's Gaussian factor."""
        return 0.25 * (1.0 - self.delta)

    def beta(self, theta):
        """Default angular factor 2 beta0 cos(theta) sin(theta)."""
        theta = np.asarray(theta, dtype=float)
        return self.beta0 * 2.0 * np.cos(theta) * np.sin(theta)


def _nu_exact(model: PotentialModel, speed: float) -> float:
    """beta0 * int exp(-|eta|^2) |eta - zeta|^gamma d eta with |zeta| = speed.

    With w = eta - zeta the angular integral is analytic and leaves
    (pi / s) int_0^inf r^(1+gamma) (exp(-(r-s)^2) - exp(-(r+s)^2)) dr.
    """
    s = float(speed)
    if not math.isfinite(s):
        raise DomainError("speed must be finite")
    if s < 0:
        raise DomainError("speed must be nonnegative")
    g = model.gamma
    if g == 0.0:
        return model.beta0 * PI32
    if s < 1e-6:
        # s -> 0 limit plus the O(s^2) correction of the even expansion
        base = 2.0 * math.pi * special.gamma(1.5 + 0.5 * g)
        corr = 2.0 * math.pi * special.gamma(0.5 + 0.5 * g) * g * (g + 1) / 6.0
        return model.beta0 * (base + corr * s * s)

    def integrand(r):
        return r ** (1.0 + g) * math.exp(-((r - s) ** 2)) * -math.expm1(-4.0 * r * s)

    lo = max(0.0, s - 9.0)
    hi = s + 9.0
    pts = [s] if lo < s < hi else None
    val, _ = integrate.quad(integrand, lo, hi, points=pts, epsabs=0.0, epsrel=1e-13, limit=200)
    return model.beta0 * math.pi / s * val


@lru_cache(maxsize=32)
def _nu_table(model: PotentialModel, s_max: float = 80.0, n: int = 1601):
    s = np.linspace(0.0, s_max, n)
    vals = np.array([_nu_exact(model, x) for x in s])
    return CubicSpline(s, vals, bc_type=((1, 0.0), "not-a-knot"))


def fit_frequency_bounds(model: PotentialModel, s_max: float = 50.0, n: int = 2001):
    """Empirical nu0, nu1 with nu0 (1+s)^gamma <= nu(s) <= nu1 (1+s)^gamma on [0, s_max].

    The extremes of the dense sweep are polished with a bounded scalar
    search and widened by a relative 1e-9 guard.
    """
    def ratio(s):
        return _nu_exact(model, s) / (1.0 + s) ** model.gamma

    s = np.linspace(0.0, s_max, n)
    r = np.array([ratio(x) for x in s])
    h = s[1] - s[0]
    out = []
    for sign, idx in ((1.0, int(np.argmin(r))), (-1.0, int(np.argmax(r)))):
        lo, hi = max(0.0, s[idx] - h), min(s_max, s[idx] + h)
        res = optimize.minimize_scalar(lambda x: sign * ratio(x), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        best = sign * min(sign * r[idx], res.fun)
        out.append(best)
    nu0, nu1 = out
    return nu0 * (1.0 - 1e-9), nu1 * (1.0 + 1e-9)


@dataclass(frozen=True)
class CollisionKernel:
    """Evaluator pair (nu, k) for a potential, with fitted frequency bounds."""

    model: PotentialModel
    nu_lower: float
    nu_upper: float

    @classmethod
    def from_model(cls, model: PotentialModel) -> "CollisionKernel":
        nu0, nu1 = fit_frequency_bounds(model)
        return cls(model, nu0, nu1)

    def nu(self, speed):
        """Vectorized collision frequency (spline of the exact radial integral)."""
        s = np.abs(np.asarray(speed, dtype=float))
        if self.model.gamma == 0.0:
            return np.full(s.shape, self.model.beta0 * PI32)
        table = _nu_table(self.model)
        out = table(np.minimum(s, table.x[-1]))
        far = s > table.x[-1]
        if np.any(far):
            out = np.asarray(out, dtype=float).copy()
            out[far] = [_nu_exact(self.model, x) for x in s[far]]
        return out

    def k(self, zeta, zeta_star):
        return kernel_value(self, zeta, zeta_star)


def make_kernel(gamma=0.5, delta=0.5, beta0=1.0, c1=0.2, c2=1.0) -> CollisionKernel:
    return CollisionKernel.from_model(PotentialModel(gamma, delta, beta0, c1, c2))


def _model_of(kernel) -> PotentialModel:
    return kernel.model if isinstance(kernel, CollisionKernel) else kernel


def collision_frequency(kernel, speed: float) -> float:
    """nu(|zeta|) from the radial reduction, adaptive quadrature to ~1e-13."""
    return _nu_exact(_model_of(kernel), speed)


def kernel_value(kernel, zeta, zeta_star):
    """Model kernel k(zeta, zeta_star); broadcasts over leading axes."""
    m = _model_of(kernel)
    z = np.asarray(zeta, dtype=float)
    w = np.asarray(zeta_star, dtype=float)
    diff = np.linalg.norm(z - w, axis=-1)
    if np.any(diff == 0.0):
        raise SingularityError("k(zeta, zeta_star) is singular at zeta == zeta_star")
    nz = np.linalg.norm(z, axis=-1)
    nw = np.linalg.norm(w, axis=-1)
    q = (nz**2 - nw**2) / diff
    val = (m.c1 / diff * (1.0 + (nz + nw)) ** (-(1.0 - m.gamma))   # grouped so the swap is bit-exact
           * np.exp(-m.gauss_rate * (diff**2 + q**2)))
    return val if val.ndim else float(val)


def _frames(zetas):
    """Orthonormal (e1, e2, e3) per row with e3 along zeta (e_z for zeta = 0)."""
    z = np.atleast_2d(np.asarray(zetas, dtype=float))
    s = np.linalg.norm(z, axis=1)
    e3 = np.where(s[:, None] > 0, z / np.where(s > 0, s, 1.0)[:, None], np.array([0.0, 0.0, 1.0]))
    helper = np.where(np.abs(e3[:, :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    e1 = helper - np.sum(helper * e3, axis=1, keepdims=True) * e3
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(e3, e1)
    return e1, e2, e3, s


@dataclass(frozen=True)
class CenteredQuadrature:
    """Product rule for integrals against k, centred on the singular point.

    Radial Gauss-Legendre on [0, r_max]; polar Gauss-Legendre in mu restricted
    to the band where the kernel's second Gaussian exceeds ``exp(-band)``;
    uniform azimuthal rule.
    """

    radial: int = 16
    polar: int = 16
    azimuthal: int = 16
    r_max: float = 12.0
    band: float = 30.0
    tail_tol: float = 1e-6
    split: bool = False

    def refined(self, factor: int = 2) -> "CenteredQuadrature":
        return CenteredQuadrature(self.radial * factor, self.polar * factor, self.azimuthal * factor,
                                  self.r_max, self.band, self.tail_tol, self.split)

    @cached_property
    def _rules(self):
        xr, wr = np.polynomial.legendre.leggauss(self.radial)
        xm, wm = np.polynomial.legendre.leggauss(self.polar)
        phi = 2.0 * np.pi * (np.arange(self.azimuthal) + 0.5) / self.azimuthal
        return xr, wr, xm, wm, phi

    @property
    def size(self) -> int:
        return self.radial * self.polar * self.azimuthal

    def tail_bound(self, model: PotentialModel) -> float:
        a = model.gauss_rate
        return model.c1 * 4.0 * np.pi * math.exp(-a * self.r_max**2) / (2.0 * a)

    def _radial(self, s):
        """Radial Gauss-Legendre nodes/weights (Z, R) on [0, r_max].

        With ``split`` the rule is broken into two panels at r = |zeta|, where
        the factor (1 + |zeta| + |w|) has its kink at w = 0.
        """
        xr, wr, *_ = self._rules
        Z = len(s)
        if not self.split:
            r = 0.5 * self.r_max * (xr + 1.0)
            return np.broadcast_to(r, (Z, self.radial)), np.broadcast_to(0.5 * self.r_max * wr, (Z, self.radial))
        n1 = self.radial // 2
        x1, w1 = np.polynomial.legendre.leggauss(n1)
        x2, w2 = np.polynomial.legendre.leggauss(self.radial - n1)
        cut = np.where((s > 0.05 * self.r_max) & (s < 0.95 * self.r_max), s, 0.5 * self.r_max)
        r1 = 0.5 * cut[:, None] * (x1 + 1.0)
        r2 = cut[:, None] + 0.5 * (self.r_max - cut)[:, None] * (x2 + 1.0)
        q1 = 0.5 * cut[:, None] * w1
        q2 = 0.5 * (self.r_max - cut)[:, None] * w2
        return np.concatenate([r1, r2], axis=1), np.concatenate([q1, q2], axis=1)

    def nodes(self, kernel, zetas):
        """Nodes w (Z, Q, 3) and weights k(zeta, w) dw (Z, Q) for each zeta row."""
        m = _model_of(kernel)
        if self.tail_bound(m) > self.tail_tol:
            warnings.warn(f"velocity truncation r_max={self.r_max} leaves tail mass "
                          f"{self.tail_bound(m):.2e} > {self.tail_tol:.1e}", TruncationWarning, stacklevel=3)
        _, _, xm, wm, phi = self._rules
        e1, e2, e3, s = _frames(zetas)
        Z = s.shape[0]
        a = m.gauss_rate
        r, wr = self._radial(s)                                   # (Z, R)
        ucut = math.sqrt(self.band / m.gauss_rate)
        safe = np.where(s > 0, 2.0 * s, 1.0)[:, None]
        lo = np.where(s[:, None] > 0, np.clip((-ucut - r) / safe, -1.0, 1.0), -1.0)
        hi = np.where(s[:, None] > 0, np.clip((ucut - r) / safe, -1.0, 1.0), 1.0)
        # mu = lo + (hi - lo) x^2 smooths the sqrt(1 + mu) behaviour of |w| near mu = -1
        x = 0.5 * (xm + 1.0)
        span = (hi - lo)[..., None]
        mu = lo[..., None] + span * x**2                          # (Z, R, M)
        jac = span * 2.0 * x * 0.5                                # d mu = span 2x dx, dx = dxm / 2
        star = np.sqrt(np.maximum(s[:, None, None] ** 2 + 2.0 * r[..., None] * s[:, None, None] * mu
                                  + r[..., None] ** 2, 0.0))
        u = 2.0 * s[:, None, None] * mu + r[..., None]
        kr2 = m.c1 * (1.0 + s[:, None, None] + star) ** (-(1.0 - m.gamma)) * np.exp(-a * u**2)
        kr2 = kr2 * r[..., None] * np.exp(-a * r[..., None] ** 2)
        wgt = kr2 * (wr[..., None] * jac * wm) * (2.0 * np.pi / self.azimuthal)
        rs = r[..., None] * np.sqrt(np.maximum(1.0 - mu**2, 0.0))  # (Z, R, M)
        rm = r[..., None] * mu
        cphi, sphi = np.cos(phi), np.sin(phi)
        z = np.atleast_2d(np.asarray(zetas, dtype=float))
        pts = np.empty((Z, self.radial, self.polar, self.azimuthal, 3))
        for c in range(3):
            pts[..., c] = (z[:, c, None, None, None]
                           + rs[..., None] * (cphi * e1[:, c, None, None, None] + sphi * e2[:, c, None, None, None])
                           + rm[..., None] * e3[:, c, None, None, None])
        w = np.broadcast_to(wgt[..., None], (Z, self.radial, self.polar, self.azimuthal))
        return pts.reshape(Z, -1, 3), w.reshape(Z, -1)


@dataclass(frozen=True)
class VelocityQuadrature:
    """Spherical product grid on the ball |zeta| <= r_max.

    Radial Gauss-Legendre nodes, Gauss-Legendre in mu = cos(theta) and a
    uniform azimuthal rule; weights include the rho^2 Jacobian.  Grid
    functions are interpolated trilinearly in (rho, mu, phi) and vanish
    outside the ball.
    """

    r_max: float = 12.0
    radial_nodes: int = 12
    polar_nodes: int = 6
    azimuthal_nodes: int = 8

    def __post_init__(self):
        if self.r_max <= 0 or min(self.radial_nodes, self.polar_nodes, self.azimuthal_nodes) < 1:
            raise DomainError("velocity quadrature needs r_max > 0 and positive node counts")

    @classmethod
    def from_counts(cls, r_max=12.0, radial_nodes=12, angular_nodes=48, polar_nodes=6):
        if angular_nodes % polar_nodes:
            raise DomainError(f"angular_nodes={angular_nodes} not divisible by polar_nodes={polar_nodes}")
        return cls(r_max, radial_nodes, polar_nodes, angular_nodes // polar_nodes)

    def refined(self, factor: int = 2) -> "VelocityQuadrature":
        return VelocityQuadrature(self.r_max, self.radial_nodes * factor, self.polar_nodes * factor,
                                  self.azimuthal_nodes * factor)

    @cached_property
    def radii(self):
        x, w = np.polynomial.legendre.leggauss(self.radial_nodes)
        return 0.5 * self.r_max * (x + 1.0), 0.5 * self.r_max * w

    @cached_property
    def polar(self):
        return np.polynomial.legendre.leggauss(self.polar_nodes)

    @cached_property
    def azimuths(self):
        return 2.0 * np.pi * (np.arange(self.azimuthal_nodes) + 0.5) / self.azimuthal_nodes

    @property
    def shape(self):
        return (self.radial_nodes, self.polar_nodes, self.azimuthal_nodes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def nodes(self):
        rho, _ = self.radii
        mu, _ = self.polar
        phi = self.azimuths
        R, M, P = np.meshgrid(rho, mu, phi, indexing="ij")
        S = np.sqrt(1.0 - M**2)
        return np.stack([R * S * np.cos(P), R * S * np.sin(P), R * M], axis=-1).reshape(-1, 3)

    @cached_property
    def weights(self):
        rho, wr = self.radii
        _, wm = self.polar
        wp = np.full(self.azimuthal_nodes, 2.0 * np.pi / self.azimuthal_nodes)
        return (wr * rho**2)[:, None, None] * wm[None, :, None] * wp[None, None, :]

    @cached_property
    def flat_weights(self):
        return self.weights.reshape(-1)

    @cached_property
    def speeds(self):
        return np.linalg.norm(self.nodes, axis=1)

    def integrate(self, values, axis=-1):
        """Quadrature of grid values (last axis indexes the nodes)."""
        return np.tensordot(np.asarray(values), self.flat_weights, axes=([axis], [0]))

    def interp_weights(self, points):
        """Indices (P, 8) and weights (P, 8) of trilinear interpolation in (rho, mu, phi)."""
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        rho_n, _ = self.radii
        mu_n, _ = self.polar
        nr, nm, nphi = self.shape
        rho = np.linalg.norm(p, axis=1)
        mu = np.where(rho > 0, p[:, 2] / np.where(rho > 0, rho, 1.0), 1.0)
        phi = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2.0 * np.pi)

        def bracket(x, nodes):
            n = len(nodes)
            if n == 1:
                return np.zeros(x.shape, int), np.zeros(x.shape, int), np.zeros(x.shape)
            xc = np.clip(x, nodes[0], nodes[-1])
            i = np.clip(np.searchsorted(nodes, xc) - 1, 0, n - 2)
            t = (xc - nodes[i]) / (nodes[i + 1] - nodes[i])
            return i, i + 1, t

        ir0, ir1, tr = bracket(rho, rho_n)
        im0, im1, tm = bracket(np.clip(mu, -1.0, 1.0), mu_n)
        fp = phi / (2.0 * np.pi) * nphi - 0.5
        ip0 = np.floor(fp).astype(int)
        tp = fp - ip0
        ip1 = np.mod(ip0 + 1, nphi)
        ip0 = np.mod(ip0, nphi)
        inside = (rho <= self.r_max).astype(float)
        idx = np.empty((len(p), 8), dtype=np.intp)
        wts = np.empty((len(p), 8))
        k = 0
        for a, wa in ((ir0, 1 - tr), (ir1, tr)):
            for b, wb in ((im0, 1 - tm), (im1, tm)):
                ab = (a * nm + b) * nphi
                wab = wa * wb * inside
                for c, wc in ((ip0, 1 - tp), (ip1, tp)):
                    idx[:, k] = ab + c
                    wts[:, k] = wab * wc
                    k += 1
        return idx, wts

    def interpolate(self, values, points):
        """Interpolate grid values (..., N) at points (P, 3) -> (..., P)."""
        idx, w = self.interp_weights(points)
        v = np.asarray(values)
        return np.sum(v[..., idx] * w, axis=-1)


def apply_K(kernel, g: Callable, quad: CenteredQuadrature, zeta):
    """K(g)(zeta) = int k(zeta, w) g(w) dw for a velocity function g.

    ``g`` maps an (..., 3) array to (...) values.  Returns a scalar for a
    single zeta, otherwise one value per row.
    """
    z = np.asarray(zeta, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    out = np.empty(len(z))
    chunk = max(1, 2_000_000 // quad.size)
    for a in range(0, len(z), chunk):
        pts, w = quad.nodes(kernel, z[a:a + chunk])
        out[a:a + chunk] = np.sum(w * g(pts), axis=1)
    return float(out[0]) if single else out


def apply_K_many(kernel, gs, quad: CenteredQuadrature, zetas):
    """K(g)(zeta) for several functions at once, sharing the quadrature nodes; shape (len(gs), Z)."""
    z = np.atleast_2d(np.asarray(zetas, dtype=float))
    out = np.empty((len(gs), len(z)))
    chunk = max(1, 2_000_000 // quad.size)
    for a in range(0, len(z), chunk):
        pts, w = quad.nodes(kernel, z[a:a + chunk])
        for i, g in enumerate(gs):
            out[i, a:a + chunk] = np.sum(w * g(pts), axis=1)
    return out


def k_weights(kernel, quad: CenteredQuadrature, grid: VelocityQuadrature, zetas):
    """Product-integration rows W (Z, N): K(f)(zeta) ~= W @ f_grid.

    Integrates k(zeta, .) against the trilinear interpolant of a grid
    function, so the 1/|zeta - w| pole is handled by the centred rule.
    """
    z = np.atleast_2d(np.asarray(zetas, dtype=float))
    N = grid.size
    out = np.zeros((len(z), N))
    chunk = max(1, 1_000_000 // quad.size)
    for a in range(0, len(z), chunk):
        zz = z[a:a + chunk]
        pts, w = quad.nodes(kernel, zz)
        idx, iw = grid.interp_weights(pts.reshape(-1, 3))
        idx += np.repeat(np.arange(len(zz)) * N, pts.shape[1])[:, None]
        iw *= w.reshape(-1)[:, None]
        out[a:a + len(zz)] = np.bincount(idx.ravel(), weights=iw.ravel(),
                                         minlength=len(zz) * N).reshape(len(zz), N)
    return out


def caflisch_integral(eta, epsilon: float, a1: float, a2: float) -> float:
    """int |eta - w|^-(3 - eps) exp(-a1 |eta - w|^2 - a2 (|eta|^2 - |w|^2)^2 / |eta - w|^2) dw.

    Centred at eta the angular part is an error-function difference, leaving a
    one-dimensional radial integral with an r^(eps - 1) endpoint weight.
    """
    if min(epsilon, a1, a2) <= 0:
        raise DomainError("epsilon, a1 and a2 must be positive")
    e = float(np.linalg.norm(eta)) if np.ndim(eta) else abs(float(eta))
    sa = math.sqrt(a2)

    def angular(r):
        if e == 0.0:
            return 4.0 * math.pi * math.exp(-a2 * r * r)
        # 2 pi * int_{-1}^{1} exp(-a2 (2 e mu + r)^2) d mu
        return 2.0 * math.pi * SQRT_PI / (4.0 * e * sa) * (
            special.erf(sa * (r + 2 * e)) - special.erf(sa * (r - 2 * e)))

    def f(r):
        return math.exp(-a1 * r * r) * angular(r)

    R = math.sqrt(60.0 / a1)
    split = min(1.0, R)
    head, _ = integrate.quad(f, 0.0, split, weight="alg", wvar=(epsilon - 1.0, 0.0), epsrel=1e-12, epsabs=0.0)
    pts = [x for x in (2 * e,) if split < x < R]
    tail, _ = integrate.quad(lambda r: r ** (epsilon - 1.0) * f(r), split, R, points=pts or None,
                             epsrel=1e-12, epsabs=0.0, limit=200)
    return head + tail


def nu_derivative_bound(kernel, speed: float, h: float = 1e-3) -> float:
    """Central difference d nu / d|zeta| (even extension at the origin)."""
    if speed < 0:
        raise DomainError("speed must be nonnegative")
    m = _model_of(kernel)
    return (_nu_exact(m, speed + h) - _nu_exact(m, abs(speed - h))) / (2.0 * h)


def random_velocity_functions(rng: np.random.Generator, n: int, terms: int = 3, width: float = 2.0):
    """Bounded smooth random functions  exp(-|w|^2 / width^2) * sum a cos(b.w + c)."""
    fams = []
    for _ in range(n):
        a = rng.normal(size=terms)
        b = rng.normal(size=(terms, 3))
        c = rng.uniform(0, 2 * np.pi, size=terms)

        def f(w, a=a, b=b, c=c):
            w = np.asarray(w, dtype=float)
            env = np.exp(-np.sum(w * w, axis=-1) / width**2)
            return env * np.sum(a * np.cos(w @ b.T + c), axis=-1)

        fams.append(f)
    return fams


def grad_K_norm_check(kernel, quad: CenteredQuadrature, p, grid: VelocityQuadrature | None = None,
                      functions=None, n_functions: int = 20, seed: int = 0, h: float = 1e-3):
    """Empirical ratios ||grad K(f)||_p / ||f||_p over a family of bounded f.

    Norms are taken on ``grid`` (weighted for p = 1, 2; max for p = inf); the
    gradient is a central difference of K(f) at every grid node.  ``p`` may be
    a sequence, in which case the K(f) values are shared across exponents and
    the report carries one entry per exponent.
    """
    from .reports import CheckReport

    ps = list(p) if isinstance(p, (list, tuple)) else [p]
    if not ps or any(q not in (1, 2, np.inf, "inf") for q in ps):
        raise DomainError("p must be 1, 2 or inf")
    ps = [np.inf if q == "inf" else q for q in ps]
    grid = grid or VelocityQuadrature(r_max=6.0, radial_nodes=6, polar_nodes=4, azimuthal_nodes=6)
    if functions is None:
        functions = random_velocity_functions(np.random.default_rng(seed), n_functions)
    nodes = grid.nodes
    shifts = np.concatenate([np.eye(3) * h, -np.eye(3) * h])
    probe = (nodes[:, None, :] + shifts[None]).reshape(-1, 3)

    def norm(v, q):
        v = np.abs(v)
        if q == np.inf:
            return float(v.max())
        return float(grid.integrate(v**q) ** (1.0 / q))

    fvals = [f(nodes) for f in functions]
    live = [i for i, v in enumerate(fvals) if np.any(v != 0.0)]
    skipped = len(functions) - len(live)
    kv = apply_K_many(kernel, [functions[i] for i in live], quad, probe).reshape(len(live), len(nodes), 6)
    gnorm = np.linalg.norm((kv[..., :3] - kv[..., 3:]) / (2.0 * h), axis=-1)
    per_p, ok, sup = {}, True, 0.0
    for q in ps:
        ratios = np.array([norm(g, q) / norm(fvals[i], q) for g, i in zip(gnorm, live)])
        med = float(np.median(ratios)) if len(ratios) else 0.0
        good = bool(len(ratios) == 0 or (np.all(np.isfinite(ratios)) and ratios.max() <= 10.0 * med))
        ok &= good
        top = float(ratios.max()) if len(ratios) else 0.0
        sup = max(sup, top)
        per_p["inf" if q == np.inf else str(q)] = {"ratios": ratios.tolist(), "median": med, "sup": top,
                                                   "min": float(ratios.min()) if len(ratios) else 0.0,
                                                   "passed": good}
    details = {"per_p": per_p, "skipped": skipped}
    if len(ps) == 1:
        details.update(next(iter(per_p.values())))
    return CheckReport(
        check_name="grad_K_norm",
        params={"p": list(per_p), "h": h, "grid": list(grid.shape), "quad": quad.size},
        samples=len(live),
        empirical_sup=sup,
        passed=ok,
        seed=seed,
        paper_ref="velocity smoothing of K: ||grad K(f)||_p <= C_p ||f||_p",
        details=details,
    )


def nu_exactness_check(beta0: float = 1.0, speeds=(0.0, 0.5, 1.0, 3.0, 10.0, 40.0)):
    """nu against its two closed forms: beta0 pi^(3/2) for gamma = 0, 2 pi beta0 at the origin for gamma = 1."""
    from .reports import CheckReport

    k0 = make_kernel(gamma=0.0, beta0=beta0)
    err0 = max(abs(collision_frequency(k0, s) / (beta0 * PI32) - 1.0) for s in speeds)
    k1 = make_kernel(gamma=1.0, beta0=beta0)
    err1 = abs(collision_frequency(k1, 0.0) / (2.0 * math.pi * beta0) - 1.0)
    return CheckReport("nu_exactness", {"beta0": beta0, "speeds": list(speeds)}, samples=len(speeds) + 1,
                       empirical_sup=max(err0, err1), passed=bool(err0 <= 1e-10 and err1 <= 1e-8),
                       paper_ref="collision frequency nu(|z|) = beta0 int exp(-|eta|^2) |eta - z|^gamma d eta",
                       details={"gamma0_rel_error": err0, "gamma1_origin_rel_error": err1})


def frequency_bounds_check(kernel, samples: int = 200, s_max: float = 50.0, seed: int = 0):
    """Re-assert nu0 (1+s)^gamma <= nu(s) <= nu1 (1+s)^gamma at fresh random speeds."""
    from .reports import CheckReport

    s = np.random.default_rng(seed).uniform(0.0, s_max, samples)
    m = _model_of(kernel)
    r = np.array([_nu_exact(m, x) for x in s]) / (1.0 + s) ** m.gamma
    viol = int(np.sum((r < kernel.nu_lower) | (r > kernel.nu_upper)))
    return CheckReport("frequency_bounds", {"gamma": m.gamma, "s_max": s_max, "nu0": kernel.nu_lower,
                                            "nu1": kernel.nu_upper},
                       samples=samples, violations=viol, passed=viol == 0, seed=seed,
                       paper_ref="two-sided bound nu0 (1+|z|)^gamma <= nu(|z|) <= nu1 (1+|z|)^gamma",
                       details={"ratio_min": float(r.min()), "ratio_max": float(r.max())})


def caflisch_decay_check(epsilon: float = 1.0, a1: float = 0.25, a2: float = 0.25, speeds=None,
                         direction=(0.0, 0.0, 1.0), noise: float = 0.01, spread: float = 3.0):
    """(1 + |eta|) I(eta) over integer speeds: bounded and non-increasing from |eta| = 5 on."""
    from .reports import CheckReport

    speeds = np.arange(0, 21) if speeds is None else np.asarray(speeds, dtype=float)
    e = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    w = np.array([(1.0 + s) * caflisch_integral(s * e, epsilon, a1, a2) for s in speeds])
    tail = w[speeds >= 5]
    ratio = float(tail.max() / tail.min())
    monotone = bool(np.all(tail[1:] <= tail[:-1] * (1.0 + noise)))
    return CheckReport("caflisch_decay", {"epsilon": epsilon, "a1": a1, "a2": a2}, samples=len(speeds),
                       empirical_sup=float(w.max()), passed=bool(ratio <= spread and monotone),
                       paper_ref="(1 + |eta|) I(eta) bounded uniformly in eta",
                       details={"speeds": speeds, "weighted": w, "tail_max_over_min": ratio,
                                "tail_non_increasing": monotone, "argmax_speed": float(speeds[np.argmax(w)])})
