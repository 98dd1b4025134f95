import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbregularity.errors import DomainError, SingularityError
from lbregularity.kernel import (CenteredQuadrature, PotentialModel, VelocityQuadrature, apply_K,
                                 caflisch_decay_check, caflisch_integral, collision_frequency,
                                 frequency_bounds_check, grad_K_norm_check, kernel_value, make_kernel,
                                 nu_derivative_bound, random_velocity_functions)


def mc_nu(gamma, speed, n=10_000_000, beta0=1.0, seed=7):
    """beta0 pi^(3/2) E|eta - zeta|^gamma with eta ~ N(0, I/2); returns (mean, standard error)."""
    rng = np.random.default_rng(seed)
    z = np.array([0.0, 0.0, speed])
    acc, acc2, done = 0.0, 0.0, 0
    while done < n:
        m = min(1_000_000, n - done)
        v = np.linalg.norm(rng.normal(scale=math.sqrt(0.5), size=(m, 3)) - z, axis=1) ** gamma
        acc += v.sum()
        acc2 += (v * v).sum()
        done += m
    mean = acc / n
    sd = math.sqrt(acc2 / n - mean**2)
    c = beta0 * math.pi**1.5
    return c * mean, c * sd / math.sqrt(n)



@functools.lru_cache(maxsize=None)
def _default_kernel():
    return make_kernel()


class TestCollisionFrequency:
    @pytest.mark.parametrize("speed", [0.0, 0.3, 2.0, 7.5, 49.0])
    def test_gamma_zero_is_gaussian_mass(self, speed):
        k = make_kernel(gamma=0.0, beta0=1.7)
        assert collision_frequency(k, speed) == pytest.approx(1.7 * math.pi**1.5, rel=1e-10)

    def test_hard_sphere_at_rest(self):
        k = make_kernel(gamma=1.0, beta0=0.8)
        assert collision_frequency(k, 0.0) == pytest.approx(2.0 * math.pi * 0.8, rel=1e-8)

    def test_monte_carlo(self):
        k = make_kernel(gamma=0.5)
        mean, se = mc_nu(0.5, 3.0)
        assert abs(collision_frequency(k, 3.0) - mean) < 3.0 * se
        s = 3.0
        assert k.nu_lower * (1 + s) ** 0.5 <= collision_frequency(k, s) <= k.nu_upper * (1 + s) ** 0.5

    def test_spline_matches_exact(self, kernel):
        s = np.array([0.0, 0.01, 1.3, 12.0, 60.0, 95.0])
        exact = np.array([collision_frequency(kernel, x) for x in s])
        np.testing.assert_allclose(kernel.nu(s), exact, rtol=1e-8)

    def test_small_speed_branch_is_continuous(self, kernel):
        assert collision_frequency(kernel, 0.999e-6) == pytest.approx(collision_frequency(kernel, 1.001e-6),
                                                                     rel=1e-10)

    @pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
    def test_rejects_bad_speed(self, kernel, bad):
        with pytest.raises(DomainError):
            collision_frequency(kernel, bad)

    def test_bounds_on_fresh_speeds(self, kernel):
        rep = frequency_bounds_check(kernel, samples=200, seed=3)
        assert rep.passed and rep.violations == 0


class TestModel:
    @pytest.mark.parametrize("kw", [{"gamma": -0.1}, {"gamma": 1.2}, {"delta": 0.0}, {"delta": 1.0},
                                    {"beta0": 0.0}, {"c1": -1.0}, {"c2": 0.0}])
    def test_invalid_parameters(self, kw):
        with pytest.raises(DomainError):
            PotentialModel(**kw)


class TestKernelValue:
    def test_hand_value(self):
        k = make_kernel(gamma=0.0, delta=0.5, c1=1.0)
        z, w = np.array([0.5, 0.0, 0.0]), np.array([-0.5, 0.0, 0.0])
        assert kernel_value(k, z, w) == pytest.approx(0.5 * math.exp(-1.0 / 8.0), rel=1e-14)

    def test_independent_formula(self, rng, kernel):
        z, w = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        m = kernel.model
        out = []
        for a, b in zip(z, w):
            d = math.dist(a, b)
            na, nb = math.hypot(*a), math.hypot(*b)
            out.append(m.c1 / d / (1 + na + nb) ** (1 - m.gamma)
                       * math.exp(-(1 - m.delta) / 4 * (d * d + ((na * na - nb * nb) / d) ** 2)))
        np.testing.assert_allclose(kernel_value(kernel, z, w), out, rtol=1e-13)

    def test_diagonal_is_singular(self, kernel):
        with pytest.raises(SingularityError):
            kernel_value(kernel, [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])

    def test_decays_past_peak(self, kernel):
        z = np.array([0.3, 0.0, 0.0])
        far = np.array([[0.0, 0.0, r] for r in np.linspace(3.0, 15.0, 30)])
        v = kernel_value(kernel, z, far)
        assert np.all(np.diff(v) < 0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-20, 20), min_size=6, max_size=6))
    def test_symmetry(self, xs):
        z, w = np.array(xs[:3]), np.array(xs[3:])
        if np.linalg.norm(z - w) < 1e-6:
            return
        k = _default_kernel()
        assert kernel_value(k, z, w) == kernel_value(k, w, z)


class TestApplyK:
    def test_zero(self, kernel):
        assert apply_K(kernel, lambda w: np.zeros(w.shape[:-1]), CenteredQuadrature(), [0.2, 0.1, 0.0]) == 0.0

    def test_constant_refinement(self):
        k = make_kernel(gamma=0.0)
        z = np.array([[0.0, 0.0, 0.0], [1.0, 0.5, -0.3], [4.0, 0.0, 1.0]])
        one = lambda w: np.ones(w.shape[:-1])
        a = apply_K(k, one, CenteredQuadrature(16, 16, 16), z)
        b = apply_K(k, one, CenteredQuadrature(32, 32, 32), z)
        np.testing.assert_allclose(a, b, rtol=2e-4)
        assert np.all(np.isfinite(a)) and np.all(a > 0)

    def test_refinement_on_random_functions(self, kernel, rng):
        fs = random_velocity_functions(rng, 3)
        z = rng.normal(size=(6, 3)) * 2
        for f in fs:
            a = apply_K(kernel, f, CenteredQuadrature(24, 24, 24), z)
            b = apply_K(kernel, f, CenteredQuadrature(48, 48, 48), z)
            assert np.max(np.abs(a - b)) <= 1e-4 * max(np.max(np.abs(b)), 1e-3)

    @pytest.mark.slow
    def test_self_adjoint(self, kernel):
        outer = VelocityQuadrature(8.0, 24, 16, 24)
        quad = CenteredQuadrature(24, 24, 24)
        g, h = random_velocity_functions(np.random.default_rng(5), 2)
        nodes, w = outer.nodes, outer.flat_weights
        kg = apply_K(kernel, g, quad, nodes)
        kh = apply_K(kernel, h, quad, nodes)
        lhs = np.sum(w * kg * h(nodes))
        rhs = np.sum(w * g(nodes) * kh)
        ng = math.sqrt(np.sum(w * g(nodes) ** 2))
        nh = math.sqrt(np.sum(w * h(nodes) ** 2))
        assert abs(lhs - rhs) <= 1e-6 * ng * nh

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-5, 5), st.floats(-3, 3), st.floats(-3, 3))
    def test_homogeneity(self, c, a, b):
        k = _default_kernel()
        f = lambda w: np.exp(-np.sum(w * w, axis=-1)) * np.cos(w[..., 0])
        q = CenteredQuadrature(8, 8, 8)
        z = np.array([a, b, 0.5])
        assert apply_K(k, lambda w: c * f(w), q, z) == pytest.approx(c * apply_K(k, f, q, z), rel=1e-12, abs=1e-300)


class TestQuadrature:
    def test_gaussian_mass(self):
        # the default grid is coarse in speed; a doubled radial rule is near exact
        q = VelocityQuadrature()
        assert q.integrate(np.exp(-q.speeds**2)) == pytest.approx(math.pi**1.5, rel=1e-2)
        assert np.all(q.flat_weights >= 0)
        q = VelocityQuadrature(12.0, 32, 4, 4)
        assert q.integrate(np.exp(-q.speeds**2)) == pytest.approx(math.pi**1.5, rel=1e-8)

    def test_ball_volume(self):
        q = VelocityQuadrature(3.0, 8, 4, 4)
        assert q.integrate(np.ones(q.size)) == pytest.approx(4.0 / 3.0 * math.pi * 27.0, rel=1e-12)

    def test_truncation_warning(self):
        from lbregularity.errors import TruncationWarning
        with pytest.warns(TruncationWarning):
            apply_K(make_kernel(), lambda w: np.ones(w.shape[:-1]), CenteredQuadrature(r_max=3.0), [0.0, 0.0, 1.0])


class TestCaflisch:
    @pytest.mark.parametrize("a2", [0.1, 0.25, 3.0])
    def test_origin(self, a2):
        a1 = 0.25
        exact = 4.0 * math.pi * 0.5 * math.sqrt(math.pi / (a1 + a2))
        assert caflisch_integral(np.zeros(3), 1.0, a1, a2) == pytest.approx(exact, rel=1e-8)

    def test_decay(self):
        rep = caflisch_decay_check()
        assert rep.passed
        assert rep.details["argmax_speed"] <= 5

    def test_monotone_dense(self):
        s = np.linspace(2.0, 20.0, 73)
        v = [caflisch_integral(np.array([0.0, x, 0.0]), 1.0, 0.25, 0.25) for x in s]
        assert np.all(np.diff(v) < 0)

    @pytest.mark.parametrize("args", [(0.0, 0.25, 0.25), (1.0, -1.0, 0.25), (1.0, 0.25, 0.0)])
    def test_parameters(self, args):
        with pytest.raises(DomainError):
            caflisch_integral(np.zeros(3), *args)


class TestNuDerivative:
    def test_constant_nu(self):
        k = make_kernel(gamma=0.0)
        assert all(abs(nu_derivative_bound(k, s)) < 1e-8 for s in (0.0, 1.0, 10.0))

    def test_hard_sphere_bounded(self):
        k = make_kernel(gamma=1.0)
        d = np.array([abs(nu_derivative_bound(k, s)) for s in np.linspace(0.0, 20.0, 41)])
        assert np.all(np.isfinite(d)) and d.max() <= 2.0 * d[-10:].max()

    def test_monte_carlo(self):
        """d/ds E|s e - eta|^g = g E[|s e - eta|^(g-2) (s e - eta) . e]."""
        rng = np.random.default_rng(11)
        s, g, n = 5.0, 0.5, 4_000_000
        w = np.array([0.0, 0.0, s]) - rng.normal(scale=math.sqrt(0.5), size=(n, 3))
        r = np.linalg.norm(w, axis=1)
        v = g * r ** (g - 2.0) * w[:, 2] * math.pi**1.5
        assert abs(nu_derivative_bound(make_kernel(gamma=g), s) - v.mean()) < 3.0 * v.std() / math.sqrt(n)


class TestGradK:
    def test_zero_is_skipped(self, kernel):
        rep = grad_K_norm_check(kernel, CenteredQuadrature(8, 8, 8), np.inf,
                                functions=[lambda w: np.zeros(w.shape[:-1])])
        assert rep.details["skipped"] == 1 and rep.passed

    def test_constant_refines(self, kernel):
        one = [lambda w: np.ones(w.shape[:-1])]
        a = grad_K_norm_check(kernel, CenteredQuadrature(12, 12, 12), "inf", functions=one)
        b = grad_K_norm_check(kernel, CenteredQuadrature(24, 24, 24), "inf", functions=one)
        assert np.isfinite(a.empirical_sup)
        assert abs(a.empirical_sup - b.empirical_sup) <= 0.2 * b.empirical_sup

    def test_bad_p(self, kernel):
        with pytest.raises(DomainError):
            grad_K_norm_check(kernel, CenteredQuadrature(), 3)
