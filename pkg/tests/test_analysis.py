import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbregularity import analysis as A
from lbregularity.errors import DomainError
from lbregularity.geometry import Ball
from lbregularity.kernel import VelocityQuadrature, make_kernel
from lbregularity.transport import BoundaryDatum, DistributionField


class TestNorms:
    def test_zero(self, kernel):
        assert A.lstar_norm_velocity(lambda w: np.zeros(len(w)), kernel, VelocityQuadrature()) == 0.0

    def test_constant_gamma_zero(self):
        k = make_kernel(gamma=0.0, beta0=1.3)
        q = VelocityQuadrature(5.0, 10, 6, 8)
        exact = math.sqrt(1.3 * math.pi**1.5 * 4.0 / 3.0 * math.pi * 125.0)
        assert A.lstar_norm_velocity(lambda w: np.ones(len(w)), k, q) == pytest.approx(exact, rel=1e-12)
        assert A.lstar_norm_velocity(lambda w: np.ones(len(w)), k, q.refined()) == pytest.approx(exact, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.one_of(st.just(0.0), st.floats(1e-100, 10), st.floats(-10, -1e-100)), st.integers(0, 1000))
    def test_homogeneity_and_triangle(self, kernel, c, seed):
        # |c| is kept clear of the range where c**2 underflows
        k = kernel
        q = VelocityQuadrature(6.0, 6, 4, 4)
        rng = np.random.default_rng(seed)
        g, h = rng.normal(size=q.size), rng.normal(size=q.size)
        ng, nh = A.lstar_norm_velocity(g, k, q), A.lstar_norm_velocity(h, k, q)
        assert A.lstar_norm_velocity(c * g, k, q) == pytest.approx(abs(c) * ng, rel=1e-13, abs=1e-300)
        assert A.lstar_norm_velocity(g + h, k, q) <= ng + nh + 1e-12

    def test_radial_matches_grid(self, kernel):
        q = VelocityQuadrature(12.0, 40, 8, 8)
        a = A.lstar_norm_velocity(lambda w: np.exp(-np.sum(w * w, axis=-1)), kernel, q)
        b = A.lstar_norm_radial(lambda r: math.exp(-r * r), kernel)
        assert a == pytest.approx(b, rel=1e-8)

    def test_field_norms(self, solved):
        f, _ = solved
        n = A.field_norms(f)
        assert min(n.to_dict().values()) >= 0
        v = f.grid.velocity
        cap = math.sqrt(float(v.integrate(f.kernel.nu(v.speeds))))
        assert n.linf_x_lstar_zeta <= n.linf_phase * cap
        assert n.lstar_zeta <= n.linf_x_lstar_zeta + 1e-12


class TestHolder:
    def test_constant_values(self, rng):
        x, z, y, xi = (rng.normal(size=(50, 3)) for _ in range(4))
        q, wq, _ = A._weighted_holder(np.full(50, 1.7), np.full(50, 1.7), x, z, y, xi, np.full(50, 0.2), 0.4, 3)
        assert np.all(q == 0) and np.all(wq == 0)

    def test_zero_field(self, coarse_setup, kernel):
        g = coarse_setup
        f = DistributionField(g, kernel, np.zeros(g.shape), BoundaryDatum("zero"))
        h = A.holder_modulus(f, 0.4, g.domain, 300)
        assert h.weighted_sup == 0.0 and np.all(h.quotients == 0)

    def test_pairs_respect_rules(self, rng):
        d = Ball()
        x, z, y, xi, d0 = A.sample_pairs(d, rng, 2000, 0.1)
        assert np.all(d0 >= 0.1)
        assert np.all(d._distance(x) >= 0.1) and np.all(d._distance(y) >= 0.1)
        sep = np.sqrt(np.sum((x - y) ** 2, 1) + np.sum((z - xi) ** 2, 1))
        assert np.all(sep > 0)

    def test_degenerate_pairs_excluded(self):
        x = np.zeros((3, 3))
        q, wq, dist = A._weighted_holder(np.ones(3), np.ones(3) * 2, x, x, x, x, np.ones(3), 0.4, 3)
        assert np.all(q == 0)

    @pytest.mark.parametrize("sigma,d0", [(0.5, 0.1), (0.0, 0.1), (0.4, 0.0)])
    def test_preconditions(self, solved, sigma, d0):
        with pytest.raises(DomainError):
            A.holder_modulus(solved[0], sigma, Ball(), 10, d0)

    def test_parallel_pairs(self, kernel):
        rep = A._parallel_probe(BoundaryDatum(), kernel, Ball(), np.random.default_rng(0), 300, 0.1)
        assert rep["max_deviation"] < 1e-14 and rep["exit_time_gap"] < 1e-12


class TestMixingAndVelocity:
    def test_zero_field(self, coarse_setup, kernel):
        f = DistributionField(coarse_setup, kernel, np.zeros(coarse_setup.shape))
        rep = A.mixing_holder_check(f, kernel, coarse_setup.domain, np.array([0.5, 0.2, -0.1]))
        assert rep.passed and np.all(rep.details["dG"] == 0)

    def test_margin(self, solved, kernel):
        with pytest.raises(DomainError):
            A.mixing_holder_check(solved[0], kernel, Ball(), np.ones(3), base=np.array([0.8, 0, 0]),
                                  direction=np.array([1.0, 0, 0]))

    def test_identical_velocities_excluded(self, solved, kernel):
        z = np.array([0.3, 0.1, 0.2])
        rep = A.g_velocity_lipschitz_check(solved[0], kernel, Ball(), zeta_pairs=[(z, z), (z, z + 0.1)])
        assert rep.samples == 1


class TestDecay:
    def test_zero_skipped(self, kernel):
        fam = [("zero", lambda w: np.zeros(w.shape[:-1]), lambda r: 0.0)]
        rep = A.k_decay_check(kernel, f_family=fam, speeds=np.arange(0.0, 21.0, 5.0))
        assert rep.details["skipped"] == 1

    def test_gaussian_peak_at_small_speed(self):
        k = make_kernel(gamma=0.0)
        fam = A.default_decay_family(0.0)[:1]
        rep = A.k_decay_check(k, f_family=fam)
        assert rep.passed
        assert rep.details["family"]["gaussian"]["argmax_speed"] <= 3.0


class TestGain:
    def test_zero(self, coarse_setup, kernel):
        f = DistributionField(coarse_setup, kernel, np.zeros(coarse_setup.shape))
        rep = A.convolution_gain_check(f, kernel, coarse_setup.domain, probes=3)
        assert np.all(rep.details["left"] == 0) and np.all(rep.details["right"] == 0)

    def test_alpha_range(self, solved, kernel):
        with pytest.raises(DomainError):
            A.convolution_gain_check(solved[0], kernel, Ball(), alpha=1.0)

    def test_riesz_constant(self, coarse_setup):
        """int_B |x|^-(2-a) dy at the centre of the unit ball is 4 pi / (1 + a)."""
        g = coarse_setup
        v = A.riesz_potential(np.ones(g.shape[0]), g, np.zeros(3), 0.5)
        assert v == pytest.approx(4.0 * math.pi / 1.5, rel=1e-12)


def test_embedding_constant(kernel):
    s = 0.4
    assert A.embedding_constant(kernel, s) == pytest.approx(2.0 * (3.0 / (4.0 * math.pi * kernel.nu_lower))
                                                            ** (s / (3.0 + 2.0 * s)))
