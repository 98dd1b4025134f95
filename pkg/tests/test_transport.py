import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lbregularity.errors import DomainError
from lbregularity.geometry import Ball
from lbregularity.kernel import make_kernel
from lbregularity.transport import (BoundaryDatum, DistributionField, PathRule, PhaseGrid, boundary_term,
                                    decomposition_residual, dual_g_check, evaluate_G, evaluate_I, evaluate_II,
                                    evaluate_III, g_centered, g_polar, analytic_source, incoming_points,
                                    load_field, phase_terms, picard_solve, pure_transport_check, save_field)
from lbregularity.kernel import CenteredQuadrature


class TestBoundaryDatum:
    def test_kinds(self):
        X, e = np.zeros((2, 3)), np.ones((2, 3))
        assert np.all(BoundaryDatum("zero").evaluate(X, e) == 0)
        assert np.all(BoundaryDatum("constant", c0=2.5).evaluate(X, e) == 2.5)
        with pytest.raises(DomainError):
            BoundaryDatum("wavy")

    def test_holder_constant_dominates(self, rng):
        """sup |f_b| and the sigma-Hoelder quotient over random close pairs stay below M."""
        b = BoundaryDatum()
        X, E = rng.normal(size=(20000, 3)), rng.normal(size=(20000, 3))
        d = 10.0 ** rng.uniform(-6, 0, 20000)
        dY = rng.normal(size=(20000, 6))
        dY *= (d / np.linalg.norm(dY, axis=1))[:, None]
        Y, F = X + dY[:, :3], E + dY[:, 3:]
        q = np.abs(b.evaluate(X, E) - b.evaluate(Y, F)) / d**b.sigma
        assert np.abs(b.evaluate(X, E)).max() <= b.holder_M
        assert q.max() <= b.holder_M

    def test_envelope(self, rng):
        b = BoundaryDatum()
        X, E = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3)) * 3
        assert np.all(np.abs(b.evaluate(X, E)) <= b.envelope(np.linalg.norm(E, axis=1)) + 1e-15)

    def test_incoming(self, rng):
        d = Ball()
        X, E = incoming_points(d, rng, 500)
        assert np.all(np.abs(d.level(X)) < 1e-12)
        assert np.all(np.sum(d.normal(X) * E, axis=1) < 0)


class TestPathRule:
    # for large nu*tau the substitution leaves a log singularity at the far end,
    # so the rule converges algebraically there
    @pytest.mark.parametrize("nu,tau,rel", [(0.5, 1.0, 1e-12), (5.0, 2.0, 1e-3), (20.0, 0.3, 1e-6)])
    def test_against_quad(self, nu, tau, rel):
        g = lambda s: np.cos(1.3 * s) + s**2
        ref = integrate.quad(lambda t: math.exp(-nu * t) * g(t), 0.0, tau, epsabs=1e-14)[0]
        errs = []
        for order in (3, 8, 16):
            s, w = PathRule(order).nodes(np.array(tau), np.array(nu))
            errs.append(abs(float(np.sum(w * g(s))) / ref - 1.0))
        assert errs[1] <= rel
        assert errs[2] <= errs[1] <= errs[0] or errs[0] <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 30.0), st.floats(0.01, 5.0))
    def test_nodes_inside_and_weights_exact(self, nu, tau):
        s, w = PathRule().nodes(np.array(tau), np.array(nu))
        assert np.all((s >= 0) & (s <= tau * (1 + 1e-12)))
        assert float(np.sum(w)) == pytest.approx(-math.expm1(-nu * tau) / nu, rel=1e-12)


class TestGrid:
    def test_constant_interpolation(self, coarse_setup, rng):
        g = coarse_setup
        pts = g.domain.sample_interior(rng, 200)
        np.testing.assert_allclose(g.interpolate(np.full(g.shape[0], 3.0), pts), 3.0, rtol=1e-13)

    def test_reproduces_nodes(self, coarse_setup):
        g = coarse_setup
        v = np.sin(g.lattice @ np.array([1.0, 2.0, -0.5]))
        idx = g.interior_nodes
        np.testing.assert_allclose(g.interpolate(v, g.lattice[idx]), v[idx], atol=1e-12)

    def test_volume(self):
        g = PhaseGrid(Ball())
        assert float(g.weights.sum()) == pytest.approx(4.0 / 3.0 * math.pi, rel=0.01)

    def test_cartesian(self):
        g = PhaseGrid.cartesian(Ball(), 7)
        assert g.shape[0] == 7**3


class TestSolver:
    def test_pure_transport(self, coarse_setup, kernel):
        rep = pure_transport_check(BoundaryDatum(), kernel, coarse_setup.domain, coarse_setup)
        assert rep.passed and rep.empirical_sup <= 1e-10

    def test_zero_data(self, coarse_setup, kernel):
        f, rep = picard_solve(BoundaryDatum("zero"), kernel, coarse_setup.domain, coarse_setup)
        assert rep.status == "converged" and np.all(f.values == 0)

    def test_default_converges(self, solved):
        f, rep = solved
        assert rep.status == "converged"
        assert rep.contraction < 1.0
        assert all(r < 1.0 for r in rep.ratios)
        assert rep.residual < 1e-7

    def test_bad_tol(self, coarse_setup, kernel):
        with pytest.raises(DomainError):
            picard_solve(BoundaryDatum(), kernel, coarse_setup.domain, coarse_setup, tol=0.0)

    def test_field_validation(self, coarse_setup, kernel):
        with pytest.raises(DomainError):
            DistributionField(coarse_setup, kernel, np.zeros((3, 3)))
        bad = np.zeros(coarse_setup.shape)
        bad[0, 0] = np.nan
        with pytest.raises(DomainError):
            DistributionField(coarse_setup, kernel, bad)

    def test_evaluate_reproduces_nodes(self, solved, rng):
        f, _ = solved
        g = f.grid
        i = rng.choice(g.interior_nodes, 10)
        j = rng.integers(0, g.velocity.size, 10)
        got = f.evaluate(g.lattice[i], g.velocity.nodes[j])
        np.testing.assert_allclose(got, f.values[i, j], atol=1e-9)

    def test_decomposition(self, solved):
        f, _ = solved
        rep = decomposition_residual(f, n=20, seed=0)
        assert rep.passed, rep.empirical_sup

    def test_off_grid_decomposition(self, solved, kernel, ball):
        f, _ = solved
        x, z = np.array([0.2, -0.1, 0.3]), np.array([0.7, 0.4, -0.9])
        total = (evaluate_I(f.bdry, kernel, ball, x, z) + evaluate_II(f.bdry, kernel, ball, f.grid, x, z)
                 + evaluate_III(f, kernel, ball, x, z))
        assert total == pytest.approx(float(f.evaluate(x, z)[0]), abs=1e-3)

    def test_I_closed_form(self, kernel, ball):
        b = BoundaryDatum()
        x, z = np.array([0.1, 0.2, 0.0]), np.array([0.0, 0.0, 1.5])
        tau = (0.0 + math.sqrt(1.0 - 0.05)) / 1.5
        P = x - tau * z
        expect = b.evaluate(P, z) * math.exp(-float(kernel.nu(1.5)) * tau)
        assert evaluate_I(b, kernel, ball, x, z) == pytest.approx(expect, rel=1e-12)

    def test_G_of_zero_field(self, coarse_setup, kernel):
        f = DistributionField(coarse_setup, kernel, np.zeros(coarse_setup.shape))
        assert evaluate_G(f, kernel, coarse_setup.domain, [0.1, 0, 0], [1.0, 0, 0]) == 0.0

    def test_phase_terms_consistent(self, solved, rng):
        f, _ = solved
        x = f.grid.domain.sample_interior(rng, 5, min_distance=0.1)
        z = rng.normal(size=(5, 3))
        T = phase_terms(f, x, z)
        np.testing.assert_allclose(T["I"], boundary_term(f.bdry, f.kernel, f.grid.domain, x, z), rtol=1e-14)


class TestDualG:
    def test_forms_agree(self, kernel, ball):
        rep = dual_g_check(kernel, ball, probes=3, seed=1)
        assert rep.passed, rep.empirical_sup

    def test_polar_converges(self, kernel, ball):
        x, z = np.array([0.2, 0.1, -0.3]), np.array([0.5, -1.0, 0.2])
        a = g_polar(analytic_source, kernel, ball, x, z, n_rv=24, n_phi=24)
        b = g_polar(analytic_source, kernel, ball, x, z, n_rv=40, n_phi=40)
        assert a == pytest.approx(b, rel=1e-6)

    def test_centered_converges(self, kernel, ball):
        x, z = np.array([0.2, 0.1, -0.3]), np.array([0.5, -1.0, 0.2])
        a = g_centered(analytic_source, kernel, ball, x, z, CenteredQuadrature(24, 24, 24))
        b = g_centered(analytic_source, kernel, ball, x, z, CenteredQuadrature(40, 40, 40))
        assert a == pytest.approx(b, rel=1e-4)


def test_checkpoint_roundtrip(solved, tmp_path):
    f, _ = solved
    p = save_field(f, tmp_path / "f.csv")
    header, rows = load_field(p)
    assert rows.shape == (f.values.size, 7)
    np.testing.assert_array_equal(rows[:, 6], f.values.reshape(-1))
    assert header["grid"]["spatial_shape"] == list(f.grid.spatial_shape)
