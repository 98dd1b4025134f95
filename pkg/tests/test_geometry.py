import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbregularity.errors import DomainError, NoTrajectoryError
from lbregularity.geometry import (Ball, Ellipsoid, LevelSetDomain, check_angle_continuity, check_exit_continuity,
                                   check_parallax_bound, check_segment_distance, distance_to_boundary,
                                   domain_from_config, exit_point, exit_time, parallax_angle)

ELL = Ellipsoid((0.1, -0.2, 0.3), (1.5, 1.0, 0.7))


def brute_distance(ell, x, n=400):
    """Minimum over a dense (theta, phi) surface grid, refined once around the best node."""
    def surf(th, ph):
        return ell.center + ell.semi_axes * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)],
                                                     axis=-1)
    th, ph = np.meshgrid(np.linspace(0, np.pi, n), np.linspace(0, 2 * np.pi, 2 * n), indexing="ij")
    d = np.linalg.norm(surf(th, ph) - x, axis=-1)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    h = np.pi / n
    th2, ph2 = np.meshgrid(np.linspace(th[i, j] - h, th[i, j] + h, 201),
                           np.linspace(ph[i, j] - h, ph[i, j] + h, 201), indexing="ij")
    return float(np.linalg.norm(surf(th2, ph2) - x, axis=-1).min())


class TestExit:
    def test_ball_center(self):
        assert exit_time(Ball(), [0, 0, 0], [0, 0, 2.0]) == pytest.approx(0.5, rel=1e-15)

    def test_exit_point_on_boundary(self, rng):
        for dom in (Ball((0.3, 0, 0), 2.0), ELL):
            x = dom.sample_interior(rng, 500)
            z = rng.normal(size=(500, 3))
            bp = exit_point(dom, x, z)
            assert np.max(np.abs(dom.level(bp.point))) < 1e-12
            t = exit_time(dom, x, z)
            np.testing.assert_allclose(x - bp.point, t[:, None] * z, atol=1e-12)
            assert np.all(t > 0)

    def test_incoming_condition(self, rng):
        x = ELL.sample_interior(rng, 2000)
        z = rng.normal(size=(2000, 3))
        bp = exit_point(ELL, x, z)
        assert np.all(np.sum(bp.normal * z, axis=1) < 1e-12)

    def test_zero_velocity(self):
        with pytest.raises(NoTrajectoryError):
            exit_time(Ball(), [0, 0, 0], [0, 0, 0])

    def test_outside(self):
        with pytest.raises(DomainError):
            exit_time(Ball(), [2, 0, 0], [1, 0, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3),
           st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.floats(0.01, 100.0))
    def test_scale_invariance(self, x, z, c):
        z = np.array(z)
        if np.linalg.norm(z) < 1e-3:
            return
        for dom in (Ball(), ELL):
            if not dom.contains(np.array(x)):
                continue
            t1 = exit_time(dom, x, z)
            assert exit_time(dom, x, c * z) == pytest.approx(t1 / c, rel=1e-12)

    def test_level_set_domain_matches_ellipsoid(self, rng):
        a = ELL.semi_axes
        gen = LevelSetDomain(lambda x: np.linalg.norm((x - ELL.center) / a, axis=-1) - 1.0,
                             lambda x: (x - ELL.center) / a**2, ELL.center, 1.5)
        x = ELL.sample_interior(rng, 20)
        z = rng.normal(size=(20, 3))
        np.testing.assert_allclose(gen._exit_time(x, z), ELL._exit_time(x, z), rtol=1e-9)


class TestDistance:
    def test_ball(self):
        assert distance_to_boundary(Ball(radius=2.0), [0.5, 0, 0]) == pytest.approx(1.5)

    def test_ellipsoid_brute_force(self, rng):
        for x in ELL.sample_interior(rng, 8):
            assert distance_to_boundary(ELL, x) == pytest.approx(brute_distance(ELL, x), abs=2e-6)

    def test_not_interior(self):
        with pytest.raises(DomainError):
            distance_to_boundary(Ball(), [1.0, 0.0, 0.0])


class TestParallax:
    def test_right_angle(self):
        assert parallax_angle([1, 0, 0], [0, 1, 0], [0, 0, 0]) == pytest.approx(math.pi / 2)

    def test_coincident(self):
        with pytest.raises(DomainError):
            parallax_angle([0, 0, 0], [1, 0, 0], [0, 0, 0])

    @pytest.mark.parametrize("a", [0.3, 0.5, 0.7])
    def test_bound(self, a):
        rep = check_parallax_bound(100_000, a, seed=1)
        assert rep.violations == 0 and rep.passed

    def test_edge_of_hypothesis(self):
        # d = 1, |y - x0| = 2 + 1e-9, observer on the perpendicular bisector side
        x0, x1 = np.zeros(3), np.array([1.0, 0.0, 0.0])
        y = np.array([0.0, 2.0 + 1e-9, 0.0])
        assert parallax_angle(x0, x1, y) < math.pi / 4

    def test_bad_a(self):
        with pytest.raises(DomainError):
            check_parallax_bound(10, 1.0)


class TestContinuityChecks:
    def test_parallel_pairs(self, rng):
        dom = Ball()
        x = dom.sample_interior(rng, 200, min_distance=0.2)
        z = rng.normal(size=(200, 3))
        t = rng.uniform(0.0, 0.5, 200) * dom._exit_time(x, z)
        y = x - t[:, None] * z
        Px, Py = exit_point(dom, x, z).point, exit_point(dom, y, z).point
        np.testing.assert_allclose(Px, Py, atol=1e-12)
        np.testing.assert_allclose(exit_time(dom, x, z) - exit_time(dom, y, z),
                                   np.linalg.norm(x - y, axis=1) / np.linalg.norm(z, axis=1), atol=1e-12)

    @pytest.mark.parametrize("dom", [Ball(), ELL])
    def test_exit(self, dom):
        rep = check_exit_continuity(dom, 10_000, seed=2)
        assert rep.passed and np.isfinite(rep.empirical_sup) and rep.stability_ratio <= 0.2

    @pytest.mark.parametrize("dom", [Ball(), ELL])
    def test_angle(self, dom):
        rep = check_angle_continuity(dom, 10_000, seed=2)
        assert rep.passed and np.isfinite(rep.empirical_sup)

    def test_chord_at_origin(self):
        # for x at the centre of the unit ball |P1 - P2| = 2 sin(theta/2) <= theta
        th = np.linspace(1e-3, 1.0, 50)
        z1 = np.array([0.0, 0.0, 1.0])
        z2 = np.stack([np.sin(th), 0 * th, np.cos(th)], axis=1)
        P1 = exit_point(Ball(), np.zeros(3), z1).point
        P2 = exit_point(Ball(), np.zeros((50, 3)), z2).point
        q = np.linalg.norm(P1 - P2, axis=1) / ((1 + 1.0) * th)
        assert q.max() <= 0.5

    @pytest.mark.parametrize("dom", [Ball(), ELL])
    def test_segment(self, dom):
        rep = check_segment_distance(dom, 10_000, seed=4)
        assert rep.violations == 0


def test_from_config():
    assert isinstance(domain_from_config({"shape": "ball", "radius": 2}), Ball)
    assert isinstance(domain_from_config({"shape": "ellipsoid", "semi_axes": [1, 2, 3]}), Ellipsoid)
    with pytest.raises(DomainError):
        domain_from_config({"shape": "torus"})
