import math

import numpy as np
import pytest

from boltzwall.quadrature import (
    SphereRule,
    VelocityQuadrature,
    exponential_segment_rule,
    gauss_legendre,
    log_gauss_legendre,
    orthonormal_frame,
    relative_change,
)


def test_gauss_legendre_interval():
    x, w = gauss_legendre(5, 1.0, 3.0)
    assert np.all((x > 1.0) & (x < 3.0))
    assert float(w @ x**4) == pytest.approx((3.0**5 - 1.0) / 5.0)


def test_log_gauss_legendre_resolves_power_singularity():
    c, w = log_gauss_legendre(24, 1e-6, 1.0)
    assert float(w @ c**-0.5) == pytest.approx(2.0 * (1.0 - 1e-3), rel=1e-10)


@pytest.mark.parametrize("rate, length", [(0.5, 2.0), (25.0, 1.0), (3.0, 1e-4)])
def test_exponential_segment_rule(rate, length):
    s, w = exponential_segment_rule(4, rate, length)
    assert np.all((s >= 0) & (s <= length))
    assert float(w.sum()) == pytest.approx(-math.expm1(-rate * length) / rate, rel=1e-12)


def test_exponential_segment_rule_broadcasts():
    s, w = exponential_segment_rule(3, np.array([1.0, 2.0]), np.array([[0.5], [1.5]]))
    assert s.shape == (2, 2, 3)
    assert w.shape == (2, 2, 3)


@pytest.mark.parametrize("normal", [(0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.3, -0.4, 2.0)])
def test_orthonormal_frame(normal):
    frame = orthonormal_frame(normal)
    assert np.allclose(frame @ frame.T, np.eye(3))
    assert np.allclose(frame[2], np.asarray(normal) / np.linalg.norm(normal))
    assert np.linalg.det(frame) == pytest.approx(1.0)


def test_sphere_rule_moments():
    sphere = SphereRule.product(8, 16)
    assert len(sphere) == 128
    assert float(sphere.weights.sum()) == pytest.approx(4.0 * math.pi)
    assert float(sphere.weights @ sphere.nodes[:, 0] ** 2) == pytest.approx(4.0 * math.pi / 3.0)


class TestVelocityQuadrature:
    def test_spherical_volume(self):
        rule = VelocityQuadrature.spherical(4, 4, 8, 2.0)
        assert rule.integrate(np.ones(len(rule))) == pytest.approx(32.0 * math.pi / 3.0)

    def test_recentered(self):
        rule = VelocityQuadrature.spherical(4, 4, 8, 2.0)
        moved = rule.recentered([1.0, 0.0, 0.0])
        assert np.allclose(moved.offsets, rule.offsets)
        assert rule.integrate(np.ones(len(rule))) == pytest.approx(moved.integrate(np.ones(len(moved))))

    def test_half_space_orientation(self):
        normal = np.array([0.0, 0.6, 0.8])
        outgoing = VelocityQuadrature.half_space(normal, 4, 4, 8, 3.0)
        incoming = VelocityQuadrature.half_space(normal, 4, 4, 8, 3.0, outgoing=False)
        assert np.all(outgoing.nodes @ normal > 0)
        assert np.all(incoming.nodes @ normal < 0)
        assert outgoing.integrate(np.ones(len(outgoing))) == pytest.approx(2.0 * math.pi * 9.0)

    def test_cartesian(self):
        rule = VelocityQuadrature.cartesian(4, 2.0)
        assert len(rule) == 64
        assert rule.spacing == pytest.approx(1.0)
        assert rule.integrate(np.ones(64)) == pytest.approx(64.0)
        with pytest.raises(ValueError):
            _ = VelocityQuadrature.spherical(2, 2, 2, 1.0).spacing

    @pytest.mark.parametrize(
        "rule",
        [
            VelocityQuadrature.spherical(2, 3, 4, 1.0),
            VelocityQuadrature.half_space((0.0, 0.0, 1.0), 2, 3, 4, 1.0),
            VelocityQuadrature.cartesian(3, 1.0),
        ],
    )
    def test_refined(self, rule):
        refined = rule.refined()
        assert refined.kind == rule.kind
        assert len(refined) == 8 * len(rule)


@pytest.mark.parametrize("coarse, fine, expected", [(1.0, 1.1, 0.1 / 1.1), (0.5, 0.0, 0.5), (2.0, 2.0, 0.0)])
def test_relative_change(coarse, fine, expected):
    assert relative_change(coarse, fine) == pytest.approx(expected)
