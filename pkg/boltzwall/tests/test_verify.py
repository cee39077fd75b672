import math
import unittest

import numpy as np
import pytest
from ddt import data, ddt, unpack

from boltzwall.collision import KernelParams
from boltzwall.errors import ConfigError
from boltzwall.geometry import Ellipsoid, UnitBall
from boltzwall.kinetic_weight import KineticWeight
from boltzwall.models import Trend
from boltzwall.quadrature import VelocityQuadrature
from boltzwall.verify import (
    LEMMA_IDS,
    CROSS_CHECK_SCALE,
    _alpha_integral,
    _w1p_boundary_form,
    _w1p_direct,
    angular_factor,
    chord_identity_check,
    classify_trend,
    cov_identity_check,
    exit_oracle_check,
    hemisphere_rule,
    lemma_jobs,
    run_checks,
    second_derivative_obstruction,
    tb_bound_check,
    tube_log_bound,
    unit_velocity_ball,
    w1p_singular_integral,
)

from .factories import RunConfigFactory


@ddt
class ClassifyTrendTestCase(unittest.TestCase):
    @data(
        ([1.0, 1.01, 1.011], Trend.BOUNDED),
        ([1.0, 2.0, 4.0, 8.0], Trend.DIVERGING),
        ([1.0, 1.2, 1.4], Trend.BOUNDED),
        ([1.0, float("nan")], Trend.DIVERGING),
        ([5.0], Trend.BOUNDED),
        ([-1.0, -3.0, -9.0], Trend.DIVERGING),
    )
    @unpack
    def test_classify(self, values, expected):
        self.assertIs(classify_trend(values), expected)


def test_hemisphere_rule():
    directions, weights, cosines = hemisphere_rule(np.array([0.0, 0.0, 1.0]), 6, 12)
    assert float(weights.sum()) == pytest.approx(2.0 * math.pi)
    assert np.allclose(np.linalg.norm(directions, axis=1), 1.0)
    assert np.allclose(directions[:, 2], cosines)


def test_angular_factor():
    assert angular_factor(2.0) == pytest.approx(math.pi)
    assert angular_factor(2.5, 1e-4) > angular_factor(2.5, 1e-2)


class TestBallIdentities:
    ball = UnitBall()

    def test_chord_identity(self):
        check = chord_identity_check(self.ball, [[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]], n_polar=16, n_azimuthal=32)
        assert check.passed, check.details
        assert check.values[0] == pytest.approx(4.0 * math.pi / 3.0, rel=1e-10)

    def test_change_of_variables(self):
        check = cov_identity_check(
            self.ball,
            unit_velocity_ball,
            1.0,
            name="unit",
            surface_nodes=(4, 8),
            velocity_nodes=(4, 4, 8),
            volume_nodes=(4, 4, 8),
        )
        assert check.passed, check.details
        assert check.values[0] == pytest.approx((4.0 * math.pi / 3.0) ** 2, rel=1e-8)

    def test_exit_oracle(self):
        check = exit_oracle_check(self.ball, 30, rng=0)
        assert check.passed, check.details

    def test_tb_bound(self):
        check = tb_bound_check(self.ball, 80, rng=0)
        assert check.passed
        assert check.trend is Trend.BOUNDED
        assert check.values[-1] <= 2.0 + 1e-9


class TestAlphaIntegral:
    weight = KineticWeight(UnitBall())
    x = np.array([0.0, 0.0, 0.5])
    v = np.array([0.6, 0.0, 0.8])

    def integral(self, tube):
        rule = VelocityQuadrature.spherical(8, 6, 12, 12.0, center=self.v)
        return _alpha_integral(self.weight, KernelParams(), self.x, self.v, 2.0, 0.5, 4, rule, tube=tube)

    def test_tube_contribution_is_added(self):
        value, share, tube_part = self.integral(0.0)
        assert value > 0
        assert share == 0.0
        assert tube_part == 0.0
        value, share, tube_part = self.integral(math.inf)
        assert share == pytest.approx(1.0)
        assert tube_part > 0
        assert value == pytest.approx(tube_part)

    def test_tube_log_bound(self):
        assert float(tube_log_bound(UnitBall(), self.x, self.v)) == pytest.approx(1.0 + abs(math.log(0.75)))


class TestW1pIntegral:
    options = {"refinement_levels": 3, "surface_nodes": (4, 8), "angular_nodes": 16, "radial_nodes": 32}

    @pytest.mark.parametrize("p, trend", [(2.0, Trend.BOUNDED), (3.5, Trend.DIVERGING)])
    def test_trend(self, p, trend):
        check = w1p_singular_integral(UnitBall(), KernelParams(), p, **self.options)
        assert check.trend is trend
        assert check.passed, check.details
        assert check.lemma_id == f"w1p_singular_integral[p={p:g}]"

    def test_rejects_nonpositive_exponent(self):
        with pytest.raises(ValueError):
            w1p_singular_integral(UnitBall(), KernelParams(), 0.0, **self.options)

    @pytest.mark.parametrize("p", [2.0, 3.5])
    def test_volume_integral_matches_wall_form_on_ball(self, p):
        h = CROSS_CHECK_SCALE
        wall = _w1p_boundary_form(UnitBall(), p, h, (4, 8), 24)
        assert _w1p_direct(UnitBall(), p, h) == pytest.approx(wall, rel=0.02)
        if p == 2.0:
            # 4 pi * 2 pi * int_0^1 2 c^2 / (c^2 + h^2) dc
            assert wall == pytest.approx(16.0 * math.pi**2 * (1.0 - h * math.atan(1.0 / h)), rel=1e-8)

    def test_volume_integral_matches_wall_form_on_ellipsoid(self):
        domain = Ellipsoid((1.3, 1.0, 1.0))
        wall = _w1p_boundary_form(domain, 2.0, CROSS_CHECK_SCALE, (12, 24), 24)
        assert _w1p_direct(domain, 2.0, CROSS_CHECK_SCALE) == pytest.approx(wall, rel=0.03)


def test_obstruction_contrast_converges():
    check = second_derivative_obstruction(UnitBall(), KernelParams(), refinement_levels=8)
    assert check.details["contrasts_converge"]["vanishing_kernel"]
    assert len(check.values) == 8


class TestRunChecks:
    def test_unknown_lemma(self):
        with pytest.raises(ConfigError) as raised:
            run_checks(RunConfigFactory(), "no_such_lemma")
        assert raised.value.key == "verify.lemma"

    def test_every_job_has_an_id(self):
        jobs = lemma_jobs(RunConfigFactory())
        assert tuple(sorted(job[0] for job in jobs)) == LEMMA_IDS

    def test_single_lemma(self):
        checks = run_checks(RunConfigFactory(), "chi_cutoff")
        assert [check.lemma_id for check in checks] == ["chi_cutoff"]
        assert checks[0].passed
        assert checks[0].elapsed >= 0.0
