import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzwall.errors import DegenerateAlpha
from boltzwall.geometry import Ellipsoid, UnitBall
from boltzwall.kinetic_weight import ChiCutoff, KineticWeight
from boltzwall.verify import chi_cutoff_check, interior_phase_samples


class TestChiCutoff:
    chi = ChiCutoff()

    @pytest.mark.parametrize("s", [0.0, 0.1, 0.25, 0.5])
    def test_identity_below_lower(self, s):
        assert float(self.chi(s)) == pytest.approx(s)
        assert float(self.chi.derivative(s)) == 1.0

    @pytest.mark.parametrize("s", [2.0, 2.5, 10.0])
    def test_saturates_above_upper(self, s):
        assert float(self.chi(s)) == pytest.approx(1.0, abs=1e-12)
        assert float(self.chi.derivative(s)) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=0.0, max_value=3.0), st.floats(min_value=0.0, max_value=3.0))
    def test_monotone_and_below_identity(self, a, b):
        lo, hi = sorted((a, b))
        assert float(self.chi(lo)) <= float(self.chi(hi)) + 1e-14
        assert float(self.chi(hi)) <= hi + 1e-14
        assert 0.0 <= float(self.chi.derivative(hi)) <= 1.0

    def test_derivative_matches_values(self):
        s = np.linspace(0.6, 1.9, 27)
        step = 1e-6
        numeric = (self.chi(s + step) - self.chi(s - step)) / (2 * step)
        assert np.allclose(numeric, self.chi.derivative(s), atol=1e-8)
        numeric = (self.chi.derivative(s + step) - self.chi.derivative(s - step)) / (2 * step)
        assert np.allclose(numeric, self.chi.second_derivative(s), atol=1e-6)

    def test_check_passes(self):
        check = chi_cutoff_check(2000)
        assert check.passed, check.details


class TestKineticWeight:
    def test_boundary_value_is_normal_velocity(self):
        """On the wall alpha_tilde is |v . grad xi|, twice |n.v| on the unit sphere"""
        weight = KineticWeight(UnitBall())
        x = np.array([0.0, 0.6, 0.8])
        v = np.array([0.3, -1.0, 0.5])
        assert float(weight.alpha_tilde(x, v)) == pytest.approx(2.0 * abs(x @ v))

    def test_ball_alpha_tilde_constant_along_rays(self):
        weight = KineticWeight(UnitBall())
        rng = np.random.default_rng(4)
        x, v = interior_phase_samples(UnitBall(), rng, 40, grazing_fraction=0.0)
        t_b = UnitBall().exit_times(x, v)
        s = 0.7 * t_b
        assert np.allclose(weight.alpha_tilde(x - s[:, None] * v, v), weight.alpha_tilde(x, v), rtol=1e-9)
        assert weight.velocity_lemma_constant(x, v, s, tilde=True) < 1e-8

    def test_boundary_equivalence_on_ball(self):
        weight = KineticWeight(UnitBall())
        ratio = weight.boundary_equivalence_ratio([0.2, 0.1, -0.3], [0.5, 0.4, 0.1])
        assert ratio == pytest.approx(0.5)

    def test_velocity_lemma_on_ellipsoid(self):
        domain = Ellipsoid((2.0, 1.0, 1.0))
        weight = KineticWeight(domain)
        rng = np.random.default_rng(8)
        x, v = interior_phase_samples(domain, rng, 60)
        t_b = domain.exit_times(x, v)
        constant = weight.velocity_lemma_constant(x, v, 0.5 * t_b)
        assert 0.0 < constant < 50.0

    def test_degenerate_alpha(self):
        weight = KineticWeight(UnitBall())
        with pytest.raises(DegenerateAlpha):
            weight.velocity_lemma_ratio([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0.5)

    def test_alpha_capped(self):
        weight = KineticWeight(UnitBall())
        value = float(weight.alpha([0.0, 0.0, 0.0], [5.0, 0.0, 0.0]))
        assert value == pytest.approx(1.0)

    def test_directional_derivative_vanishes_on_ball(self):
        weight = KineticWeight(UnitBall())
        x = np.array([[0.1, 0.2, 0.3]])
        v = np.array([[0.2, 0.1, 0.05]])
        assert abs(float(weight.directional_derivative(x, v)[0])) < 1e-6
