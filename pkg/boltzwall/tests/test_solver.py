import math
import os

import numpy as np
import pytest

from boltzwall.boundary import WallTemperature
from boltzwall.collision import KernelMatrix, KernelParams, sqrt_mu
from boltzwall.errors import CFLWarning, NonPositiveNorm
from boltzwall.geometry import UnitBall
from boltzwall.grid import Field, PhaseGrid, read_snapshot
from boltzwall.kinetic_weight import KineticWeight
from boltzwall.models import NormSeries
from boltzwall.solver import (
    CharacteristicMap,
    MassProjection,
    _compatible,
    duhamel_rhs,
    fit_decay_rate,
    prepare_initial_condition,
    steady_solve,
    transient_solve,
    w1p_norm,
    weighted_gradient_norm,
    weighted_sup,
)

from .factories import decaying_series

PARAMS = KernelParams()


@pytest.fixture(scope="module")
def grid():
    return PhaseGrid.build(UnitBall(), interior_points=40, boundary_points=24, velocity_nodes=4, seed=0)


@pytest.fixture(scope="module")
def kernel(grid):
    return KernelMatrix(grid.velocities, PARAMS)


@pytest.fixture(scope="module")
def isothermal_map(grid, kernel):
    return CharacteristicMap(grid, WallTemperature("isothermal", 0.0), PARAMS, kernel=kernel)


class TestDecayFit:
    def test_pure_exponential(self):
        rate, r2, band = fit_decay_rate(decaying_series(0.3))
        assert rate == pytest.approx(0.3, rel=1e-9)
        assert r2 == pytest.approx(1.0)
        assert band < 1e-9

    def test_oscillating_exponential(self):
        rate, r2, _ = fit_decay_rate(decaying_series(0.3, wobble=0.01))
        assert rate == pytest.approx(0.3, abs=0.01)
        assert r2 > 0.99

    def test_too_few_samples(self):
        with pytest.raises(NonPositiveNorm):
            fit_decay_rate(decaying_series(0.3), tail_start=5.5)

    def test_zero_tail_is_cut(self):
        series = decaying_series(0.5, horizon=3.0)
        for step in range(5):
            series.append(3.1 + 0.1 * step, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        rate, _, _ = fit_decay_rate(series)
        assert rate == pytest.approx(0.5, rel=1e-9)

    def test_all_zero(self):
        series = NormSeries()
        for step in range(20):
            series.append(0.5 * step, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(NonPositiveNorm):
            fit_decay_rate(series)


def test_weighted_sup():
    velocities = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    values = np.array([[0.2, -0.2], [0.1, 0.3]])
    expected = 0.3 * math.exp(0.3)
    assert weighted_sup(values, PARAMS, velocities) == pytest.approx(expected)
    assert weighted_sup(np.zeros((0, 2)), PARAMS, velocities) == 0.0


def test_mass_projection(grid):
    projection = MassProjection(grid)
    values = np.random.default_rng(1).normal(size=(grid.n_points, grid.n_velocities))
    assert abs(projection.mass(projection(values))) < 1e-12 * np.abs(values).max()
    root = np.broadcast_to(sqrt_mu(grid.velocities.nodes), values.shape)
    assert projection.mass(root) == pytest.approx(projection.norm)


def test_grid_weights(grid):
    assert grid.n_points == 64
    assert grid.n_velocities == 64
    assert float(grid.interior_weights.sum()) == pytest.approx(UnitBall.volume)
    assert np.all(grid.domain.xi(grid.interior) < 0)


class TestNorms:
    def test_linear_field(self, grid):
        a = np.array([0.3, -0.1, 0.2])
        profile = sqrt_mu(grid.velocities.nodes)
        values = (grid.points @ a)[:, None] * profile[None, :]
        expected = np.linalg.norm(a) * math.sqrt(UnitBall.volume * float(grid.velocities.weights @ profile**2))
        assert w1p_norm(values, grid, 2.0) == pytest.approx(expected, rel=1e-6)
        value, excluded = weighted_gradient_norm(values, grid, PARAMS, KineticWeight(grid.domain))
        assert excluded < 0.05
        assert 0 < value <= np.linalg.norm(a) * float(np.max(PARAMS.w_tilde(grid.velocities.nodes) * profile)) * (1 + 1e-6)

    def test_zero_field(self, grid):
        values = Field.zeros(grid).values
        assert w1p_norm(values, grid, 2.5) == 0.0
        assert weighted_gradient_norm(values, grid, PARAMS, KineticWeight(grid.domain))[0] == 0.0


class TestCharacteristicMap:
    @pytest.mark.parametrize("dt", [None, 0.02])
    def test_pointwise_formula_matches_assembled_map(self, grid, kernel, dt):
        Tw = WallTemperature("linear_x3", 0.02)
        cmap = CharacteristicMap(grid, Tw, PARAMS, dt=dt, kernel=kernel)
        values = np.random.default_rng(2).normal(size=cmap.shape) * 0.01
        assembled = cmap.apply(values)
        field = Field(values)
        for point in (0, 7, 30):
            for j in (0, 21, 63):
                pointwise = duhamel_rhs(cmap, field, grid.points[point], j)
                assert pointwise == pytest.approx(assembled[point, j], rel=1e-8, abs=1e-12)

    def test_isothermal_wall_has_no_source(self, isothermal_map):
        assert not np.any(isothermal_map.constant)


class TestSteady:
    def test_isothermal_is_trivial(self, grid, isothermal_map):
        result = steady_solve(grid, WallTemperature("isothermal", 0.0), PARAMS, cmap=isothermal_map)
        assert result.trivial
        assert result.converged
        assert result.residual == 0.0

    def test_linear_response(self, grid, kernel):
        sups = []
        for epsilon in (0.01, 0.02):
            Tw = WallTemperature("linear_x3", epsilon)
            cmap = CharacteristicMap(grid, Tw, PARAMS, kernel=kernel)
            result = steady_solve(grid, Tw, PARAMS, tol_fp=1e-5, max_iter=50, cmap=cmap)
            assert abs(MassProjection(grid).mass(result.field.values)) < 1e-8
            sups.append(result.field.weighted_sup(grid, PARAMS))
        assert sups[0] > 0
        assert 1.6 < sups[1] / sups[0] < 2.4

    def test_gamma_on_isothermal_wall_is_trivial(self, grid, isothermal_map):
        result = steady_solve(grid, WallTemperature("isothermal", 0.0), PARAMS, include_gamma=True, cmap=isothermal_map)
        assert result.trivial

    def test_gamma_is_a_small_correction(self, grid, kernel):
        Tw = WallTemperature("linear_x3", 0.01)
        cmap = CharacteristicMap(grid, Tw, PARAMS, kernel=kernel)
        linear = steady_solve(grid, Tw, PARAMS, tol_fp=1e-5, max_iter=50, cmap=cmap)
        nonlinear = steady_solve(grid, Tw, PARAMS, include_gamma=True, tol_fp=1e-5, max_iter=50, cmap=cmap)
        assert abs(MassProjection(grid).mass(nonlinear.field.values)) < 1e-8
        assert len(nonlinear.history) > len(linear.history)
        difference = weighted_sup(nonlinear.field.values - linear.field.values, PARAMS, grid.velocities.nodes)
        assert difference < 0.1 * linear.field.weighted_sup(grid, PARAMS)

    def test_unknown_method(self, grid, isothermal_map):
        with pytest.raises(ValueError):
            steady_solve(grid, WallTemperature("isothermal", 0.0), PARAMS, method="newton", cmap=isothermal_map)


class TestTransient:
    def test_initial_condition(self, isothermal_map):
        initial = prepare_initial_condition(isothermal_map, amplitude=0.01)
        values = initial.field.values
        grid = isothermal_map.grid
        assert initial.field.weighted_sup(grid, PARAMS) == pytest.approx(0.01)
        assert abs(MassProjection(grid).mass(values)) < 1e-12
        assert np.allclose(_compatible(isothermal_map, values), values, atol=1e-14)
        assert np.isfinite(initial.time_derivative_norm)

    def test_zero_state_stays_zero(self, grid, kernel, tmp_path):
        result = transient_solve(
            grid,
            WallTemperature("isothermal", 0.0),
            PARAMS,
            Field.zeros(grid),
            horizon=0.1,
            dt=0.02,
            record_every=1,
            snapshot_every=2,
            snapshot_dir=str(tmp_path),
            kernel=kernel,
        )
        assert len(result.series) == 6
        assert result.series.times[-1] == pytest.approx(0.1)
        assert not np.any(result.final.values)
        assert result.series.decay_rate is None
        assert result.decay_violations == 0
        assert result.snapshots == pytest.approx([0.04, 0.08])
        snapshot = read_snapshot(os.path.join(str(tmp_path), "snapshot_000004.bin"))
        assert snapshot.time == pytest.approx(0.08)
        assert snapshot.values.shape == (grid.n_points, grid.n_velocities)

    def test_steady_state_is_a_fixed_point_of_the_step(self, grid, kernel):
        """On a heated wall, starting at f_s leaves the deviation at zero"""
        Tw = WallTemperature("linear_x3", 0.02)
        sweep = steady_solve(grid, Tw, PARAMS, tol_fp=1e-5, max_iter=50, cmap=CharacteristicMap(grid, Tw, PARAMS, kernel=kernel))
        result = transient_solve(
            grid,
            Tw,
            PARAMS,
            Field.zeros(grid),
            horizon=0.2,
            dt=0.02,
            record_every=1,
            steady=sweep,
            kernel=kernel,
            steady_options={"tol_fp": 1e-5, "max_iter": 100},
        )
        assert result.steady is not sweep
        assert np.any(result.steady.field.values)
        scale = weighted_sup(result.steady.field.values, PARAMS, grid.velocities.nodes)
        assert np.max(result.series.sup_wf) < 1e-10 * scale
        assert np.max(result.series.w1p_p25) < 1e-8 * scale
        assert np.max(np.abs(result.final.values)) < 1e-10 * scale

    def test_mass_is_conserved(self, isothermal_map, kernel):
        grid = isothermal_map.grid
        initial = prepare_initial_condition(isothermal_map, amplitude=0.01)
        result = transient_solve(
            grid,
            WallTemperature("isothermal", 0.0),
            PARAMS,
            initial.field,
            horizon=0.06,
            dt=0.02,
            record_every=1,
            kernel=kernel,
        )
        assert np.max(np.abs(result.series.mass)) < 1e-12
        assert np.all(np.isfinite(result.final.values))

    def test_gamma_source(self, isothermal_map, kernel):
        grid = isothermal_map.grid
        Tw = WallTemperature("isothermal", 0.0)
        initial = prepare_initial_condition(isothermal_map, amplitude=0.01)
        options = dict(horizon=0.06, dt=0.02, record_every=1, kernel=kernel)
        zero = transient_solve(grid, Tw, PARAMS, Field.zeros(grid), include_gamma=True, **options)
        assert not np.any(zero.final.values)
        linear = transient_solve(grid, Tw, PARAMS, initial.field, **options)
        nonlinear = transient_solve(grid, Tw, PARAMS, initial.field, include_gamma=True, **options)
        assert np.all(np.isfinite(nonlinear.final.values))
        assert np.max(np.abs(nonlinear.series.mass)) < 1e-12
        assert not np.array_equal(nonlinear.final.values, linear.final.values)

    def test_cfl_warning(self, grid, kernel):
        with pytest.warns(CFLWarning):
            transient_solve(
                grid,
                WallTemperature("isothermal", 0.0),
                PARAMS,
                Field.zeros(grid),
                horizon=0.05,
                dt=0.05,
                kernel=kernel,
            )
