import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from boltzwall.errors import GrazingSingularity, MaxBouncesExceeded, NotOnBoundary, OutsideDomain, ZeroVelocity
from boltzwall.geometry import (
    BoundaryAtlas,
    Ellipsoid,
    UnitBall,
    WallFluxSampler,
    boundary_flatness_ratio,
    build_cycle,
    chart_exit_gradients,
    classify_phase_point,
    exit_chart_coordinates,
    exit_jacobian,
    make_domain,
    reparametrize_cycle,
    velocity_in_chart,
)
from boltzwall.models import PhasePoint, PhaseSet
from boltzwall.verify import finite_difference_exit_gradients

coordinate = st.floats(min_value=-0.5, max_value=0.5, allow_nan=False)
component = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


@pytest.fixture
def ball():
    return UnitBall()


@pytest.fixture
def ellipsoid():
    return Ellipsoid((2.0, 1.0, 1.0))


@settings(max_examples=60, deadline=None)
@given(st.tuples(coordinate, coordinate, coordinate), st.tuples(component, component, component))
def test_ball_exit_lands_on_sphere(x, v):
    """
    The closed-form backward exit from an interior point ends on the unit sphere, and
    the backward and forward exits add up to the chord length.
    """
    x = np.array(x)
    v = np.array(v)
    assume(np.linalg.norm(v) > 0.1)
    ball = UnitBall()
    t_b = float(ball.exit_times(x, v))
    t_f = float(ball.exit_times(x, -v))
    assert t_b > 0
    assert np.linalg.norm(x - t_b * v) == pytest.approx(1.0, abs=1e-12)
    vv = v @ v
    chord = 2.0 * math.sqrt((x @ v) ** 2 + (1.0 - x @ x) * vv) / vv
    assert t_b + t_f == pytest.approx(chord, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.tuples(coordinate, coordinate, coordinate), st.tuples(component, component, component))
def test_ellipsoid_exit_is_largest_root(x, v):
    """
    The Newton exit of the ellipsoid is a root of xi along the ray and the ray is
    outside the domain just beyond it.
    """
    x = np.array(x)
    v = np.array(v)
    assume(np.linalg.norm(v) > 0.1)
    domain = Ellipsoid((2.0, 1.0, 1.0))
    t_b = float(domain.exit_times(x, v))
    assert abs(float(domain.xi(x - t_b * v))) < 1e-9
    assert float(domain.xi(x - (t_b + 1e-3) * v)) > 0
    assert float(domain.xi(x - 0.5 * t_b * v)) < 0


@pytest.mark.parametrize("depth", [1e-2, 1e-6, 1e-10])
def test_ellipsoid_exit_near_grazing(ellipsoid, depth):
    """Rays skimming the wall at shrinking depth still land on the larger quadratic root"""
    x = np.array([[0.0, 0.0, 1.0 - depth], [0.3, 0.0, math.sqrt(1.0 - 0.0225) - depth]])
    v = np.array([[1.0, 0.0, 1e-7], [1.0, 0.0, -0.4]])
    t_b = ellipsoid.exit_times(x, v)
    inv_sq = 1.0 / ellipsoid.semi_axes**2
    a = np.sum(v**2 * inv_sq, axis=1)
    b = np.sum(x * v * inv_sq, axis=1)
    c = ellipsoid.xi(x)
    expected = (b + np.sqrt(b**2 - a * c)) / a
    assert t_b == pytest.approx(expected, rel=1e-9, abs=1e-10)
    assert np.all(ellipsoid.xi(x - t_b[:, None] * v) > -1e-9)


def test_ellipsoid_exit_on_a_tangent_ray(ellipsoid):
    t_b = float(ellipsoid.exit_times(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])))
    assert 0.0 <= t_b < 1e-9


@pytest.mark.parametrize("domain", [UnitBall(), Ellipsoid((2.0, 1.0, 1.0))])
def test_exit_gradients_match_finite_differences(domain):
    x = np.array([0.1, 0.2, -0.1])
    v = np.array([1.0, 0.5, 0.3])
    analytic = domain.exit_gradients(PhasePoint(x, v))._asdict()
    numeric = finite_difference_exit_gradients(domain, x, v)
    for key, value in numeric.items():
        assert np.allclose(value, analytic[key], atol=1e-6), key


def test_forward_exit_reverses_velocity(ellipsoid):
    p = PhasePoint([0.3, -0.2, 0.1], [0.4, 0.9, -0.2])
    forward = ellipsoid.forward_exit(p)
    backward = ellipsoid.backward_exit(PhasePoint(p.x, -p.v))
    assert forward.t_b == pytest.approx(backward.t_b)
    assert np.allclose(forward.x_b, backward.x_b)


def test_backward_exit_errors(ball):
    with pytest.raises(ZeroVelocity):
        ball.backward_exit(PhasePoint([0.0, 0.0, 0.0], [0.0, 0.0, 0.0]))
    with pytest.raises(OutsideDomain):
        ball.backward_exit(PhasePoint([2.0, 0.0, 0.0], [1.0, 0.0, 0.0]))


def test_grazing_exit_has_no_gradient(ball):
    p = PhasePoint([0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    with pytest.raises(GrazingSingularity):
        ball.exit_gradients(p)


class TestClassify:
    @pytest.mark.parametrize(
        "x, v, expected",
        [
            ((0.0, 0.0, 0.5), (0.0, 0.0, 1.0), PhaseSet.INTERIOR),
            ((0.0, 0.0, 1.0), (0.0, 0.0, 1.0), PhaseSet.OUTGOING),
            ((0.0, 0.0, 1.0), (0.0, 0.3, -1.0), PhaseSet.INCOMING),
            ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), PhaseSet.GRAZING),
        ],
    )
    def test_ball(self, x, v, expected):
        assert classify_phase_point(UnitBall(), PhasePoint(x, v)) == expected


def test_make_domain():
    assert isinstance(make_domain("ball"), UnitBall)
    domain = make_domain("ellipsoid", semi_axes=(3.0, 2.0, 1.0), tol_root=1e-10)
    assert isinstance(domain, Ellipsoid)
    assert domain.tol_root == 1e-10
    assert domain.volume == pytest.approx(8.0 * math.pi)
    with pytest.raises(ValueError):
        make_domain("torus")
    with pytest.raises(ValueError):
        Ellipsoid((1.0, -1.0, 1.0))


def test_boundary_flatness_ratio_on_sphere(ball):
    x1 = np.array([1.0, 0.0, 0.0])
    x2 = np.array([0.0, 0.6, 0.8])
    assert boundary_flatness_ratio(ball, x1, x2) == pytest.approx(0.5)


@pytest.mark.parametrize("domain", [UnitBall(), Ellipsoid((2.0, 1.0, 1.0))])
def test_surface_quadrature_area_and_volume(domain):
    points, normals, weights = domain.surface_quadrature(16, 32)
    assert np.allclose(np.linalg.norm(normals, axis=1), 1.0)
    assert np.max(np.abs(domain.xi(points))) < 1e-12
    # divergence theorem for the field x / 3
    assert float(weights @ np.sum(points * normals, axis=1)) / 3.0 == pytest.approx(domain.volume, rel=1e-6)
    _, volume_weights = domain.volume_quadrature(4, 4, 8)
    assert float(volume_weights.sum()) == pytest.approx(domain.volume, rel=1e-10)


def test_chart_requires_boundary_anchor(ball):
    with pytest.raises(NotOnBoundary):
        ball.chart_at([0.0, 0.0, 0.5])


@pytest.mark.parametrize("domain", [UnitBall(), Ellipsoid((2.0, 1.0, 1.0))])
def test_chart_round_trip(domain):
    anchor = domain.boundary_point(np.array([0.3, -0.4, 0.8]))
    chart = domain.chart_at(anchor)
    params = np.array([0.05, -0.08, 0.0])
    point = chart.eta(params)
    assert abs(float(domain.xi(point))) < 1e-10
    assert np.allclose(chart.coordinates(point)[:2], params[:2], atol=1e-10)


@pytest.mark.parametrize("domain", [UnitBall(), Ellipsoid((2.0, 1.0, 1.0))])
def test_exit_jacobian_against_finite_differences(domain):
    x1 = np.array([0.2, 0.1, -0.3])
    v1 = np.array([0.6, -0.4, 0.9])
    record = domain.backward_exit(PhasePoint(x1, v1))
    chart = domain.chart_at(record.x_b)
    step = 1e-6
    columns = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        plus = exit_chart_coordinates(domain, x1, v1 + e, chart)
        minus = exit_chart_coordinates(domain, x1, v1 - e, chart)
        columns.append((plus - minus) / (2.0 * step))
    numeric = abs(float(np.linalg.det(np.column_stack(columns))))
    assert exit_jacobian(domain, x1, v1, chart) == pytest.approx(numeric, rel=1e-5)


@pytest.mark.parametrize("domain", [UnitBall(), Ellipsoid((2.0, 1.0, 1.0))])
def test_chart_exit_gradients_against_finite_differences(domain):
    x = np.array([0.2, 0.1, -0.3])
    v = np.array([0.6, -0.4, 0.9])
    chart = domain.chart_at(domain.backward_exit(PhasePoint(x, v)).x_b)
    grad_x, grad_v = chart_exit_gradients(domain, x, v, chart)
    assert grad_x.shape == grad_v.shape == (2, 3)
    step = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        dx = exit_chart_coordinates(domain, x + e, v, chart) - exit_chart_coordinates(domain, x - e, v, chart)
        dv = exit_chart_coordinates(domain, x, v + e, chart) - exit_chart_coordinates(domain, x, v - e, chart)
        assert np.allclose(grad_x[:, j], dx[:2] / (2.0 * step), atol=1e-6)
        assert np.allclose(grad_v[:, j], dv[:2] / (2.0 * step), atol=1e-6)


def test_velocity_in_chart_is_a_rotation(ball):
    chart = ball.chart_at(ball.boundary_point(np.array([0.3, -0.4, 0.8])))
    frame = chart.frame(np.array([0.1, -0.05, 0.0]))
    v = np.array([0.7, -1.2, 0.4])
    mapped = velocity_in_chart(frame, v)
    assert np.linalg.norm(mapped) == pytest.approx(np.linalg.norm(v))
    assert np.allclose(frame.T @ mapped, v)


def test_atlas_partition_of_unity(ball):
    atlas = BoundaryAtlas(ball, n_anchors=24, n_coverage=200)
    points = ball.sample_boundary(np.random.default_rng(3), 20)
    weights = atlas.partition_weights(points)
    assert np.allclose(weights.sum(axis=0), 1.0)
    assert np.all(weights >= 0)


class TestCycles:
    def test_bounces_stay_on_wall(self, ball):
        p = PhasePoint([0.1, 0.0, 0.2], [0.5, 0.5, -0.3])
        cycle = build_cycle(ball, p, 5.0, WallFluxSampler(ball), seed=11)
        points = cycle.points()
        assert np.max(np.abs(ball.xi(points))) < 1e-10
        assert not cycle.truncated
        # remaining time decreases through the bounces and ends nonpositive
        times = [bounce.t for bounce in cycle.bounces]
        assert all(a > b for a, b in zip(times, times[1:]))
        assert times[-1] <= 0

    def test_reparametrize(self, ball):
        p = PhasePoint([0.1, 0.0, 0.2], [0.5, 0.5, -0.3])
        cycle = build_cycle(ball, p, 5.0, WallFluxSampler(ball), seed=11)
        rows = reparametrize_cycle(cycle, BoundaryAtlas(ball, n_anchors=24, n_coverage=200))
        bounces = [bounce for bounce in cycle.bounces if bounce.v is not None]
        assert len(rows) == len(bounces)
        for (chart, params, velocity), bounce in zip(rows, bounces):
            assert np.allclose(chart.eta(params), bounce.x, atol=1e-10)
            assert np.linalg.norm(velocity) == pytest.approx(np.linalg.norm(bounce.v))

    def test_same_seed_same_cycle(self, ellipsoid):
        p = PhasePoint([0.1, 0.0, 0.2], [0.5, 0.5, -0.3])
        first = build_cycle(ellipsoid, p, 4.0, WallFluxSampler(ellipsoid), seed=5)
        second = build_cycle(ellipsoid, p, 4.0, WallFluxSampler(ellipsoid), seed=5)
        assert np.array_equal(first.points(), second.points())

    def test_short_time_has_no_bounce(self, ball):
        p = PhasePoint([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        cycle = build_cycle(ball, p, 0.5, WallFluxSampler(ball), seed=0)
        assert cycle.n_bounces == 0
        assert cycle.bounces[-1].t == pytest.approx(-0.5)

    def test_truncation(self, ball):
        p = PhasePoint([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
        cycle = build_cycle(ball, p, 50.0, WallFluxSampler(ball), max_bounces=3, seed=0)
        assert cycle.truncated
        with pytest.raises(MaxBouncesExceeded):
            build_cycle(ball, p, 50.0, WallFluxSampler(ball), max_bounces=3, seed=0, strict=True)

    def test_negative_start_time(self, ball):
        with pytest.raises(ValueError):
            build_cycle(ball, PhasePoint([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), -1.0, WallFluxSampler(ball))

    def test_sampler_emits_into_domain(self, ball):
        rng = np.random.default_rng(2)
        sampler = WallFluxSampler(ball)
        x = np.array([0.0, 0.6, 0.8])
        velocities = np.array([sampler(x, rng) for _ in range(200)])
        # re-emitted velocities point outward so that the backward ray enters the domain
        assert np.all(velocities @ ball.normal(x) > 0)
