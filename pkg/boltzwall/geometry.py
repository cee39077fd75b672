"""
Convex level-set domains and the free-flight geometry inside them.

A domain is Omega = {xi < 0} for a strictly convex xi. Everything here is vectorized over
leading axes: positions and velocities are arrays of shape (..., 3).

Two analytic instances are provided: the unit ball (xi = |x|^2 - 1, closed-form exits)
and an axis-aligned ellipsoid (exits by safeguarded Newton iteration).
"""
from __future__ import annotations

import logging
import math

import numpy as np

from .errors import (
    ChartMismatch,
    GrazingSingularity,
    MaxBouncesExceeded,
    NotOnBoundary,
    OutsideDomain,
    ZeroVelocity,
)
from .models import (
    CycleBounce,
    DomainKind,
    ExitGradients,
    ExitRecord,
    PhasePoint,
    PhaseSet,
    StochasticCycle,
)
from .quadrature import SphereRule, gauss_legendre, orthonormal_frame

log = logging.getLogger(__name__)

NEWTON_MAX_ITER = 200


def _dot(a, b):
    return np.sum(a * b, axis=-1)


class ConvexDomain:
    """
    Base class for strictly convex level-set domains.

    Subclasses provide xi and its first three derivatives, plus the constants
    `convexity_constant`, `gradient_bound`, `volume` and `bounding_radius`.
    """

    kind: DomainKind

    def __init__(
        self,
        tol_boundary=1e-12,
        tol_root=1e-12,
        tol_grazing=1e-8,
        chart_radius=0.5,
    ):
        self.tol_boundary = tol_boundary
        self.tol_root = tol_root
        self.tol_grazing = tol_grazing
        self.chart_radius = chart_radius
        self.center = np.zeros(3)

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"

    def describe(self) -> dict:
        return {"kind": self.kind.value}

    # level set

    def xi(self, x):
        raise NotImplementedError

    def grad_xi(self, x):
        raise NotImplementedError

    def hess_xi(self, x):
        raise NotImplementedError

    def third_xi(self, x):
        raise NotImplementedError

    def normal(self, x):
        """Unit outward normal grad(xi)/|grad(xi)|"""
        g = self.grad_xi(x)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def boundary_distance_lower(self, x):
        """Lower bound on dist(x, boundary) from the Lipschitz bound of xi"""
        return np.maximum(-self.xi(x) / self.gradient_bound, 0.0)

    def contains(self, x):
        return self.xi(x) <= self.tol_boundary

    # exits

    def exit_times(self, x, v):
        """
        Largest s >= 0 with xi(x - s v) = 0, vectorized. Points must lie in the closure
        of the domain and velocities must be nonzero.
        """
        return self._newton_exit(x, v)

    def _newton_exit(self, x, v):
        # s -> xi(x - s v) is convex and nonpositive at s = 0, so its largest root stays in
        # [lo, hi] with xi <= 0 at lo and xi > 0 at hi. Newton runs from hi; a step that
        # leaves the bracket is replaced by bisection.
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        x, v = np.broadcast_arrays(x, v)
        speed = np.linalg.norm(v, axis=-1)
        lo = np.zeros(speed.shape)
        hi = (np.linalg.norm(x, axis=-1) + self.bounding_radius) / speed * 1.01
        active = np.ones(speed.shape, dtype=bool)
        for _ in range(NEWTON_MAX_ITER):
            y = x - hi[..., None] * v
            g = self.xi(y)
            dg = -_dot(self.grad_xi(y), v)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = hi - g / dg
            use_newton = (dg > 0) & (newton > lo) & (newton < hi)
            s = np.where(use_newton, newton, 0.5 * (lo + hi))
            inside = self.xi(x - s[..., None] * v) <= 0.0
            converged = (use_newton & (hi - s <= self.tol_root * (1.0 + s))) | (hi - lo <= self.tol_root * (1.0 + hi))
            lo = np.where(active & inside, s, lo)
            hi = np.where(active & ~inside, s, hi)
            active &= ~converged
            if not np.any(active):
                break
        else:
            log.warning("exit iteration hit %d iterations at %d points", NEWTON_MAX_ITER, int(np.sum(active)))
        return hi

    def _check_phase_point(self, p: PhasePoint):
        if p.speed == 0.0:
            raise ZeroVelocity(f"zero velocity at x={p.x.tolist()}: exit time is unbounded")
        if self.xi(p.x) > self.tol_boundary:
            raise OutsideDomain(f"x={p.x.tolist()} lies outside the domain")

    def _exit_record(self, x, v, t):
        x_b = x - t * v
        n_b = self.normal(x_b)
        grazing = abs(float(n_b @ v)) < self.tol_grazing * float(np.linalg.norm(v))
        return ExitRecord(t_b=float(t), x_b=x_b, normal_b=n_b, grazing=bool(grazing))

    def backward_exit(self, p: PhasePoint) -> ExitRecord:
        self._check_phase_point(p)
        t = float(self.exit_times(p.x, p.v))
        return self._exit_record(p.x, p.v, t)

    def forward_exit(self, p: PhasePoint) -> ExitRecord:
        """Forward exit; x_f(x, v) = x_b(x, -v)"""
        self._check_phase_point(p)
        t = float(self.exit_times(p.x, -p.v))
        return self._exit_record(p.x, -p.v, t)

    def exit_gradients(self, p: PhasePoint) -> ExitGradients:
        record = self.backward_exit(p)
        n = record.normal_b
        nv = float(n @ p.v)
        if abs(nv) <= self.tol_grazing * p.speed:
            raise GrazingSingularity(f"grazing exit at x_b={record.x_b.tolist()}")
        t_b = record.t_b
        identity = np.eye(3)
        return ExitGradients(
            grad_x_tb=n / nv,
            grad_v_tb=-t_b * n / nv,
            grad_x_xb=identity - np.outer(p.v, n) / nv,
            grad_v_xb=-t_b * identity + t_b * np.outer(p.v, n) / nv,
        )

    def classify(self, p: PhasePoint) -> PhaseSet:
        if self.xi(p.x) < -self.tol_boundary:
            return PhaseSet.INTERIOR
        nv = float(self.normal(p.x) @ p.v)
        if abs(nv) <= self.tol_grazing * max(p.speed, 1.0):
            return PhaseSet.GRAZING
        return PhaseSet.OUTGOING if nv > 0 else PhaseSet.INCOMING

    def boundary_point(self, direction):
        """Boundary point hit by the ray from the center along `direction`"""
        direction = np.asarray(direction, dtype=float)
        center = np.broadcast_to(self.center, direction.shape)
        t = self.exit_times(center, -direction)
        return center + t[..., None] * direction

    # sampling

    def sample_interior(self, rng, n):
        accepted = []
        count = 0
        radius = self.bounding_box
        while count < n:
            batch = rng.uniform(-radius, radius, size=(2 * n + 16, 3))
            inside = batch[self.xi(batch) < -self.tol_boundary]
            accepted.append(inside)
            count += len(inside)
        return np.concatenate(accepted)[:n]

    def sample_boundary(self, rng, n):
        directions = rng.normal(size=(n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return self.boundary_point(directions)

    # quadratures on the domain

    def volume_quadrature(self, n_radial, n_polar, n_azimuthal):
        """Points and weights integrating over Omega"""
        raise NotImplementedError

    def surface_quadrature(self, n_polar, n_azimuthal):
        """Points, outward normals and area weights integrating over the boundary"""
        raise NotImplementedError

    def chart_at(self, q) -> Chart:
        q = np.asarray(q, dtype=float)
        if abs(float(self.xi(q))) > max(self.tol_root, 1e-10):
            raise NotOnBoundary(f"chart anchor {q.tolist()} is not on the boundary")
        return GraphChart(self, q, self.chart_radius)


class UnitBall(ConvexDomain):
    kind = DomainKind.BALL
    convexity_constant = 2.0
    gradient_bound = 2.0
    volume = 4.0 * math.pi / 3.0
    area = 4.0 * math.pi
    bounding_radius = 1.0
    bounding_box = np.ones(3)
    diameter = 2.0

    def xi(self, x):
        return _dot(x, x) - 1.0

    def grad_xi(self, x):
        return 2.0 * np.asarray(x, dtype=float)

    def hess_xi(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * np.eye(3), x.shape[:-1] + (3, 3)).copy()

    def third_xi(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (3, 3, 3))

    def normal(self, x):
        x = np.asarray(x, dtype=float)
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def boundary_distance_lower(self, x):
        return np.maximum(1.0 - np.linalg.norm(x, axis=-1), 0.0)

    def exit_times(self, x, v):
        # larger root of |x - s v|^2 = 1, written without cancellation
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        xv = _dot(x, v)
        vv = _dot(v, v)
        c = _dot(x, x) - 1.0
        root = np.sqrt(np.maximum(xv**2 - vv * c, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            far = np.where(xv >= 0.0, (xv + root) / vv, -c / (root - xv))
        return np.maximum(far, 0.0)

    def boundary_point(self, direction):
        direction = np.asarray(direction, dtype=float)
        return direction / np.linalg.norm(direction, axis=-1, keepdims=True)

    def sample_interior(self, rng, n):
        directions = rng.normal(size=(n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radius = rng.uniform(size=n) ** (1.0 / 3.0) * (1.0 - 1e-9)
        return directions * radius[:, None]

    def volume_quadrature(self, n_radial, n_polar, n_azimuthal):
        r, wr = gauss_legendre(n_radial, 0.0, 1.0)
        sphere = SphereRule.product(n_polar, n_azimuthal)
        points = r[:, None, None] * sphere.nodes[None]
        weights = (wr * r**2)[:, None] * sphere.weights[None]
        return points.reshape(-1, 3), weights.ravel()

    def surface_quadrature(self, n_polar, n_azimuthal):
        sphere = SphereRule.product(n_polar, n_azimuthal)
        return sphere.nodes, sphere.nodes.copy(), sphere.weights

    def chart_at(self, q) -> Chart:
        q = np.asarray(q, dtype=float)
        if abs(float(self.xi(q))) > max(self.tol_root, 1e-10):
            raise NotOnBoundary(f"chart anchor {q.tolist()} is not on the boundary")
        return SphericalChart(self, q, self.chart_radius)


class Ellipsoid(ConvexDomain):
    kind = DomainKind.ELLIPSOID

    def __init__(self, semi_axes=(2.0, 1.0, 1.0), **kwargs):
        super().__init__(**kwargs)
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        if self.semi_axes.shape != (3,) or np.any(self.semi_axes <= 0):
            raise ValueError(f"semi axes must be three positive numbers: {semi_axes}")
        self._inv_sq = 1.0 / self.semi_axes**2
        self.convexity_constant = float(2.0 * self._inv_sq.min())
        self.gradient_bound = float(2.0 / self.semi_axes.min())
        self.volume = float(4.0 * math.pi / 3.0 * np.prod(self.semi_axes))
        self.bounding_radius = float(self.semi_axes.max())
        self.bounding_box = self.semi_axes.copy()
        self.diameter = 2.0 * self.bounding_radius

    def describe(self) -> dict:
        return {"kind": self.kind.value, "semi_axes": self.semi_axes.tolist()}

    def xi(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(x**2 * self._inv_sq, axis=-1) - 1.0

    def grad_xi(self, x):
        return 2.0 * np.asarray(x, dtype=float) * self._inv_sq

    def hess_xi(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.diag(2.0 * self._inv_sq), x.shape[:-1] + (3, 3)).copy()

    def third_xi(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (3, 3, 3))

    def volume_quadrature(self, n_radial, n_polar, n_azimuthal):
        points, weights = UnitBall().volume_quadrature(n_radial, n_polar, n_azimuthal)
        return points * self.semi_axes, weights * np.prod(self.semi_axes)

    def surface_quadrature(self, n_polar, n_azimuthal):
        # image of the unit sphere under A = diag(a): dS = det(A) |A^-1 d| dOmega
        sphere = SphereRule.product(n_polar, n_azimuthal)
        points = sphere.nodes * self.semi_axes
        scaled = sphere.nodes / self.semi_axes
        stretch = np.linalg.norm(scaled, axis=1)
        weights = sphere.weights * np.prod(self.semi_axes) * stretch
        return points, scaled / stretch[:, None], weights


def make_domain(kind, semi_axes=(2.0, 1.0, 1.0), **tolerances) -> ConvexDomain:
    kind = DomainKind(kind)
    if kind == DomainKind.BALL:
        return UnitBall(**tolerances)
    return Ellipsoid(semi_axes, **tolerances)


# phase point level helpers


def backward_exit(domain: ConvexDomain, p: PhasePoint) -> ExitRecord:
    return domain.backward_exit(p)


def forward_exit(domain: ConvexDomain, p: PhasePoint) -> ExitRecord:
    return domain.forward_exit(p)


def exit_gradients(domain: ConvexDomain, p: PhasePoint) -> ExitGradients:
    return domain.exit_gradients(p)


def chart_at(domain: ConvexDomain, q) -> Chart:
    return domain.chart_at(q)


def boundary_flatness_ratio(domain: ConvexDomain, x1, x2) -> float:
    """|n(x1).(x1 - x2)| / |x1 - x2|^2 for two boundary points (1/2 on the unit sphere)"""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d = x1 - x2
    return float(abs(domain.normal(x1) @ d) / (d @ d))


# charts


class Chart:
    """
    Parametrization eta of a neighborhood of a boundary anchor. Parameters are
    (x1, x2, x3) with x3 = 0 on the boundary and x3 < 0 inside the domain, so that
    d(eta)/dx3 points along the outward normal.
    """

    def __init__(self, domain: ConvexDomain, anchor, patch_radius):
        self.domain = domain
        self.anchor = np.asarray(anchor, dtype=float)
        self.patch_radius = float(patch_radius)

    def eta(self, params):
        raise NotImplementedError

    def tangents(self, params):
        """Rows d(eta)/dx_i, shape (..., 3, 3)"""
        raise NotImplementedError

    def coordinates(self, x):
        """Parameters of a boundary point (x3 = 0)"""
        raise NotImplementedError

    def metric(self, params):
        tangents = self.tangents(params)
        return np.einsum("...ik,...jk->...ij", tangents, tangents)

    def frame(self, params):
        """The matrix T whose rows are d(eta)/dx_i / |d(eta)/dx_i|"""
        tangents = self.tangents(params)
        return tangents / np.linalg.norm(tangents, axis=-1, keepdims=True)

    def contains(self, params) -> bool:
        params = np.asarray(params, dtype=float)
        return bool(np.hypot(params[0], params[1]) < self.patch_radius and params[2] <= 0)

    def tangential_inverse(self, params):
        """
        The 2x3 matrix M with dx_i = M_i . dy for tangential displacements dy at a
        boundary point: M = (J J^T)^-1 J, J the first two tangent rows.
        """
        tangents = self.tangents(params)[:2]
        gram = tangents @ tangents.T
        return np.linalg.solve(gram, tangents)

    def area_element(self, params) -> float:
        tangents = self.tangents(params)
        return float(np.linalg.norm(np.cross(tangents[0], tangents[1])))


class SphericalChart(Chart):
    """Rotated latitude/longitude coordinates with the anchor on the equator"""

    def __init__(self, domain, anchor, patch_radius):
        super().__init__(domain, anchor, patch_radius)
        t1, t2, n = orthonormal_frame(self.anchor)
        self.rotation = np.column_stack([n, t1, t2])

    def _sphere(self, x1, x2):
        return np.stack(
            [np.cos(x2) * np.cos(x1), np.cos(x2) * np.sin(x1), np.sin(x2)], axis=-1
        )

    def eta(self, params):
        params = np.asarray(params, dtype=float)
        x1, x2, x3 = params[..., 0], params[..., 1], params[..., 2]
        return (1.0 + x3)[..., None] * (self._sphere(x1, x2) @ self.rotation.T)

    def tangents(self, params):
        params = np.asarray(params, dtype=float)
        x1, x2, x3 = params[..., 0], params[..., 1], params[..., 2]
        scale = (1.0 + x3)[..., None]
        d1 = np.stack(
            [-np.cos(x2) * np.sin(x1), np.cos(x2) * np.cos(x1), np.zeros_like(x1)], axis=-1
        )
        d2 = np.stack(
            [-np.sin(x2) * np.cos(x1), -np.sin(x2) * np.sin(x1), np.cos(x2)], axis=-1
        )
        d3 = self._sphere(x1, x2)
        rows = [scale * d1, scale * d2, d3]
        return np.stack([row @ self.rotation.T for row in rows], axis=-2)

    def coordinates(self, x):
        x = np.asarray(x, dtype=float)
        radius = np.linalg.norm(x, axis=-1)
        y = (x @ self.rotation) / radius[..., None]
        return np.stack(
            [
                np.arctan2(y[..., 1], y[..., 0]),
                np.arcsin(np.clip(y[..., 2], -1.0, 1.0)),
                radius - 1.0,
            ],
            axis=-1,
        )


class GraphChart(Chart):
    """
    Graph parametrization over the tangent plane at the anchor, extended along the
    normal: eta(x) = P(x1, x2) + x3 n(P). Orthogonal at the anchor.
    """

    def __init__(self, domain, anchor, patch_radius):
        super().__init__(domain, anchor, patch_radius)
        self.t1, self.t2, self.n = orthonormal_frame(domain.normal(self.anchor))

    def _height(self, x1, x2):
        base = self.anchor + x1[..., None] * self.t1 + x2[..., None] * self.t2
        h = np.zeros_like(x1)
        for _ in range(NEWTON_MAX_ITER):
            point = base + h[..., None] * self.n
            g = self.domain.xi(point)
            dg = self.domain.grad_xi(point) @ self.n
            step = g / dg
            h = h - step
            if np.all(np.abs(step) < 1e-15 * (1.0 + np.abs(h))):
                break
        return base + h[..., None] * self.n

    def _surface(self, params):
        params = np.asarray(params, dtype=float)
        return self._height(params[..., 0], params[..., 1])

    def eta(self, params):
        params = np.asarray(params, dtype=float)
        surface = self._surface(params)
        return surface + params[..., 2, None] * self.domain.normal(surface)

    def tangents(self, params):
        params = np.asarray(params, dtype=float)
        surface = self._surface(params)
        grad = self.domain.grad_xi(surface)
        gn = grad @ self.n
        dp1 = self.t1 - ((grad @ self.t1) / gn)[..., None] * self.n
        dp2 = self.t2 - ((grad @ self.t2) / gn)[..., None] * self.n
        normal = grad / np.linalg.norm(grad, axis=-1, keepdims=True)
        hess = self.domain.hess_xi(surface)
        scale = np.linalg.norm(grad, axis=-1)[..., None]

        def d_normal(dp):
            hd = np.einsum("...ij,...j->...i", hess, dp)
            return (hd - np.sum(normal * hd, axis=-1, keepdims=True) * normal) / scale

        x3 = params[..., 2, None]
        return np.stack(
            [dp1 + x3 * d_normal(dp1), dp2 + x3 * d_normal(dp2), normal], axis=-2
        )

    def coordinates(self, x):
        x = np.asarray(x, dtype=float)
        offset = x - self.anchor
        return np.stack(
            [offset @ self.t1, offset @ self.t2, np.zeros(offset.shape[:-1])], axis=-1
        )


def exit_chart_coordinates(domain: ConvexDomain, x, v, chart: Chart):
    """(x1, x2, t_b) of the backward exit of (x, v) in the given chart"""
    t = float(domain.exit_times(np.asarray(x, dtype=float), np.asarray(v, dtype=float)))
    params = chart.coordinates(np.asarray(x, dtype=float) - t * np.asarray(v, dtype=float))
    return np.array([params[0], params[1], t])


def chart_exit_gradients(domain: ConvexDomain, x, v, chart: Chart):
    """
    Derivatives of the chart coordinates (x1, x2) of x_b with respect to x and v,
    each a 2x3 matrix.
    """
    p = PhasePoint(x, v)
    gradients = domain.exit_gradients(p)
    record = domain.backward_exit(p)
    params = chart.coordinates(record.x_b)
    if not chart.contains(params):
        raise ChartMismatch(f"x_b={record.x_b.tolist()} lies outside the chart patch")
    inverse = chart.tangential_inverse(params)
    return inverse @ gradients.grad_x_xb, inverse @ gradients.grad_v_xb


def exit_jacobian(domain: ConvexDomain, x1, v1, chart2: Chart) -> float:
    """
    det d(x1^2, x2^2, t_b^1)/dv^1 = t_b^3 / (sqrt(g11 g22) |n(x^2).v^1|), where the
    area element |d1 eta x d2 eta| stands in for sqrt(g11 g22) (equal for orthogonal
    charts).
    """
    p = PhasePoint(x1, v1)
    record = domain.backward_exit(p)
    nv = float(record.normal_b @ p.v)
    if abs(nv) <= domain.tol_grazing * p.speed:
        raise GrazingSingularity(f"grazing exit at x_b={record.x_b.tolist()}")
    params = chart2.coordinates(record.x_b)
    if not chart2.contains(params):
        raise ChartMismatch(f"x_b={record.x_b.tolist()} lies outside the chart patch")
    return abs(record.t_b) ** 3 / (chart2.area_element(params) * abs(nv))


def fibonacci_directions(n):
    index = np.arange(n) + 0.5
    z = 1.0 - 2.0 * index / n
    phi = index * math.pi * (3.0 - math.sqrt(5.0))
    s = np.sqrt(1.0 - z**2)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def _bump(r):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r < 1.0, np.exp(-1.0 / np.maximum(1.0 - r**2, 1e-300)), 0.0)


class BoundaryAtlas:
    """
    Finite covering of the boundary by charts with a smooth partition of unity.
    The anchor count is doubled until every coverage point is covered.
    """

    def __init__(self, domain: ConvexDomain, n_anchors=24, n_coverage=2000, max_anchors=1536):
        self.domain = domain
        coverage = domain.boundary_point(fibonacci_directions(n_coverage))
        while True:
            anchors = domain.boundary_point(fibonacci_directions(n_anchors))
            self.charts = [domain.chart_at(anchor) for anchor in anchors]
            if np.all(self._raw_weights(coverage).sum(axis=0) > 0) or n_anchors >= max_anchors:
                break
            n_anchors *= 2
        log.debug("boundary atlas with %d charts", len(self.charts))

    def _raw_weights(self, x):
        x = np.atleast_2d(x)
        normals = self.domain.normal(x)
        rows = []
        for chart in self.charts:
            same_side = normals @ self.domain.normal(chart.anchor) > 0.5
            params = chart.coordinates(x)
            r = np.hypot(params[:, 0], params[:, 1]) / chart.patch_radius
            rows.append(np.where(same_side, _bump(r), 0.0))
        return np.array(rows)

    def partition_weights(self, x):
        """iota_p(x) for every chart p; columns sum to one"""
        raw = self._raw_weights(x)
        return raw / raw.sum(axis=0, keepdims=True)

    def chart_for(self, x) -> Chart:
        weights = self._raw_weights(x)[:, 0]
        if weights.max() <= 0:
            raise ChartMismatch(f"{np.asarray(x).tolist()} is not covered by the atlas")
        return self.charts[int(np.argmax(weights))]


# stochastic cycles


class WallFluxSampler:
    """
    Draws outgoing velocities at a boundary point with density proportional to
    M_W(x, v) |n(x).v|: a Rayleigh normal component and Gaussian tangential
    components, all with variance T_W(x).
    """

    def __init__(self, domain: ConvexDomain, temperature=None):
        self.domain = domain
        self.temperature = temperature

    def __call__(self, x, rng):
        temperature = 1.0 if self.temperature is None else float(self.temperature(x))
        scale = math.sqrt(temperature)
        t1, t2, n = orthonormal_frame(self.domain.normal(x))
        normal = rng.rayleigh(scale)
        tangential = rng.normal(0.0, scale, size=2)
        return tangential[0] * t1 + tangential[1] * t2 + normal * n


def build_cycle(
    domain: ConvexDomain,
    p: PhasePoint,
    t0,
    velocity_sampler,
    max_bounces=1000,
    seed=None,
    strict=False,
) -> StochasticCycle:
    if t0 < 0:
        raise ValueError(f"cycle start time must be nonnegative: {t0}")
    rng = np.random.default_rng(seed)
    record = domain.backward_exit(p)
    cycle = StochasticCycle(t0=float(t0), start=p)
    x = record.x_b
    t = float(t0) - record.t_b
    while t > 0:
        if len(cycle.bounces) >= max_bounces:
            cycle.truncated = True
            message = f"cycle truncated after {max_bounces} bounces with t={t:.6g} left"
            if strict:
                raise MaxBouncesExceeded(message)
            log.warning(message)
            break
        v = velocity_sampler(x, rng)
        t_b = float(domain.exit_times(x, v))
        cycle.bounces.append(CycleBounce(x=x, v=v, t=t, t_b=t_b))
        x = x - t_b * v
        t = t - t_b
    cycle.bounces.append(CycleBounce(x=x, v=None, t=t, t_b=None))
    return cycle


def reparametrize_cycle(cycle: StochasticCycle, atlas: BoundaryAtlas):
    """Chart coordinates x^k and chart velocities T v^k of every bounce"""
    rows = []
    for bounce in cycle.bounces:
        if bounce.v is None:
            continue
        chart = atlas.chart_for(bounce.x)
        params = chart.coordinates(bounce.x)
        frame = chart.frame(params)
        rows.append((chart, params, frame @ bounce.v))
    return rows


def classify_phase_point(domain: ConvexDomain, p: PhasePoint) -> PhaseSet:
    return domain.classify(p)


def velocity_in_chart(frame, v):
    """Chart velocity T v; the inverse is T^T for orthonormal T"""
    return np.asarray(frame) @ np.asarray(v, dtype=float)


def sample_velocities(rng, n, v_max):
    """Velocities with uniform direction and speed uniform on (0, v_max]"""
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    speed = v_max * (1.0 - rng.uniform(size=n))
    return directions * speed[:, None]


def sample_grazing_velocities(rng, normals, max_cosine=1e-3, speed=1.0):
    """
    Velocities at boundary points whose normal component relative to the speed is
    uniform in (-max_cosine, max_cosine), i.e. concentrated near the grazing set.
    """
    normals = np.atleast_2d(normals)
    rows = []
    for normal in normals:
        t1, t2, n = orthonormal_frame(normal)
        cosine = rng.uniform(-max_cosine, max_cosine)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        sine = math.sqrt(1.0 - cosine**2)
        rows.append(speed * (sine * (math.cos(phi) * t1 + math.sin(phi) * t2) + cosine * n))
    return np.array(rows)
