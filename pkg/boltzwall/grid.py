"""
Phase-space collocation: spatial points, the velocity grid, tabulated fields and the
spatial interpolation rules used along characteristics.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, cKDTree
from scipy.stats import qmc

from .collision import KernelParams, sqrt_mu
from .errors import InterpolationOutOfRange
from .geometry import ConvexDomain, fibonacci_directions
from .quadrature import VelocityQuadrature

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"BZWF"
SNAPSHOT_VERSION = 1
MLS_NEIGHBORS = 20


@dataclass
class PhaseGrid:
    """
    Interior collocation points (stratified by boundary distance), boundary nodes and
    the cartesian velocity grid. Interior points come first in `points`.
    """

    domain: ConvexDomain
    interior: np.ndarray
    boundary: np.ndarray
    velocities: VelocityQuadrature
    interior_weights: np.ndarray
    boundary_weights: np.ndarray
    near_wall_width: float
    strata: np.ndarray = field(default=None)

    @classmethod
    def build(
        cls,
        domain: ConvexDomain,
        interior_points=400,
        boundary_points=200,
        near_wall_fraction=0.5,
        near_wall_width=0.1,
        velocity_nodes=10,
        velocity_box=4.5,
        seed=0,
    ) -> PhaseGrid:
        sobol = qmc.Sobol(d=3, scramble=True, seed=seed)
        box = domain.bounding_box
        n_draw = 2 ** int(math.ceil(math.log2(max(16 * interior_points, 1024))))
        candidates = qmc.scale(sobol.random(n_draw), -box, box)
        inside = candidates[domain.xi(candidates) < -1e-9]
        distance = domain.boundary_distance_lower(inside)
        near = inside[distance < near_wall_width]
        deep = inside[distance >= near_wall_width]
        n_near = min(int(round(near_wall_fraction * interior_points)), len(near))
        n_deep = min(interior_points - n_near, len(deep))
        if n_near + n_deep < interior_points:
            log.warning("phase grid: only %d interior points available", n_near + n_deep)
        # stratum volume over stratum count; volumes from the accepted Sobol fractions
        near_volume = domain.volume * len(near) / len(inside)
        deep_volume = domain.volume - near_volume
        interior = np.concatenate([near[:n_near], deep[:n_deep]])
        weights = np.concatenate(
            [np.full(n_near, near_volume / max(n_near, 1)), np.full(n_deep, deep_volume / max(n_deep, 1))]
        )
        strata = np.concatenate([np.zeros(n_near, dtype=int), np.ones(n_deep, dtype=int)])

        directions = fibonacci_directions(boundary_points)
        boundary = domain.boundary_point(directions)
        normals = domain.normal(boundary)
        radius = np.linalg.norm(boundary, axis=1)
        # radial projection of equal solid angles: dS = |x|^2 dOmega / (d . n)
        boundary_weights = 4.0 * math.pi / boundary_points * radius**2 / np.sum(directions * normals, axis=1)

        log.info(
            "phase grid: %d interior (%d near wall), %d boundary, %d velocities",
            len(interior),
            n_near,
            boundary_points,
            velocity_nodes**3,
        )
        return cls(
            domain=domain,
            interior=interior,
            boundary=boundary,
            velocities=VelocityQuadrature.cartesian(velocity_nodes, velocity_box),
            interior_weights=weights,
            boundary_weights=boundary_weights,
            near_wall_width=near_wall_width,
            strata=strata,
        )

    @property
    def points(self) -> np.ndarray:
        return np.concatenate([self.interior, self.boundary])

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def n_points(self) -> int:
        return len(self.interior) + len(self.boundary)

    @property
    def n_velocities(self) -> int:
        return len(self.velocities)

    @property
    def normals(self) -> np.ndarray:
        return self.domain.normal(self.boundary)

    def incoming_mask(self) -> np.ndarray:
        """(n_boundary, n_velocities) mask of n(x).v < 0"""
        return self.normals @ self.velocities.nodes.T < 0

    def refined(self, seed=0) -> PhaseGrid:
        """Grid with twice the spatial points and velocity nodes per axis"""
        near = int(np.count_nonzero(self.strata == 0))
        return PhaseGrid.build(
            self.domain,
            interior_points=2 * self.n_interior,
            boundary_points=2 * len(self.boundary),
            near_wall_fraction=near / max(self.n_interior, 1),
            near_wall_width=self.near_wall_width,
            velocity_nodes=2 * self.velocities.shape[0],
            velocity_box=self.velocities.v_max,
            seed=seed,
        )


@dataclass(frozen=True)
class Field:
    """Values of f at (point, velocity node); rows follow PhaseGrid.points"""

    values: np.ndarray
    time: float = 0.0

    @classmethod
    def zeros(cls, grid: PhaseGrid, time=0.0) -> Field:
        return cls(np.zeros((grid.n_points, grid.n_velocities)), time)

    @classmethod
    def from_function(cls, grid: PhaseGrid, function, time=0.0) -> Field:
        """Tabulate function(x, v) with x of shape (P, 1, 3) and v of shape (1, N, 3)"""
        x = grid.points[:, None, :]
        v = grid.velocities.nodes[None, :, :]
        values = np.broadcast_to(function(x, v), (grid.n_points, grid.n_velocities))
        return cls(np.array(values, dtype=float), time)

    def with_values(self, values, time=None) -> Field:
        return replace(self, values=np.asarray(values), time=self.time if time is None else time)

    def weighted_sup(self, grid: PhaseGrid, params: KernelParams) -> float:
        return float(np.max(np.abs(self.values * params.w(grid.velocities.nodes)), initial=0.0))

    def boundary_weighted_sup(self, grid: PhaseGrid, params: KernelParams) -> float:
        values = self.values[grid.n_interior :]
        return float(np.max(np.abs(values * params.w(grid.velocities.nodes)), initial=0.0))

    def mass(self, grid: PhaseGrid) -> float:
        """sum over interior points and velocities of f sqrt(mu) dx dv"""
        velocity_moment = self.values[: grid.n_interior] @ (
            sqrt_mu(grid.velocities.nodes) * grid.velocities.weights
        )
        return float(grid.interior_weights @ velocity_moment)


def mass_functional(grid: PhaseGrid) -> np.ndarray:
    """Coefficients c with mass(f) = sum(c * f.values)"""
    coefficients = np.zeros((grid.n_points, grid.n_velocities))
    coefficients[: grid.n_interior] = np.outer(
        grid.interior_weights, sqrt_mu(grid.velocities.nodes) * grid.velocities.weights
    )
    return coefficients


class BarycentricInterpolator:
    """
    Piecewise-linear interpolation on the Delaunay tetrahedra of the collocation points.
    Queries outside the hull fall back to inverse-distance weights of the nearest nodes.
    """

    def __init__(self, points, fallback_neighbors=4):
        self.points = np.asarray(points, dtype=float)
        self.triangulation = Delaunay(self.points)
        self.tree = cKDTree(self.points)
        self.fallback_neighbors = fallback_neighbors
        self.outside = 0

    def weights(self, queries):
        """(indices, weights), each of shape (M, 4)"""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        simplex = self.triangulation.find_simplex(queries)
        transform = self.triangulation.transform[simplex]
        partial = np.einsum("mij,mj->mi", transform[:, :3], queries - transform[:, 3])
        weights = np.concatenate([partial, 1.0 - partial.sum(axis=1, keepdims=True)], axis=1)
        indices = self.triangulation.simplices[simplex]
        outside = simplex < 0
        if np.any(outside):
            self.outside += int(np.count_nonzero(outside))
            distance, neighbor = self.tree.query(queries[outside], k=self.fallback_neighbors)
            inverse = 1.0 / np.maximum(distance, 1e-14)
            indices[outside] = neighbor
            weights[outside] = inverse / inverse.sum(axis=1, keepdims=True)
        return indices, np.clip(weights, 0.0, None)


class BoundaryInterpolator:
    """
    Interpolation of boundary-node data to arbitrary boundary points: the ray from the
    domain center through the point crosses one facet of the convex hull of the nodes,
    and the barycentric weights of that crossing are used.
    """

    def __init__(self, nodes, center=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.center = np.zeros(3) if center is None else np.asarray(center, dtype=float)
        self.hull = ConvexHull(self.nodes)
        self.facets = self.hull.simplices
        self.equations = self.hull.equations

    def weights(self, queries, chunk=4096):
        """(indices, weights), each of shape (M, 3)"""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        indices = np.empty((len(queries), 3), dtype=int)
        weights = np.empty((len(queries), 3))
        normal = self.equations[:, :3]
        offset = self.equations[:, 3] + normal @ self.center
        for start in range(0, len(queries), chunk):
            direction = queries[start : start + chunk] - self.center
            along = direction @ normal.T
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(along > 0, -offset / along, np.inf)
            facet = np.argmin(t, axis=1)
            if not np.all(np.isfinite(t[np.arange(len(facet)), facet])):
                raise InterpolationOutOfRange("boundary query does not cross the node hull")
            hit = self.center + t[np.arange(len(facet)), facet][:, None] * direction
            corners = self.nodes[self.facets[facet]]
            indices[start : start + chunk] = self.facets[facet]
            weights[start : start + chunk] = _triangle_barycentric(hit, corners)
        return indices, weights


def _triangle_barycentric(points, corners):
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    v0, v1, v2 = b - a, c - a, points - a
    d00 = np.sum(v0 * v0, axis=1)
    d01 = np.sum(v0 * v1, axis=1)
    d11 = np.sum(v1 * v1, axis=1)
    d20 = np.sum(v2 * v0, axis=1)
    d21 = np.sum(v2 * v1, axis=1)
    denominator = d00 * d11 - d01 * d01
    beta = (d11 * d20 - d01 * d21) / denominator
    gamma = (d00 * d21 - d01 * d20) / denominator
    weights = np.stack([1.0 - beta - gamma, beta, gamma], axis=1)
    weights = np.clip(weights, 0.0, None)
    return weights / weights.sum(axis=1, keepdims=True)


def _quadratic_basis(offsets):
    x, y, z = offsets[..., 0], offsets[..., 1], offsets[..., 2]
    one = np.ones_like(x)
    return np.stack([one, x, y, z, x * x, y * y, z * z, x * y, x * z, y * z], axis=-1)


class QuadraticMLS:
    """
    Local quadratic least-squares fits over the nearest collocation points. The value
    at a query is a fixed linear combination of the neighbor values, so evaluation
    reduces to a gather and a weighted sum.
    """

    def __init__(self, points, neighbors=MLS_NEIGHBORS):
        self.points = np.asarray(points, dtype=float)
        self.tree = cKDTree(self.points)
        self.neighbors = min(neighbors, len(self.points))

    def stencil(self, queries):
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        distance, indices = self.tree.query(queries, k=self.neighbors)
        scale = np.maximum(distance[:, -1:], 1e-12)
        offsets = (self.points[indices] - queries[:, None, :]) / scale[..., None]
        weights = np.linalg.pinv(_quadratic_basis(offsets))[:, 0, :]
        return indices, weights

    def evaluate(self, values, queries, chunk=256):
        """Interpolated rows for values shaped (points, velocities)"""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        out = np.empty((len(queries), values.shape[1]))
        for start in range(0, len(queries), chunk):
            indices, weights = self.stencil(queries[start : start + chunk])
            out[start : start + chunk] = np.einsum("mk,mkn->mn", weights, values[indices])
        return out


def field_gradient(field_values, grid: PhaseGrid, mls: QuadraticMLS | None = None, max_step=0.02):
    """
    grad_x f at the interior points by central differences of the quadratic fit, with
    step min(max_step, dist(x, boundary) / 4). Shape (n_interior, n_velocities, 3).
    """
    mls = mls or QuadraticMLS(grid.points)
    step = np.minimum(max_step, grid.domain.boundary_distance_lower(grid.interior) / 4.0)
    step = np.maximum(step, 1e-8)
    gradient = np.empty((grid.n_interior, grid.n_velocities, 3))
    for axis in range(3):
        offset = np.zeros((grid.n_interior, 3))
        offset[:, axis] = step
        forward = mls.evaluate(field_values, grid.interior + offset)
        backward = mls.evaluate(field_values, grid.interior - offset)
        gradient[..., axis] = (forward - backward) / (2.0 * step[:, None])
    return gradient


def write_snapshot(path, field: Field):
    """
    Flat little-endian layout: b"BZWF", uint32 version, uint64 n_points,
    uint64 n_velocities, float64 time, then float64 values row-major (point, velocity).
    """
    values = np.ascontiguousarray(field.values, dtype="<f8")
    with open(path, "wb") as snapshot:
        snapshot.write(SNAPSHOT_MAGIC)
        snapshot.write(np.array([SNAPSHOT_VERSION], dtype="<u4").tobytes())
        snapshot.write(np.array(values.shape, dtype="<u8").tobytes())
        snapshot.write(np.array([field.time], dtype="<f8").tobytes())
        snapshot.write(values.tobytes())


def read_snapshot(path) -> Field:
    with open(path, "rb") as snapshot:
        data = snapshot.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path} is not a boltzwall snapshot")
    version = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    n_points, n_velocities = (int(n) for n in np.frombuffer(data, dtype="<u8", count=2, offset=8))
    time = float(np.frombuffer(data, dtype="<f8", count=1, offset=24)[0])
    values = np.frombuffer(data, dtype="<f8", count=n_points * n_velocities, offset=32)
    return Field(values.reshape(n_points, n_velocities).copy(), time)
