"""
Diffuse reflection on a non-isothermal wall.

The outgoing trace of f enters only through its flux int_{n.u > 0} f sqrt(mu) (n.u) du,
which is re-emitted with the wall Maxwellian M_W(x, v) = exp(-|v|^2 / 2T_W(x)) / (2 pi T_W^2).
"""
from __future__ import annotations

import importlib
import logging
from dataclasses import dataclass

import numpy as np

from .collision import MaxwellianFamily, mu, sqrt_mu
from .errors import NotOnBoundary, WrongSide
from .geometry import Chart, ConvexDomain
from .quadrature import VelocityQuadrature

log = logging.getLogger(__name__)

DEFAULT_RULE = {"radial_nodes": 32, "polar_nodes": 12, "azimuthal_nodes": 24, "v_max": 10.0}


def isothermal(x):
    x = np.asarray(x, dtype=float)
    return np.zeros(x.shape[:-1])


def linear_x3(x):
    return np.asarray(x, dtype=float)[..., 2]


def quadratic_x3(x):
    x3 = np.asarray(x, dtype=float)[..., 2]
    return 2.0 * x3**2 - 1.0


PROFILES = {
    "isothermal": isothermal,
    "linear_x3": linear_x3,
    "quadratic_x3": quadratic_x3,
}

PROFILE_GRADIENTS = {
    "isothermal": lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    "linear_x3": lambda x: np.broadcast_to([0.0, 0.0, 1.0], np.shape(x)).copy(),
    "quadratic_x3": lambda x: np.stack(
        [np.zeros(np.shape(x)[:-1]), np.zeros(np.shape(x)[:-1]), 4.0 * np.asarray(x)[..., 2]],
        axis=-1,
    ),
}


def import_string(dotted_path):
    """Resolve "package.module.attribute" to the attribute"""
    module_path, _, attribute = dotted_path.rpartition(".")
    if not module_path:
        raise ImportError(f"{dotted_path} is not a dotted path")
    module = importlib.import_module(module_path)
    try:
        return getattr(module, attribute)
    except AttributeError as e:
        raise ImportError(f"{module_path} has no attribute {attribute}") from e


def resolve_profile(profile):
    """Profile shape s(x), given by registry name, dotted path or callable"""
    if callable(profile):
        return profile, None
    if profile in PROFILES:
        return PROFILES[profile], PROFILE_GRADIENTS[profile]
    return import_string(profile), None


class WallTemperature:
    """T_W(x) = base + epsilon * s(x), where s is a profile shape of unit size"""

    def __init__(self, profile="linear_x3", epsilon=0.01, base=1.0):
        self.name = profile if isinstance(profile, str) else getattr(profile, "__name__", "custom")
        self.shape, self._shape_gradient = resolve_profile(profile)
        self.epsilon = float(epsilon)
        self.base = float(base)

    def __repr__(self):
        return f"WallTemperature({self.name!r}, epsilon={self.epsilon}, base={self.base})"

    @property
    def isothermal(self) -> bool:
        return self.epsilon == 0.0 or self.name == "isothermal"

    def __call__(self, x):
        return self.base + self.epsilon * np.asarray(self.shape(x), dtype=float)

    def gradient(self, x, step=1e-6):
        x = np.asarray(x, dtype=float)
        if self._shape_gradient is not None:
            return self.epsilon * self._shape_gradient(x)
        columns = []
        for axis in range(3):
            offset = np.zeros(3)
            offset[axis] = step
            columns.append((self.shape(x + offset) - self.shape(x - offset)) / (2.0 * step))
        return self.epsilon * np.stack(columns, axis=-1)

    def tangential_gradient(self, x, domain: ConvexDomain):
        n = domain.normal(x)
        g = self.gradient(x)
        return g - np.sum(g * n, axis=-1, keepdims=True) * n

    def c1_norm(self, domain: ConvexDomain, n_polar=16, n_azimuthal=32) -> float:
        """sup |T_W - base| + sup |tangential grad T_W| over boundary quadrature nodes"""
        points, _, _ = domain.surface_quadrature(n_polar, n_azimuthal)
        deviation = np.max(np.abs(self(points) - self.base))
        slope = np.max(np.linalg.norm(self.tangential_gradient(points, domain), axis=-1))
        return float(deviation + slope)


@dataclass(frozen=True)
class BoundaryFlux:
    x: np.ndarray
    normal: np.ndarray
    value: float


def _require_boundary(domain: ConvexDomain, x):
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(domain.xi(x)) > max(domain.tol_root, 1e-10)):
        raise NotOnBoundary(f"{x.tolist()} is not on the boundary")
    return x


def half_space_rule(normal, outgoing=True, rule=None) -> VelocityQuadrature:
    rule = rule or DEFAULT_RULE
    return VelocityQuadrature.half_space(
        normal,
        rule["radial_nodes"],
        rule["polar_nodes"],
        rule["azimuthal_nodes"],
        rule["v_max"],
        outgoing=outgoing,
    )


def wall_maxwellian(x, v, Tw: WallTemperature, domain: ConvexDomain):
    x = _require_boundary(domain, x)
    return MaxwellianFamily.wall(v, Tw(x))


def outgoing_flux(f, x, domain: ConvexDomain, rule=None) -> BoundaryFlux:
    """int_{n.u > 0} f(u) sqrt(mu(u)) (n.u) du for a callable velocity profile f"""
    x = _require_boundary(domain, x)
    n = domain.normal(x)
    quad = half_space_rule(n, outgoing=True, rule=rule)
    values = f(quad.nodes) * sqrt_mu(quad.nodes) * (quad.nodes @ n)
    return BoundaryFlux(x=x, normal=n, value=float(quad.integrate(values)))


def outgoing_flux_chart(f, x, chart: Chart, domain: ConvexDomain, rule=None) -> BoundaryFlux:
    """
    The same flux written in chart velocities V = T v, where T is the orthonormal chart
    frame at x: dv = dV and n.v = V_3.
    """
    x = _require_boundary(domain, x)
    frame = chart.frame(chart.coordinates(x))
    quad = half_space_rule(np.array([0.0, 0.0, 1.0]), outgoing=True, rule=rule)
    v = quad.nodes @ frame
    values = f(v) * sqrt_mu(v) * quad.nodes[:, 2]
    return BoundaryFlux(x=x, normal=frame[2], value=float(quad.integrate(values)))


def incoming_flux(g, x, domain: ConvexDomain, rule=None) -> float:
    """int_{n.v < 0} g(v) sqrt(mu(v)) |n.v| dv"""
    x = _require_boundary(domain, x)
    n = domain.normal(x)
    quad = half_space_rule(n, outgoing=False, rule=rule)
    values = g(quad.nodes) * sqrt_mu(quad.nodes) * np.abs(quad.nodes @ n)
    return float(quad.integrate(values))


def diffuse_reflect(flux: BoundaryFlux, x, v, Tw: WallTemperature, domain: ConvexDomain):
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(v @ domain.normal(x) >= 0):
        raise WrongSide(f"v={v.tolist()} is not incoming at x={x.tolist()}")
    return wall_maxwellian(x, v, Tw, domain) / sqrt_mu(v) * flux.value


def project_gamma(flux: BoundaryFlux, x, v, domain: ConvexDomain):
    _require_boundary(domain, x)
    return sqrt_mu(v) * flux.value


def steady_remainder(x, v, Tw: WallTemperature, domain: ConvexDomain):
    """r(x, v) = (M_W(x, v) - mu(v)) / sqrt(mu(v))"""
    return (wall_maxwellian(x, v, Tw, domain) - mu(v)) / sqrt_mu(v)
