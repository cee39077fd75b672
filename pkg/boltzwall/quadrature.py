"""
Quadrature rules shared by the collision, boundary, solver and verify modules.

Velocity integrals use product rules: Gauss-Legendre in the radius (with the r**2
Jacobian folded into the weights), Gauss-Legendre in the polar cosine and a uniform
midpoint rule in the azimuth. Rules centered at a singular point absorb a 1/|u - v|
factor through the r**2 Jacobian. Cartesian cell-centered grids carry the tabulated
fields of the solver and support trilinear interpolation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial.legendre import leggauss

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


def gauss_legendre(n, a=-1.0, b=1.0):
    """Gauss-Legendre nodes and weights on [a, b]"""
    x, w = leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def log_gauss_legendre(n, lo, hi):
    """
    Nodes and weights for the integral of g(c) over [lo, hi], 0 < lo < hi, using the
    substitution c = exp(y). Resolves integrands that behave like powers of c near 0.
    """
    y, w = gauss_legendre(n, np.log(lo), np.log(hi))
    c = np.exp(y)
    return c, w * c


def exponential_segment_rule(n, rate, length):
    """
    Nodes s and weights W such that sum(W * g(s)) approximates the integral of
    exp(-rate * s) * g(s) over [0, length].

    Gauss-Legendre in tau = 1 - exp(-rate * s), so the exponential factor is integrated
    exactly. `rate` and `length` broadcast; the rule is added as a trailing axis.
    """
    tau, w = gauss_legendre(n, 0.0, 1.0)
    rate = np.asarray(rate, dtype=float)[..., None]
    length = np.asarray(length, dtype=float)[..., None]
    total = -np.expm1(-rate * length)
    s = -np.log1p(-tau * total) / rate
    weights = w * total / rate
    return s, weights


def orthonormal_frame(normal):
    """
    Rows (t1, t2, n) of a right-handed orthonormal frame whose last row is the unit
    vector along `normal`.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(n)))] = 1.0
    t1 = np.cross(n, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.array([t1, t2, n])


@dataclass(frozen=True)
class SphereRule:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def product(cls, n_polar, n_azimuthal) -> SphereRule:
        c, wc = gauss_legendre(n_polar, -1.0, 1.0)
        phi = (np.arange(n_azimuthal) + 0.5) * TWO_PI / n_azimuthal
        s = np.sqrt(1.0 - c**2)
        nodes = np.stack(
            [
                s[:, None] * np.cos(phi)[None, :],
                s[:, None] * np.sin(phi)[None, :],
                np.broadcast_to(c[:, None], (n_polar, n_azimuthal)),
            ],
            axis=-1,
        ).reshape(-1, 3)
        weights = np.repeat(wc * TWO_PI / n_azimuthal, n_azimuthal)
        return cls(nodes=nodes, weights=weights)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class VelocityQuadrature:
    """
    Node set in velocity space with positive weights.

    kind is one of "spherical" (centered at `center`), "half_space" (polar axis along
    `normal`, only n.v > 0 or n.v < 0 depending on `outgoing`) and "cartesian"
    (cell-centered grid on the box [-v_max, v_max]^3).
    """

    nodes: np.ndarray
    weights: np.ndarray
    v_max: float
    kind: str
    shape: tuple
    center: np.ndarray
    normal: np.ndarray | None = None
    outgoing: bool = True
    axis: np.ndarray | None = None

    @classmethod
    def spherical(cls, n_radial, n_polar, n_azimuthal, v_max, center=None):
        center = np.zeros(3) if center is None else np.asarray(center, dtype=float)
        r, wr = gauss_legendre(n_radial, 0.0, v_max)
        sphere = SphereRule.product(n_polar, n_azimuthal)
        offsets = r[:, None, None] * sphere.nodes[None, :, :]
        weights = (wr * r**2)[:, None] * sphere.weights[None, :]
        return cls(
            nodes=center + offsets.reshape(-1, 3),
            weights=weights.ravel(),
            v_max=float(v_max),
            kind="spherical",
            shape=(n_radial, n_polar, n_azimuthal),
            center=center,
        )

    @classmethod
    def half_space(cls, normal, n_radial, n_polar, n_azimuthal, v_max, outgoing=True):
        frame = orthonormal_frame(normal)
        r, wr = gauss_legendre(n_radial, 0.0, v_max)
        c, wc = gauss_legendre(n_polar, 0.0, 1.0)
        phi = (np.arange(n_azimuthal) + 0.5) * TWO_PI / n_azimuthal
        s = np.sqrt(1.0 - c**2)
        sign = 1.0 if outgoing else -1.0
        local = np.stack(
            [
                s[:, None] * np.cos(phi)[None, :],
                s[:, None] * np.sin(phi)[None, :],
                sign * np.broadcast_to(c[:, None], (n_polar, n_azimuthal)),
            ],
            axis=-1,
        ).reshape(-1, 3)
        directions = local @ frame
        angular = np.repeat(wc * TWO_PI / n_azimuthal, n_azimuthal)
        nodes = r[:, None, None] * directions[None, :, :]
        weights = (wr * r**2)[:, None] * angular[None, :]
        return cls(
            nodes=nodes.reshape(-1, 3),
            weights=weights.ravel(),
            v_max=float(v_max),
            kind="half_space",
            shape=(n_radial, n_polar, n_azimuthal),
            center=np.zeros(3),
            normal=frame[2],
            outgoing=outgoing,
        )

    @classmethod
    def cartesian(cls, n, v_max):
        h = 2.0 * v_max / n
        axis = -v_max + (np.arange(n) + 0.5) * h
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
        return cls(
            nodes=grid.reshape(-1, 3),
            weights=np.full(n**3, h**3),
            v_max=float(v_max),
            kind="cartesian",
            shape=(n, n, n),
            center=np.zeros(3),
            axis=axis,
        )

    def __len__(self):
        return len(self.weights)

    @property
    def offsets(self) -> np.ndarray:
        return self.nodes - self.center

    @property
    def spacing(self) -> float:
        if self.kind != "cartesian":
            raise ValueError("spacing is defined for cartesian grids only")
        return float(self.axis[1] - self.axis[0])

    def integrate(self, values) -> np.ndarray:
        """Integral of tabulated values; the last axis runs over the nodes"""
        return np.asarray(values) @ self.weights

    def recentered(self, center) -> VelocityQuadrature:
        center = np.asarray(center, dtype=float)
        return replace(self, nodes=self.offsets + center, center=center)

    def refined(self) -> VelocityQuadrature:
        """Same rule with every node count doubled"""
        if self.kind == "cartesian":
            return VelocityQuadrature.cartesian(2 * self.shape[0], self.v_max)
        n_radial, n_polar, n_azimuthal = (2 * count for count in self.shape)
        if self.kind == "half_space":
            return VelocityQuadrature.half_space(
                self.normal, n_radial, n_polar, n_azimuthal, self.v_max, self.outgoing
            )
        return VelocityQuadrature.spherical(
            n_radial, n_polar, n_azimuthal, self.v_max, self.center
        )


def relative_change(coarse, fine) -> float:
    """|fine - coarse| / |fine|, with an absolute fallback when fine vanishes"""
    coarse = float(coarse)
    fine = float(fine)
    scale = abs(fine)
    if scale < 1e-300:
        return abs(fine - coarse)
    return abs(fine - coarse) / scale
