"""
Hard-sphere collision operators around the global Maxwellian mu(v) = exp(-|v|^2/2) / 2pi.

The linearized operator is L f = nu f - K f with K f(v) = int k(v, u) f(u) du and the
signed Grad kernel k = c_k2 k2 - c_k1 k1:

    k1(v, u) = |u - v| exp(-(|v|^2 + |u|^2) / 4)
    k2(v, u) = exp(-|u - v|^2 / 8 - (|u|^2 - |v|^2)^2 / (8 |u - v|^2)) / |u - v|

With this mu the exact constants are c_k1 = 1 and c_k2 = 4.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize
from scipy.special import erf

from .errors import QuadratureUnconverged, SingularPoint
from .quadrature import SphereRule, VelocityQuadrature, relative_change

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
NU_AT_ZERO = 8.0 * math.pi


@dataclass(frozen=True)
class KernelParams:
    varrho: float = 0.125
    varrho_tilde: float = 0.0625
    theta: float = 0.1
    theta_tilde: float = 0.015625
    c_k1: float = 1.0
    c_k2: float = 4.0

    def __post_init__(self):
        if not 0 < self.varrho <= 0.125:
            raise ValueError(f"varrho must lie in (0, 1/8]: {self.varrho}")
        if not 0 < self.theta_tilde / 2 < self.varrho:
            raise ValueError(f"theta_tilde must satisfy 0 < theta_tilde/2 < varrho: {self.theta_tilde}")
        if not 0 < self.varrho_tilde < self.varrho - self.theta_tilde / 2:
            raise ValueError(
                f"varrho_tilde must satisfy 0 < varrho_tilde < varrho - theta_tilde/2: {self.varrho_tilde}"
            )
        if not 0 < self.theta < 0.25:
            raise ValueError(f"theta must lie in (0, 1/4): {self.theta}")
        if self.c_k1 <= 0 or self.c_k2 <= 0:
            raise ValueError("kernel constants must be positive")

    def w(self, v):
        """Sup-norm weight exp(theta |v|^2)"""
        return np.exp(self.theta * np.sum(np.asarray(v) ** 2, axis=-1))

    def w_tilde(self, v):
        return np.exp(self.theta_tilde * np.sum(np.asarray(v) ** 2, axis=-1))

    def k_varrho(self, v, u, rate=None):
        """Comparison kernel exp(-rate |v - u|^2) / |v - u|, rate defaulting to varrho_tilde"""
        rate = self.varrho_tilde if rate is None else rate
        d = np.linalg.norm(np.asarray(v) - np.asarray(u), axis=-1)
        return np.exp(-rate * d**2) / d


class MaxwellianFamily:
    """mu and the wall Maxwellians M_{1,0,T}"""

    @staticmethod
    def mu(v):
        return np.exp(-0.5 * np.sum(np.asarray(v) ** 2, axis=-1)) / TWO_PI

    @staticmethod
    def sqrt_mu(v):
        return np.exp(-0.25 * np.sum(np.asarray(v) ** 2, axis=-1)) / math.sqrt(TWO_PI)

    @staticmethod
    def wall(v, temperature):
        """M_{1,0,T}(v) = exp(-|v|^2 / 2T) / (2 pi T^2)"""
        temperature = np.asarray(temperature, dtype=float)
        sq = np.sum(np.asarray(v) ** 2, axis=-1)
        return np.exp(-sq / (2.0 * temperature)) / (TWO_PI * temperature**2)

    @classmethod
    def wall_flux(cls, temperature, normal=(0.0, 0.0, 1.0), quad: VelocityQuadrature | None = None):
        """int_{n.v < 0} M_{1,0,T} |n.v| dv, equal to 1 for every T"""
        if quad is None:
            quad = VelocityQuadrature.half_space(normal, 32, 12, 24, 10.0 * math.sqrt(temperature), outgoing=False)
        values = cls.wall(quad.nodes, temperature) * np.abs(quad.nodes @ quad.normal)
        return float(quad.integrate(values))


mu = MaxwellianFamily.mu
sqrt_mu = MaxwellianFamily.sqrt_mu


def _pair_geometry(v, u):
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    d = v - u
    return v, u, d, np.linalg.norm(d, axis=-1)


def kernel_parts(v, u, params: KernelParams):
    """(c_k1 k1, c_k2 k2); raises SingularPoint when u = v"""
    v, u, d, dist = _pair_geometry(v, u)
    if np.any(dist < 1e-12):
        raise SingularPoint("Grad kernel evaluated at u = v")
    sv = np.sum(v**2, axis=-1)
    su = np.sum(u**2, axis=-1)
    k1 = params.c_k1 * dist * np.exp(-0.25 * (sv + su))
    k2 = params.c_k2 / dist * np.exp(-dist**2 / 8.0 - (su - sv) ** 2 / (8.0 * dist**2))
    return k1, k2


def grad_kernel(v, u, params: KernelParams):
    """The signed Grad kernel k(v, u) = c_k2 k2 - c_k1 k1"""
    k1, k2 = kernel_parts(v, u, params)
    return k2 - k1


def kernel_gradient(v, u, params: KernelParams):
    """grad_v k(v, u), shape (..., 3)"""
    v, u, d, dist = _pair_geometry(v, u)
    k1, k2 = kernel_parts(v, u, params)
    dsq = (dist**2)[..., None]
    q = (np.sum(u**2, axis=-1) - np.sum(v**2, axis=-1))[..., None]
    grad_k1 = k1[..., None] * (d / dsq - 0.5 * v)
    grad_k2 = k2[..., None] * (
        -d / dsq - 0.25 * d + q * v / (2.0 * dsq) + q**2 * d / (4.0 * dsq**2)
    )
    return grad_k2 - grad_k1


def nu_closed_form(v):
    """nu(v) = 2 pi int |v - u| mu(u) du in closed form"""
    r = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    safe = np.where(r > 1e-8, r, 1.0)
    value = TWO_PI * math.sqrt(TWO_PI) * (
        math.sqrt(2.0 / math.pi) * np.exp(-0.5 * r**2)
        + (r + 1.0 / safe) * erf(r / math.sqrt(2.0))
    )
    return np.where(r > 1e-8, value, NU_AT_ZERO + 0.0 * r)


def _nu_quadrature(v, quad: VelocityQuadrature):
    nodes = quad.recentered(v)
    integrand = TWO_PI * np.linalg.norm(nodes.offsets, axis=-1) * mu(nodes.nodes)
    return float(nodes.integrate(integrand))


def nu(v, quad: VelocityQuadrature, tol=1e-5):
    """
    Collision frequency by quadrature centered at v. The angular integral is reduced
    with int_{S^2} |k . omega| domega = 2 pi |k|.
    """
    v = np.asarray(v, dtype=float)
    coarse = _nu_quadrature(v, quad)
    fine = _nu_quadrature(v, quad.refined())
    change = relative_change(coarse, fine)
    if change > tol:
        raise QuadratureUnconverged(f"nu({v.tolist()}) refinement change {change:.2e} > {tol:.0e}")
    return fine


def nu_bracket(v_max=8.0, n=2001):
    """(min, max) of nu(v) / <v> over |v| <= v_max"""
    r = np.linspace(0.0, v_max, n)
    v = np.stack([r, np.zeros_like(r), np.zeros_like(r)], axis=1)
    ratio = nu_closed_form(v) / np.sqrt(1.0 + r**2)
    return float(ratio.min()), float(ratio.max())


def _apply_K_once(f, v, quad: VelocityQuadrature, params: KernelParams):
    nodes = quad.recentered(v)
    values = grad_kernel(v, nodes.nodes, params) * f(nodes.nodes)
    return float(nodes.integrate(values))


def apply_K(f, v, quad: VelocityQuadrature, params: KernelParams, tol=None):
    """
    K f(v) for a callable f, in spherical coordinates centered at v so that the r^2
    Jacobian absorbs the 1/|v - u| singularity. With `tol`, the rule is refined once
    and QuadratureUnconverged raised if the two results differ by more than tol.
    """
    v = np.asarray(v, dtype=float)
    value = _apply_K_once(f, v, quad, params)
    if tol is None:
        return value
    fine = _apply_K_once(f, v, quad.refined(), params)
    change = relative_change(value, fine)
    if change > tol:
        raise QuadratureUnconverged(f"K f({v.tolist()}) refinement change {change:.2e} > {tol:.0e}")
    return fine


def _collision_points(v, quad, sphere):
    u = quad.nodes[:, None, :]
    omega = sphere.nodes[None, :, :]
    dot = np.sum((v - u) * omega, axis=-1)
    u_prime = u + dot[..., None] * omega
    v_prime = v - dot[..., None] * omega
    weights = np.abs(dot) * quad.weights[:, None] * sphere.weights[None, :]
    return u_prime, v_prime, weights


def _inside(u_prime, v_prime, v_max):
    """Pairs whose post-collision velocities both stay in the ball |v| <= v_max"""
    return (np.linalg.norm(u_prime, axis=-1) <= v_max) & (np.linalg.norm(v_prime, axis=-1) <= v_max)


def apply_Gamma(f, g, v, quad: VelocityQuadrature, sphere: SphereRule, return_dropped=False):
    """
    Gamma(f, g)(v) = int int |(v - u).omega| sqrt(mu(u)) [f(u') g(v') - f(u) g(v)],
    with f, g callables. Pairs with a post-collision velocity beyond quad.v_max are
    dropped; with return_dropped the result is (value, number of dropped pairs).
    """
    v = np.asarray(v, dtype=float)
    u_prime, v_prime, weights = _collision_points(v, quad, sphere)
    inside = _inside(u_prime, v_prime, quad.v_max)
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        log.debug("Gamma at v=%s: %d of %d post-collision pairs dropped", v.tolist(), dropped, inside.size)
    root = sqrt_mu(quad.nodes)[:, None]
    gain = np.where(inside, f(u_prime) * g(v_prime), 0.0)
    loss_rate = TWO_PI * np.linalg.norm(v - quad.nodes, axis=-1)
    loss = float(np.sum(loss_rate * quad.weights * sqrt_mu(quad.nodes) * f(quad.nodes))) * float(g(v))
    value = float(np.sum(weights * root * gain)) - loss
    if return_dropped:
        return value, dropped
    return value


def collision_operator(F, G, v, quad: VelocityQuadrature, sphere: SphereRule):
    """Q(F, G)(v) by quadrature over u and omega"""
    v = np.asarray(v, dtype=float)
    u_prime, v_prime, weights = _collision_points(v, quad, sphere)
    gain = float(np.sum(weights * F(u_prime) * G(v_prime)))
    loss_rate = TWO_PI * np.linalg.norm(v - quad.nodes, axis=-1)
    loss = float(np.sum(loss_rate * quad.weights * F(quad.nodes))) * float(G(v))
    return gain - loss


def linearized_operator_direct(f, v, quad: VelocityQuadrature, sphere: SphereRule):
    """L f(v) = -[Q(mu, sqrt(mu) f) + Q(sqrt(mu) f, mu)](v) / sqrt(mu(v))"""

    def weighted(u):
        return sqrt_mu(u) * f(u)

    v = np.asarray(v, dtype=float)
    total = collision_operator(mu, weighted, v, quad, sphere) + collision_operator(
        weighted, mu, v, quad, sphere
    )
    return -total / float(sqrt_mu(v))


def calibrate_kernel_constants(
    params: KernelParams,
    quad: VelocityQuadrature,
    sphere: SphereRule,
    points,
    rates=(1.0, 0.5, 0.75),
):
    """
    Least-squares fit of (c_k1, c_k2) so that nu f - K f matches the direct
    linearized operator on the test family f(v) = exp(-a |v|^2).
    Returns (c_k1, c_k2, relative residual).
    """
    unit = KernelParams(
        params.varrho, params.varrho_tilde, params.theta, params.theta_tilde, 1.0, 1.0
    )
    rows = []
    rhs = []
    for rate in rates:

        def f(u, rate=rate):
            return np.exp(-rate * np.sum(np.asarray(u) ** 2, axis=-1))

        for v in np.atleast_2d(points):
            nodes = quad.recentered(v)
            k1, k2 = kernel_parts(v, nodes.nodes, unit)
            fu = f(nodes.nodes)
            target = linearized_operator_direct(f, v, quad, sphere) - float(nu_closed_form(v) * f(v))
            # L f - nu f = c_k1 K1 f - c_k2 K2 f
            rows.append([nodes.integrate(k1 * fu), -nodes.integrate(k2 * fu)])
            rhs.append(target)
    rows = np.array(rows)
    rhs = np.array(rhs)
    solution, *_ = np.linalg.lstsq(rows, rhs, rcond=None)
    residual = float(np.linalg.norm(rows @ solution - rhs) / max(np.linalg.norm(rhs), 1e-300))
    log.info("kernel calibration: c_k1=%.6f c_k2=%.6f residual=%.2e", solution[0], solution[1], residual)
    return float(solution[0]), float(solution[1]), residual


def read_calibration(path) -> dict:
    """
    Read a calibration cache: one `key = value` per line, `#` comments.
    """
    values = {}
    with open(path, encoding="utf-8") as calibration_file:
        for line in calibration_file:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = float(value)
    return values


def write_calibration(path, c_k1, c_k2, residual, nodes):
    with open(path, "w", encoding="utf-8") as calibration_file:
        calibration_file.write("# boltzwall kernel calibration\n")
        calibration_file.write(f"c_k1 = {c_k1:.12e}\n")
        calibration_file.write(f"c_k2 = {c_k2:.12e}\n")
        calibration_file.write(f"residual = {residual:.6e}\n")
        calibration_file.write(f"nodes = {int(nodes)}\n")


def _sample_pairs(rng, samples, v_max):
    pairs = rng.uniform(-v_max, v_max, size=(2 * samples, 2, 3))
    keep = np.all(np.linalg.norm(pairs, axis=-1) <= v_max, axis=1)
    pairs = pairs[keep][:samples]
    return pairs[:, 0], pairs[:, 1]


def _polished_sup(ratio, v, u, v_max, n_starts=5):
    """Sup of ratio(v, u) over sampled pairs, refined by local maximization"""
    values = ratio(v, u)
    best = float(np.max(values))
    for index in np.argsort(values)[-n_starts:]:

        def objective(z):
            a, b = z[:3], z[3:]
            if np.linalg.norm(a) > v_max or np.linalg.norm(b) > v_max:
                return 0.0
            return -float(ratio(a[None], b[None])[0])

        start = np.concatenate([v[index], u[index]])
        result = minimize(objective, start, method="L-BFGS-B", bounds=[(-v_max, v_max)] * 6)
        if np.isfinite(result.fun):
            best = max(best, -float(result.fun))
    return best


def kernel_weight_bound_check(params: KernelParams, samples, rng=None, v_max=10.0):
    """sup |k(v, u)| exp(theta_tilde (|v|^2 - |u|^2)) / k_varrho_tilde(v, u)"""
    rng = np.random.default_rng(rng)
    v, u = _sample_pairs(rng, samples, v_max)

    def ratio(a, b):
        dist = np.linalg.norm(a - b, axis=-1)
        a = np.where((dist < 1e-9)[..., None], a + 1e-9, a)
        weight = np.exp(params.theta_tilde * (np.sum(a**2, axis=-1) - np.sum(b**2, axis=-1)))
        return np.abs(grad_kernel(a, b, params)) * weight / params.k_varrho(a, b)

    sup = _polished_sup(ratio, v, u, v_max)
    return sup if np.isfinite(sup) else math.inf


def kernel_gradient_bound_check(params: KernelParams, samples, rng=None, v_max=10.0):
    """sup |grad_v k| exp(theta_tilde (|v|^2 - |u|^2)) / ((1 + |v|^2) k_varrho_tilde / |v - u|)"""
    rng = np.random.default_rng(rng)
    v, u = _sample_pairs(rng, samples, v_max)

    def ratio(a, b):
        dist = np.linalg.norm(a - b, axis=-1)
        a = np.where((dist < 1e-9)[..., None], a + 1e-9, a)
        dist = np.linalg.norm(a - b, axis=-1)
        weight = np.exp(params.theta_tilde * (np.sum(a**2, axis=-1) - np.sum(b**2, axis=-1)))
        bound = (1.0 + np.sum(a**2, axis=-1)) * params.k_varrho(a, b) / dist
        return np.linalg.norm(kernel_gradient(a, b, params), axis=-1) * weight / bound

    sup = _polished_sup(ratio, v, u, v_max)
    return sup if np.isfinite(sup) else math.inf


class KernelMatrix:
    """
    Discrete K on a cartesian velocity grid. Off-diagonal entries are k(v_i, v_j) h^3;
    the diagonal is fixed so that K sqrt(mu) = nu sqrt(mu) holds exactly, which keeps
    sqrt(mu) in the null space of the discrete L = nu - K.
    """

    def __init__(self, quad: VelocityQuadrature, params: KernelParams):
        if quad.kind != "cartesian":
            raise ValueError("KernelMatrix needs a cartesian velocity grid")
        self.quad = quad
        self.params = params
        nodes = quad.nodes
        n = len(nodes)
        v = np.repeat(nodes, n, axis=0).reshape(n, n, 3)
        u = np.broadcast_to(nodes, (n, n, 3))
        off = ~np.eye(n, dtype=bool)
        matrix = np.zeros((n, n))
        matrix[off] = grad_kernel(v[off], u[off], params) * np.broadcast_to(quad.weights, (n, n))[off]
        self.nu = nu_closed_form(nodes)
        root = sqrt_mu(nodes)
        matrix[np.diag_indices(n)] = (self.nu * root - matrix @ root) / root
        self.matrix = matrix

    def __call__(self, f):
        """K f for values with the velocity index last"""
        return np.asarray(f) @ self.matrix.T

    def linearized(self, f):
        f = np.asarray(f)
        return self.nu * f - self(f)


class GammaOperator:
    """
    Gamma on tabulated fields. Gamma is evaluated at the nodes of a coarse cartesian
    grid (f and g trilinearly interpolated at the post-collision velocities) and then
    interpolated back to the field grid. Pairs leaving the ball |v| <= v_max are dropped
    as in apply_Gamma; `last_dropped` counts them for the latest call and `dropped` over
    the operator's lifetime.
    """

    def __init__(self, quad: VelocityQuadrature, coarse_nodes=4, sphere: SphereRule | None = None):
        if quad.kind != "cartesian":
            raise ValueError("GammaOperator needs a cartesian velocity grid")
        self.quad = quad
        self.coarse = VelocityQuadrature.cartesian(coarse_nodes, quad.v_max)
        self.sphere = sphere or SphereRule.product(4, 8)
        self.dropped = 0
        self.evaluated = 0
        self.last_dropped = 0
        self.last_evaluated = 0

    def _interpolator(self, axis, values):
        n = len(axis)
        grid = np.moveaxis(values, -1, 0).reshape((n, n, n) + values.shape[:-1])
        # linear extrapolation covers the ball beyond the outermost cell centers
        return RegularGridInterpolator((axis, axis, axis), grid, bounds_error=False, fill_value=None)

    def at_coarse(self, f, g):
        """Gamma(f, g) at the coarse nodes, shaped (coarse nodes, points)"""
        f = np.atleast_2d(f)
        g = np.atleast_2d(g)
        f_at = self._interpolator(self.quad.axis, f)
        g_at = self._interpolator(self.quad.axis, g)
        coarse = self.coarse
        f_coarse = f_at(coarse.nodes)
        g_coarse = g_at(coarse.nodes)
        root = sqrt_mu(coarse.nodes)
        result = np.zeros((len(coarse), f.shape[0]))
        dropped = 0
        evaluated = 0
        for i, v in enumerate(coarse.nodes):
            u_prime, v_prime, weights = _collision_points(v, coarse, self.sphere)
            inside = _inside(u_prime, v_prime, coarse.v_max).reshape(-1)
            dropped += int(np.count_nonzero(~inside))
            evaluated += inside.size
            product = f_at(u_prime.reshape(-1, 3)) * g_at(v_prime.reshape(-1, 3))
            product[~inside] = 0.0
            pair_weights = (weights * root[:, None]).reshape(-1)
            gain = pair_weights @ product
            loss_rate = TWO_PI * np.linalg.norm(v - coarse.nodes, axis=-1) * coarse.weights * root
            loss = (loss_rate @ f_coarse) * g_coarse[i]
            result[i] = gain - loss
        self.last_dropped = dropped
        self.last_evaluated = evaluated
        self.dropped += dropped
        self.evaluated += evaluated
        if dropped:
            log.warning("Gamma: %d of %d post-collision pairs left the velocity ball", dropped, evaluated)
        return result

    def __call__(self, f, g):
        """Gamma(f, g) for arrays shaped (points, velocities)"""
        result = self.at_coarse(f, g)
        back = self._interpolator(self.coarse.axis, result.T)
        return back(self.quad.nodes).T
