"""
Characteristic (Duhamel) solver for the linearized problems.

Along the backward ray from (x, v) the solution satisfies

    f(x, v) = exp(-nu t*) f_start + int_0^t* exp(-nu s) (K f + h)(x - s v, v) ds

with t* = t_b (steady) or min(t_b, dt) (one transient step). f_start is the diffuse
reflection of the outgoing flux at x_b when the ray reaches the wall, and the previous
time level at x - dt v otherwise. On the collocation grid this map is affine in f; its
pieces are assembled once as sparse matrices.
"""
from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import LinearOperator, gmres

from .boundary import WallTemperature
from .collision import GammaOperator, KernelMatrix, KernelParams, MaxwellianFamily, mu, nu_closed_form, sqrt_mu
from .errors import CFLWarning, GrazingSingularity, IterationDiverged, NonPositiveNorm
from .grid import (
    BarycentricInterpolator,
    BoundaryInterpolator,
    Field,
    PhaseGrid,
    QuadraticMLS,
    field_gradient,
    mass_functional,
    write_snapshot,
)
from .kinetic_weight import KineticWeight
from .models import NormSeries, PhasePoint
from .quadrature import exponential_segment_rule

log = logging.getLogger(__name__)

EXIT_CHUNK = 1024


class CharacteristicMap:
    """
    The affine map f -> A f + b of one steady sweep (dt=None) or one transient step.
    """

    def __init__(
        self,
        grid: PhaseGrid,
        Tw: WallTemperature,
        params: KernelParams,
        ray_nodes=4,
        dt=None,
        kernel: KernelMatrix | None = None,
    ):
        self.grid = grid
        self.Tw = Tw
        self.params = params
        self.ray_nodes = ray_nodes
        self.dt = dt
        self.velocities = grid.velocities.nodes
        self.nu = nu_closed_form(self.velocities)
        self.root = sqrt_mu(self.velocities)
        self.kernel = kernel or KernelMatrix(grid.velocities, params)
        self.interpolator = BarycentricInterpolator(grid.points)
        self.boundary_interpolator = BoundaryInterpolator(grid.boundary, grid.domain.center)
        self._build()

    @property
    def shape(self):
        return (self.grid.n_points, self.grid.n_velocities)

    def _ray_matrix(self, rows, velocity_index, start, length):
        """Sparse rule for int_0^length exp(-nu s) g(start - s v, v) ds, per row"""
        n_velocities = self.grid.n_velocities
        s, weights = exponential_segment_rule(self.ray_nodes, self.nu[velocity_index], length)
        v = self.velocities[velocity_index]
        points = start[:, None, :] - s[..., None] * v[:, None, :]
        indices, barycentric = self.interpolator.weights(points)
        indices = indices.reshape(len(rows), self.ray_nodes, 4)
        barycentric = barycentric.reshape(len(rows), self.ray_nodes, 4)
        columns = indices * n_velocities + velocity_index[:, None, None]
        data = weights[..., None] * barycentric
        row_index = np.broadcast_to(rows[:, None, None], columns.shape)
        size = self.grid.n_points * n_velocities
        return csr_matrix((data.ravel(), (row_index.ravel(), columns.ravel())), shape=(size, size))

    def wall_coupling(self, exit_points, velocity_index):
        """
        Per exit point: the diffuse-reflection coefficient M_W / (Z_W sqrt(mu)), the
        remainder (M_W / Z_W - mu / Z_mu) / sqrt(mu), and boundary-node interpolation
        weights for the outgoing flux. Z_W and Z_mu are the discrete incoming fluxes, so
        reflection conserves mass on the grid.
        """
        grid = self.grid
        weights_v = grid.velocities.weights
        temperature = self.Tw(exit_points)
        normals = grid.domain.normal(exit_points)
        z_wall = np.empty(len(exit_points))
        z_mu = np.empty(len(exit_points))
        mu_nodes = mu(self.velocities)
        for start in range(0, len(exit_points), EXIT_CHUNK):
            chunk = slice(start, start + EXIT_CHUNK)
            dots = normals[chunk] @ self.velocities.T
            incoming = np.where(dots < 0, -dots, 0.0) * weights_v
            wall = MaxwellianFamily.wall(self.velocities[None, :, :], temperature[chunk, None])
            z_wall[chunk] = np.sum(wall * incoming, axis=1)
            z_mu[chunk] = incoming @ mu_nodes
        v = self.velocities[velocity_index]
        wall_values = MaxwellianFamily.wall(v, temperature)
        root = self.root[velocity_index]
        coefficient = wall_values / (z_wall * root)
        if self.Tw.isothermal:
            remainder = np.zeros(len(exit_points))
        else:
            remainder = (wall_values / z_wall - mu_nodes[velocity_index] / z_mu) / root
        node_index, node_weights = self.boundary_interpolator.weights(exit_points)
        return coefficient, remainder, node_index, node_weights

    def _build(self):
        grid = self.grid
        n_points, n_velocities = self.shape
        size = n_points * n_velocities
        points = grid.points
        t_b = grid.domain.exit_times(points[:, None, :], self.velocities[None, :, :])
        self.t_b = t_b
        point_index, velocity_index = np.divmod(np.arange(size), n_velocities)
        t_b = t_b.ravel()
        if self.dt is None:
            hits_wall = np.ones(size, dtype=bool)
            length = t_b
        else:
            hits_wall = t_b <= self.dt
            length = np.where(hits_wall, t_b, self.dt)
        rows = np.arange(size)
        self.ray = self._ray_matrix(rows, velocity_index, points[point_index], length)

        wall_rows = rows[hits_wall]
        wall_velocity = velocity_index[wall_rows]
        exit_points = points[point_index[wall_rows]] - t_b[wall_rows, None] * self.velocities[wall_velocity]
        decay = np.exp(-self.nu[wall_velocity] * t_b[wall_rows])
        coefficient, remainder, node_index, node_weights = self.wall_coupling(exit_points, wall_velocity)
        n_boundary = len(grid.boundary)
        self.reflect = csr_matrix(
            (
                ((decay * coefficient)[:, None] * node_weights).ravel(),
                (np.repeat(wall_rows, 3), node_index.ravel()),
            ),
            shape=(size, n_boundary),
        )
        self.constant = np.zeros(size)
        self.constant[wall_rows] = decay * remainder
        self.hits_wall = hits_wall.reshape(self.shape)

        normals = grid.normals
        dots = normals @ self.velocities.T
        node_rows, node_velocity = np.nonzero(dots > 0)
        columns = (grid.n_interior + node_rows) * n_velocities + node_velocity
        self.flux = csr_matrix(
            (
                self.root[node_velocity] * dots[node_rows, node_velocity] * grid.velocities.weights[node_velocity],
                (node_rows, columns),
            ),
            shape=(n_boundary, size),
        )

        if self.dt is None:
            self.shift = None
        else:
            inner_rows = rows[~hits_wall]
            inner_velocity = velocity_index[inner_rows]
            start = points[point_index[inner_rows]] - self.dt * self.velocities[inner_velocity]
            indices, barycentric = self.interpolator.weights(start)
            decay = np.exp(-self.nu[inner_velocity] * self.dt)
            self.shift = csr_matrix(
                (
                    (decay[:, None] * barycentric).ravel(),
                    (np.repeat(inner_rows, 4), (indices * n_velocities + inner_velocity[:, None]).ravel()),
                ),
                shape=(size, size),
            )
        log.debug(
            "characteristic map: %d rows, %d ray entries, %d wall rows",
            size,
            self.ray.nnz,
            len(wall_rows),
        )

    def outgoing_flux(self, values):
        """Outgoing flux int f sqrt(mu) (n.v)_+ dv at every boundary node"""
        return self.flux @ np.asarray(values).ravel()

    def apply_linear(self, values):
        values = np.asarray(values).reshape(self.shape)
        result = self.ray @ self.kernel(values).ravel() + self.reflect @ (self.flux @ values.ravel())
        if self.shift is not None:
            result += self.shift @ values.ravel()
        return result.reshape(self.shape)

    def apply(self, values, source=None):
        result = self.apply_linear(values) + self.constant.reshape(self.shape)
        if source is not None:
            result += (self.ray @ np.asarray(source).ravel()).reshape(self.shape)
        return result


def duhamel_rhs(
    cmap: CharacteristicMap,
    field: Field,
    x,
    velocity_index,
    source=None,
    boundary_value=None,
    collisions=True,
    ray_nodes=None,
):
    """
    The characteristic formula at one phase point (x, v_j), v_j a velocity node.
    `boundary_value(x_b, v)` overrides the diffuse reflection of `field`; with
    collisions=False the K f term is dropped.
    """
    grid = cmap.grid
    j = int(velocity_index)
    v = cmap.velocities[j]
    point = PhasePoint(x, v)
    record = grid.domain.backward_exit(point)
    if record.grazing and record.t_b <= grid.domain.tol_root:
        raise GrazingSingularity(f"grazing phase point x={point.x.tolist()}, v={v.tolist()}")
    rate = cmap.nu[j]
    hits_wall = cmap.dt is None or record.t_b <= cmap.dt
    length = record.t_b if hits_wall else cmap.dt
    s, weights = exponential_segment_rule(ray_nodes or cmap.ray_nodes, rate, length)
    integrand = np.zeros(len(s))
    column = np.zeros(grid.n_points)
    if collisions:
        column = column + cmap.kernel(field.values)[:, j]
    if source is not None:
        column = column + np.asarray(source)[:, j]
    if collisions or source is not None:
        indices, barycentric = cmap.interpolator.weights(point.x - s[:, None] * v)
        integrand = np.sum(barycentric * column[indices], axis=1)
    if hits_wall:
        if boundary_value is not None:
            start = float(boundary_value(record.x_b, v))
        else:
            coefficient, remainder, node_index, node_weights = cmap.wall_coupling(
                record.x_b[None, :], np.array([j])
            )
            flux = cmap.outgoing_flux(field.values)
            start = float(coefficient[0] * (node_weights[0] @ flux[node_index[0]]) + remainder[0])
        start *= np.exp(-rate * record.t_b)
    else:
        indices, barycentric = cmap.interpolator.weights(point.x - cmap.dt * v)
        start = float(barycentric[0] @ field.values[indices[0], j]) * np.exp(-rate * cmap.dt)
    return start + float(weights @ integrand)


def weighted_sup(values, params: KernelParams, velocities) -> float:
    return float(np.max(np.abs(np.asarray(values) * params.w(velocities)), initial=0.0))


class MassProjection:
    """g -> g - sqrt(mu) mass(g) / mass(sqrt(mu)) on the grid"""

    def __init__(self, grid: PhaseGrid):
        self.functional = mass_functional(grid).ravel()
        self.direction = np.broadcast_to(sqrt_mu(grid.velocities.nodes), (grid.n_points, grid.n_velocities)).ravel()
        self.norm = float(self.functional @ self.direction)

    def mass(self, values) -> float:
        return float(self.functional @ np.asarray(values).ravel())

    def __call__(self, values):
        values = np.asarray(values)
        flat = values.ravel()
        return (flat - self.direction * (self.functional @ flat) / self.norm).reshape(values.shape)


@dataclass
class SteadyResult:
    field: Field
    residual: float
    iterations: int
    converged: bool
    consistency: float
    history: list = field(default_factory=list)

    @property
    def trivial(self) -> bool:
        return self.iterations <= 1 and not np.any(self.field.values)


def _solve_linear(cmap, projection, constant, weights, tol_fp, max_iter, method, initial):
    """Solve f = P(A f + b) with P the mass projection; returns (values, history)"""
    shape = cmap.shape
    history = []

    def residual(values):
        image = projection(cmap.apply_linear(values) + constant)
        return float(np.max(np.abs((image - values) * weights))), image

    res, image = residual(initial)
    history.append(res)
    if res < tol_fp:
        return initial, history, 1

    if method == "picard":
        values = image
        for iteration in range(2, max_iter + 1):
            res, image = residual(values)
            history.append(res)
            log.info("steady picard iteration %d: residual %.3e", iteration, res)
            if not np.isfinite(res):
                raise IterationDiverged(f"residual became {res} at iteration {iteration}")
            if res < tol_fp:
                return values, history, iteration
            values = image
        if history[-1] > history[0]:
            raise IterationDiverged(
                f"picard residual grew from {history[0]:.3e} to {history[-1]:.3e} in {max_iter} iterations"
            )
        return values, history, max_iter

    size = int(np.prod(shape))
    rhs = projection(constant.reshape(shape)).ravel()

    def matvec(flat):
        values = flat.reshape(shape)
        return flat - projection(cmap.apply_linear(values)).ravel()

    operator = LinearOperator((size, size), matvec=matvec, dtype=float)
    inner = []
    atol = 0.1 * tol_fp / float(np.max(weights))
    solution, info = gmres(
        operator,
        rhs,
        x0=initial.ravel(),
        rtol=0.0,
        atol=atol,
        restart=min(50, max_iter),
        maxiter=max_iter,
        callback=inner.append,
        callback_type="pr_norm",
    )
    if info < 0:
        raise IterationDiverged(f"gmres failed with status {info}")
    values = solution.reshape(shape)
    res, _ = residual(values)
    history.append(res)
    log.info("steady gmres: %d inner iterations, residual %.3e", len(inner), res)
    return values, history, len(inner) + 1


def steady_solve(
    grid: PhaseGrid,
    Tw: WallTemperature,
    params: KernelParams,
    include_gamma=False,
    tol_fp=1e-6,
    max_iter=200,
    method="krylov",
    ray_nodes=4,
    gamma_velocity_nodes=4,
    cmap: CharacteristicMap | None = None,
    initial=None,
) -> SteadyResult:
    """
    Steady perturbation f_s with boundary remainder r. The solution is normalized to
    zero mass. With include_gamma, Gamma(f_s, f_s) is added by an outer fixed point.
    Passing a transient step map as `cmap` gives the fixed point of that step.
    """
    if method not in ("krylov", "picard"):
        raise ValueError(f"unknown steady method {method}")
    cmap = cmap or CharacteristicMap(grid, Tw, params, ray_nodes)
    projection = MassProjection(grid)
    weights = params.w(grid.velocities.nodes)
    constant = cmap.constant.reshape(cmap.shape)
    values = np.zeros(cmap.shape) if initial is None else projection(np.asarray(initial, dtype=float))
    history = []
    iterations = 0
    gamma = GammaOperator(grid.velocities, gamma_velocity_nodes) if include_gamma else None
    for outer in range(max_iter if include_gamma else 1):
        source_term = constant
        if gamma is not None:
            source = gamma(values, values)
            source_term = constant + (cmap.ray @ source.ravel()).reshape(cmap.shape)
        previous = values
        values, inner_history, count = _solve_linear(
            cmap, projection, source_term, weights, tol_fp, max_iter, method, values
        )
        history.extend(inner_history)
        iterations += count
        if gamma is None:
            break
        change = float(np.max(np.abs((values - previous) * weights)))
        log.info("steady gamma sweep %d: change %.3e", outer + 1, change)
        if change < tol_fp:
            break
    image = cmap.apply_linear(values) + constant
    consistency = abs(projection.mass(image)) / projection.norm * float(
        np.max(np.abs(projection.direction.reshape(cmap.shape) * weights))
    )
    residual = history[-1]
    converged = residual < tol_fp
    if not converged:
        log.warning("steady solve stopped at residual %.3e (tol %.1e)", residual, tol_fp)
    return SteadyResult(
        field=Field(values),
        residual=residual,
        iterations=iterations,
        converged=converged,
        consistency=consistency,
        history=history,
    )


def weighted_gradient_norm(
    values,
    grid: PhaseGrid,
    params: KernelParams,
    kinetic_weight: KineticWeight,
    gradient=None,
    tube=1e-6,
):
    """
    sup of w_tilde(v) alpha(x, v) |grad_x f| over interior points and velocity nodes.
    Phase points with alpha below `tube` are excluded; returns (value, excluded fraction).
    """
    if gradient is None:
        gradient = field_gradient(values, grid)
    alpha = kinetic_weight.alpha(grid.interior[:, None, :], grid.velocities.nodes[None, :, :])
    keep = alpha >= tube
    excluded = 1.0 - float(np.mean(keep))
    weighted = params.w_tilde(grid.velocities.nodes) * alpha * np.linalg.norm(gradient, axis=-1)
    value = float(np.max(np.where(keep, weighted, 0.0), initial=0.0))
    if excluded:
        log.debug("weighted gradient norm: %.2e of phase points excluded", excluded)
    return value, excluded


def w1p_norm(values, grid: PhaseGrid, p, gradient=None) -> float:
    """(int int |grad_x f|^p dx dv)^(1/p) over the interior collocation measure"""
    if gradient is None:
        gradient = field_gradient(values, grid)
    magnitude = np.linalg.norm(gradient, axis=-1) ** p
    total = grid.interior_weights @ (magnitude @ grid.velocities.weights)
    return float(total ** (1.0 / p))


def fit_decay_rate(series: NormSeries, tail_start=1.0, column="sup_wf", min_samples=8):
    """
    Least-squares slope of log(norm) against t for t >= tail_start.
    Returns (rate, r2, band) with band the 95% half-width of the rate.
    """
    times = series.column("t")
    values = series.column(column)
    zero = np.nonzero(values <= 0)[0]
    if len(zero):
        times = times[: zero[0]]
        values = values[: zero[0]]
    window = times >= tail_start
    times = times[window]
    values = values[window]
    if len(times) < min_samples:
        raise NonPositiveNorm(
            f"only {len(times)} positive samples of {column} after t={tail_start}; need {min_samples}"
        )
    if len(zero):
        log.warning("%s reaches zero; decay fitted on the nonzero prefix", column)
    logs = np.log(values)
    (slope, intercept), covariance = np.polyfit(times, logs, 1, cov=True)
    fitted = slope * times + intercept
    total = np.sum((logs - logs.mean()) ** 2)
    r2 = 1.0 - np.sum((logs - fitted) ** 2) / total if total > 0 else 1.0
    band = 1.96 * float(np.sqrt(max(covariance[0, 0], 0.0)))
    return float(-slope), float(r2), band


@dataclass
class InitialCondition:
    field: Field
    compatibility_residual: float
    time_derivative: np.ndarray
    time_derivative_norm: float


def _compatible(cmap: CharacteristicMap, values):
    """Overwrite incoming boundary values by the diffuse reflection of the outgoing trace"""
    grid = cmap.grid
    values = np.array(values, dtype=float)
    incoming = grid.incoming_mask()
    node_rows, velocity_index = np.nonzero(incoming)
    coefficient, _, node_index, node_weights = cmap.wall_coupling(grid.boundary[node_rows], velocity_index)
    flux = cmap.outgoing_flux(values)
    values[grid.n_interior + node_rows, velocity_index] = coefficient * np.sum(node_weights * flux[node_index], axis=1)
    return values


def default_profile(domain):
    def profile(x, v):
        speed = np.sum(v**2, axis=-1)
        return sqrt_mu(v) * (-domain.xi(x) * (speed - 3.0) / 3.0 + 0.5 * np.sum(x * v, axis=-1))

    return profile


def prepare_initial_condition(
    cmap: CharacteristicMap,
    amplitude=0.01,
    profile=None,
    kinetic_weight: KineticWeight | None = None,
) -> InitialCondition:
    """
    Smooth f0 with compatible incoming trace, zero mass and ||w f0||_inf = amplitude.
    Compatibility is linear, so the subtracted multiple c of sqrt(mu) solves
    mass(C(base - c sqrt(mu))) = 0 exactly.
    """
    grid = cmap.grid
    params = cmap.params
    base = Field.from_function(grid, profile or default_profile(grid.domain)).values
    root = np.broadcast_to(cmap.root, base.shape)
    projection = MassProjection(grid)
    compatible_base = _compatible(cmap, base)
    compatible_root = _compatible(cmap, root)
    c = projection.mass(compatible_base) / projection.mass(compatible_root)
    values = compatible_base - c * compatible_root
    weights = params.w(grid.velocities.nodes)
    residual = float(np.max(np.abs((compatible_base - base) * weights))) / max(
        float(np.max(np.abs(base * weights))), 1e-300
    )
    values *= amplitude / float(np.max(np.abs(values * weights)))
    if residual > 0.5:
        log.warning("initial profile needed a large compatibility correction (%.2f)", residual)

    gradient = field_gradient(values, grid)
    interior = values[: grid.n_interior]
    time_derivative = (
        -np.einsum("pjk,jk->pj", gradient, grid.velocities.nodes)
        - cmap.kernel.linearized(interior)
    )
    norm = float(np.max(np.abs(time_derivative * weights)))
    log.info("initial condition: compatibility residual %.3e, |w d_t f0| %.3e", residual, norm)
    return InitialCondition(Field(values), residual, time_derivative, norm)


@dataclass
class TransientResult:
    series: NormSeries
    final: Field
    steady: SteadyResult | None
    mass_correction: float
    decay_violations: int
    snapshots: list = field(default_factory=list)


def field_norms(values, grid, params, kinetic_weight, mls=None, tube=1e-6):
    gradient = field_gradient(values, grid, mls)
    c1, _ = weighted_gradient_norm(values, grid, params, kinetic_weight, gradient, tube)
    return (
        weighted_sup(values, params, grid.velocities.nodes),
        weighted_sup(values[grid.n_interior :], params, grid.velocities.nodes),
        c1,
        w1p_norm(values, grid, 2.0, gradient),
        w1p_norm(values, grid, 2.5, gradient),
        MassProjection(grid).mass(values),
    )


def transient_solve(
    grid: PhaseGrid,
    Tw: WallTemperature,
    params: KernelParams,
    f0: Field,
    horizon=6.0,
    dt=0.02,
    include_gamma=False,
    steady: SteadyResult | None = None,
    record_every=5,
    tail_start=1.0,
    ray_nodes=4,
    gamma_velocity_nodes=4,
    snapshot_every=0,
    snapshot_dir=None,
    conserve_mass=True,
    kernel: KernelMatrix | None = None,
    steady_options=None,
) -> TransientResult:
    """
    Semi-Lagrangian evolution of f(t) = F/sqrt(mu) - sqrt(mu) - f_s, with the wall flux
    lagged one step. The state advanced internally is f_s + f, so a non-isothermal wall
    enters through the remainder r; the recorded norms are those of f.

    f_s is the zero-mass fixed point of the dt step itself, started from `steady` when
    one is given. Its leftover step residual is subtracted every step, so with mass
    conservation f = 0 stays at zero.
    """
    v_max = grid.velocities.v_max
    if dt * v_max > grid.near_wall_width:
        message = f"dt * v_max = {dt * v_max:.3g} exceeds the near-wall width {grid.near_wall_width}"
        warnings.warn(message, CFLWarning)
        log.warning(message)
    if dt > 0.02:
        log.warning("dt=%.3g is above the observed stability guard 0.02", dt)
    kernel = kernel or KernelMatrix(grid.velocities, params)
    cmap = CharacteristicMap(grid, Tw, params, ray_nodes, dt=dt, kernel=kernel)
    gamma = GammaOperator(grid.velocities, gamma_velocity_nodes) if include_gamma else None
    projection = MassProjection(grid)
    if not Tw.isothermal:
        options = dict(steady_options or {})
        # one step contracts a deviation by about dt times the sweep rate
        options["tol_fp"] = options.get("tol_fp", 1e-6) * dt
        options.setdefault("gamma_velocity_nodes", gamma_velocity_nodes)
        steady = steady_solve(
            grid,
            Tw,
            params,
            include_gamma=include_gamma,
            cmap=cmap,
            initial=steady.field.values if steady is not None else None,
            **options,
        )
    steady_values = steady.field.values if steady is not None else np.zeros((grid.n_points, grid.n_velocities))
    steady_source = gamma(steady_values, steady_values) if gamma is not None else None
    step_residual = projection(cmap.apply(steady_values, steady_source)) - steady_values
    log.info(
        "steady state of the dt step: residual %.3e",
        weighted_sup(step_residual, params, grid.velocities.nodes),
    )
    kinetic_weight = KineticWeight(grid.domain)
    mls = QuadraticMLS(grid.points)

    state = steady_values + f0.values
    target = projection.mass(state)
    series = NormSeries()
    snapshots = []
    correction = 0.0
    n_steps = int(round(horizon / dt))

    def record(step):
        deviation = state - steady_values
        series.append(step * dt, *field_norms(deviation, grid, params, kinetic_weight, mls))
        log.info("t=%.3f |w f|=%.4e", step * dt, series.sup_wf[-1])

    record(0)
    for step in range(1, n_steps + 1):
        source = gamma(state, state) if gamma is not None else None
        state = cmap.apply(state, source) - step_residual
        if not np.all(np.isfinite(state)):
            raise IterationDiverged(f"non-finite values at t={step * dt:.3f}")
        if conserve_mass:
            drift = projection.mass(state) - target
            state = state - drift / projection.norm * cmap.root
            correction += abs(drift)
        if step % record_every == 0 or step == n_steps:
            record(step)
        if snapshot_every and snapshot_dir and step % snapshot_every == 0:
            snapshot = Field(state - steady_values, step * dt)
            write_snapshot(os.path.join(snapshot_dir, f"snapshot_{step:06d}.bin"), snapshot)
            snapshots.append(snapshot.time)

    try:
        series.decay_rate, series.decay_r2, series.decay_band = fit_decay_rate(series, tail_start)
    except NonPositiveNorm as e:
        log.warning("decay rate not fitted: %s", e)
    tail = series.column("t") >= tail_start
    logs = np.log(np.maximum(series.column("sup_wf")[tail], 1e-300))
    violations = int(np.count_nonzero(np.diff(logs) > 0))
    if violations:
        log.warning("sup |w f| increased %d times on the tail window", violations)
    return TransientResult(
        series=series,
        final=Field(state - steady_values, n_steps * dt),
        steady=steady,
        mass_correction=correction,
        decay_violations=violations,
        snapshots=snapshots,
    )
