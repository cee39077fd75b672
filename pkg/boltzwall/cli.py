"""
Command line entry point: `boltzwall {steady,transient,verify,report}`.

Exit status is 0 when every acceptance check of the experiment passes, 1 when a check
fails or a numerical error stops the run and 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from .__about__ import __version__
from .collision import KernelMatrix, write_calibration
from .errors import BoltzwallError, ConfigError, NonPositiveNorm
from .kinetic_weight import KineticWeight
from .models import LemmaCheck
from .report import rebuild_summary, write_artifacts
from .settings import load_config
from .solver import (
    CharacteristicMap,
    fit_decay_rate,
    prepare_initial_condition,
    steady_solve,
    transient_solve,
    w1p_norm,
    weighted_gradient_norm,
    weighted_sup,
)
from .verify import run_checks, w1p_singular_integral

log = logging.getLogger(__name__)

LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)
LINEAR_RESPONSE_SPREAD = 0.20
REFINEMENT_CHANGE = 0.05
DT_HALVING_CHANGE = 0.02
MIN_R2 = 0.95
CALIBRATION_FILE = "calibration.txt"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _spread(values):
    values = np.abs(np.asarray(values, dtype=float))
    return float((values.max() - values.min()) / values.max()) if values.max() > 0 else 0.0


def _steady_options(config):
    solver = config.section("solver")
    return {
        "tol_fp": solver["tol_fp"],
        "max_iter": solver["max_iter"],
        "method": solver["method"],
        "gamma_velocity_nodes": config.section("grid")["gamma_velocity_nodes"],
    }


def _solve_steady(config, grid, Tw, params, kernel):
    cmap = CharacteristicMap(grid, Tw, params, config.section("grid")["ray_nodes"], kernel=kernel)
    return steady_solve(
        grid, Tw, params, include_gamma=config.section("solver")["include_gamma"], cmap=cmap, **_steady_options(config)
    )


def _steady_norms(values, grid, params, p):
    c1, excluded = weighted_gradient_norm(values, grid, params, KineticWeight(grid.domain))
    return weighted_sup(values, params, grid.velocities.nodes), c1, w1p_norm(values, grid, p), excluded


def run_steady(config):
    """
    Isothermal fixed point, the linear response of f_s over the epsilon sweep and,
    with solver.refine, a grid-doubling comparison.
    """
    solver = config.section("solver")
    p = config.section("w1p")["p"]
    params = config.kernel_params()
    grid = config.grid()
    kernel = KernelMatrix(grid.velocities, params)
    checks = []

    isothermal = _solve_steady(config, grid, config.wall(epsilon=0.0), params, kernel)
    size = weighted_sup(isothermal.field.values, params, grid.velocities.nodes)
    if isothermal.trivial:
        log.info("isothermal wall: trivial fixed point f_s = 0")
    checks.append(
        LemmaCheck(
            lemma_id="steady_isothermal",
            samples=grid.n_points,
            levels=[1.0],
            values=[size],
            trend=None,
            passed=size < solver["tol_fp"] and isothermal.iterations == 1,
            details={"iterations": isothermal.iterations, "trivial": isothermal.trivial},
        )
    )

    epsilons = solver["epsilons"]
    sup_ratios, c1_ratios, w1p_values, residuals, consistency, excluded = [], [], [], [], [], []
    for epsilon in epsilons:
        result = _solve_steady(config, grid, config.wall(epsilon=epsilon), params, kernel)
        sup, c1, w1p, tube = _steady_norms(result.field.values, grid, params, p)
        log.info("epsilon=%g: |w f_s|=%.4e weighted C1=%.4e W1p=%.4e", epsilon, sup, c1, w1p)
        sup_ratios.append(sup / epsilon)
        c1_ratios.append(c1 / epsilon)
        w1p_values.append(w1p)
        residuals.append(result.residual)
        consistency.append(result.consistency)
        excluded.append(tube)
    singular = w1p_singular_integral(grid.domain, params, p, refinement_levels=1).values[-1]
    chain = w1p_values[-1] / (c1_ratios[-1] * epsilons[-1] * singular ** (1.0 / p)) if c1_ratios[-1] > 0 else 0.0
    checks.append(
        LemmaCheck(
            lemma_id="steady_linear_response",
            samples=len(epsilons),
            levels=list(epsilons),
            values=sup_ratios,
            trend=None,
            passed=_spread(sup_ratios) < LINEAR_RESPONSE_SPREAD and _spread(c1_ratios) < LINEAR_RESPONSE_SPREAD,
            parameters={"p": p, "wall": config.get("wall.profile")},
            details={
                "weighted_c1_ratios": c1_ratios,
                "w1p": w1p_values,
                "sup_spread": _spread(sup_ratios),
                "c1_spread": _spread(c1_ratios),
                "excluded_fraction": max(excluded),
                "w1p_chain_ratio": chain,
            },
        )
    )
    checks.append(
        LemmaCheck(
            lemma_id="steady_fixed_point",
            samples=len(epsilons),
            levels=list(epsilons),
            values=residuals,
            trend=None,
            passed=max(residuals) < 2.0 * solver["tol_fp"],
            details={"consistency": consistency},
        )
    )

    if solver["refine"]:
        epsilon = config.get("wall.epsilon")
        coarse = _solve_steady(config, grid, config.wall(), params, kernel)
        fine_grid = grid.refined(config.seed)
        fine = _solve_steady(config, fine_grid, config.wall(), params, KernelMatrix(fine_grid.velocities, params))
        coarse_norms = _steady_norms(coarse.field.values, grid, params, p)
        fine_norms = _steady_norms(fine.field.values, fine_grid, params, p)
        change = abs(fine_norms[0] - coarse_norms[0]) / max(fine_norms[0], 1e-300)
        checks.append(
            LemmaCheck(
                lemma_id="steady_refinement",
                samples=fine_grid.n_points,
                levels=[float(grid.n_points), float(fine_grid.n_points)],
                values=[coarse_norms[0], fine_norms[0]],
                trend=None,
                passed=change < REFINEMENT_CHANGE,
                parameters={"epsilon": epsilon},
                details={"sup_change": change, "w1p": [coarse_norms[2], fine_norms[2]]},
            )
        )
    return checks, None


def _evolve(config, grid, Tw, params, kernel, dt, snapshot_dir=None):
    solver = config.section("solver")
    grid_options = config.section("grid")
    cmap = CharacteristicMap(grid, Tw, params, grid_options["ray_nodes"], kernel=kernel)
    initial = prepare_initial_condition(cmap, solver["amplitude"])
    result = transient_solve(
        grid,
        Tw,
        params,
        initial.field,
        horizon=solver["horizon"],
        dt=dt,
        include_gamma=solver["include_gamma"],
        record_every=solver["record_every"],
        tail_start=solver["tail_start"],
        ray_nodes=grid_options["ray_nodes"],
        gamma_velocity_nodes=grid_options["gamma_velocity_nodes"],
        snapshot_every=solver["snapshot_every"] if snapshot_dir else 0,
        snapshot_dir=snapshot_dir,
        kernel=kernel,
        steady_options=_steady_options(config),
    )
    return initial, result


def _decay_checks(config, initial, result):
    solver = config.section("solver")
    series = result.series
    rate = series.decay_rate
    r2 = series.decay_r2
    try:
        gradient_rate, gradient_r2, _ = fit_decay_rate(series, solver["tail_start"], column="weighted_c1")
    except NonPositiveNorm as e:
        log.warning("weighted C1 decay not fitted: %s", e)
        gradient_rate, gradient_r2 = None, None
    mass = series.column("mass")
    allowed = 10.0 * max(abs(mass[0]), 1e-12)
    window = [solver["tail_start"], solver["horizon"]]
    return [
        LemmaCheck(
            lemma_id="transient_decay",
            samples=len(series),
            levels=window,
            values=[rate if rate is not None else float("nan"), r2 if r2 is not None else float("nan")],
            trend=None,
            passed=rate is not None and rate > 0 and r2 > MIN_R2,
            parameters={"amplitude": solver["amplitude"], "dt": solver["dt"]},
            details={
                "band": series.decay_band,
                "decay_violations": result.decay_violations,
                "compatibility_residual": initial.compatibility_residual,
                "time_derivative_norm": initial.time_derivative_norm,
            },
        ),
        LemmaCheck(
            lemma_id="transient_gradient_decay",
            samples=len(series),
            levels=window,
            values=[gradient_rate if gradient_rate is not None else float("nan")],
            trend=None,
            passed=gradient_rate is not None and gradient_rate > 0,
            details={"r2": gradient_r2},
        ),
        LemmaCheck(
            lemma_id="transient_mass",
            samples=len(series),
            levels=[float(series.times[0]), float(series.times[-1])],
            values=[float(np.max(np.abs(mass)))],
            trend=None,
            passed=float(np.max(np.abs(mass))) <= allowed,
            details={"initial_mass": float(mass[0]), "mass_correction": result.mass_correction},
        ),
    ]


def run_transient(config):
    """
    Decay from a compatible, mass neutral f0: on an isothermal wall the weighted sup and
    weighted C1 norms decay exponentially; on the configured wall the W^{1,p} distance
    to f_s decreases on the tail window.
    """
    solver = config.section("solver")
    params = config.kernel_params()
    grid = config.grid()
    kernel = KernelMatrix(grid.velocities, params)
    snapshot_dir = None
    if solver["snapshot_every"]:
        snapshot_dir = os.path.join(config.output_dir, "snapshots")
        os.makedirs(snapshot_dir, exist_ok=True)
    wall = config.wall()
    isothermal_wall = config.wall(epsilon=0.0)

    initial, isothermal = _evolve(config, grid, isothermal_wall, params, kernel, solver["dt"], snapshot_dir)
    checks = _decay_checks(config, initial, isothermal)
    series = isothermal.series

    if not wall.isothermal:
        _, configured = _evolve(config, grid, wall, params, kernel, solver["dt"])
        series = configured.series
        tail = series.column("t") >= solver["tail_start"]
        distance = series.column("w1p_p25")[tail]
        increases = int(np.count_nonzero(np.diff(distance) > 0))
        checks.append(
            LemmaCheck(
                lemma_id="transient_convergence",
                samples=len(series),
                levels=series.column("t")[tail].tolist(),
                values=distance.tolist(),
                trend=None,
                passed=increases == 0,
                parameters={"epsilon": wall.epsilon, "wall": wall.name},
                details={"increases": increases, "steady_residual": configured.steady.residual},
            )
        )

    if solver["refine"]:
        _, halved = _evolve(config, grid, isothermal_wall, params, kernel, solver["dt"] / 2.0)
        at_one = [
            float(np.interp(1.0, run.series.column("t"), run.series.column("sup_wf"))) for run in (isothermal, halved)
        ]
        change = abs(at_one[1] - at_one[0]) / max(at_one[1], 1e-300)
        checks.append(
            LemmaCheck(
                lemma_id="transient_dt_halving",
                samples=2,
                levels=[solver["dt"], solver["dt"] / 2.0],
                values=at_one,
                trend=None,
                passed=change < DT_HALVING_CHANGE,
                details={"change": change},
            )
        )
    return checks, series


def _cache_calibration(config, checks):
    for check in checks:
        if check.lemma_id == "kernel_calibration":
            os.makedirs(config.output_dir, exist_ok=True)
            path = os.path.join(config.output_dir, CALIBRATION_FILE)
            c_k1, c_k2 = check.values
            write_calibration(path, c_k1, c_k2, check.details["residual"], check.details["nodes"])
            log.info("wrote fitted kernel constants to %s", path)


def run_verify(config):
    checks = run_checks(config, config.get("verify.lemma") or None)
    _cache_calibration(config, checks)
    return checks, None


EXPERIMENTS = {
    "steady": run_steady,
    "transient": run_transient,
    "verify": run_verify,
}


def run(config, now=None) -> int:
    """Run the configured experiment and write its artifacts; returns the exit status"""
    experiment = config.experiment
    log.info("running %s with configuration %s", experiment, config.config_hash)
    started = time.perf_counter()
    checks, series = EXPERIMENTS[experiment](config)
    if experiment != "verify":
        elapsed = time.perf_counter() - started
        for check in checks:
            check.elapsed = elapsed / len(checks)
    write_artifacts(config.output_dir, config, experiment, checks, series, now)
    failed = [check.lemma_id for check in checks if not check.passed]
    if failed:
        log.warning("%d checks failed: %s", len(failed), ", ".join(failed))
        return EXIT_FAILED
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", help="output directory (overrides run.output_dir)")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--threads", type=int, help="number of joblib workers")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug")

    parser = argparse.ArgumentParser(prog="boltzwall", description="Diffuse-reflection Boltzmann toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("steady", parents=[common], help="steady problem and linear response")
    commands.add_parser("transient", parents=[common], help="decay of a perturbation")
    verify = commands.add_parser("verify", parents=[common], help="numerical checks of the estimates")
    verify.add_argument("--lemma", help="run a single lemma id")
    commands.add_parser("report", parents=[common], help="rebuild summary.txt from existing artifacts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVELS[min(args.verbose, len(LOG_LEVELS) - 1)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {
        "run.output_dir": args.out,
        "run.seed": args.seed,
        "run.threads": args.threads,
        "verify.lemma": getattr(args, "lemma", None),
    }
    if args.command != "report":
        overrides["run.experiment"] = args.command
    try:
        config = load_config(args.config, overrides)
        if args.command == "report":
            checks = rebuild_summary(config.output_dir)
            return EXIT_OK if all(check.passed for check in checks) else EXIT_FAILED
        return run(config)
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        log.error("report: %s", e)
        return EXIT_CONFIG
    except BoltzwallError as e:
        log.error("%s failed: %s: %s", args.command, type(e).__name__, e)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
