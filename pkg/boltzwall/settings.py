"""
Run configuration.

An INI file (configparser) over the packaged data/default.cfg; `BOLTZWALL_OUTPUT_DIR` overrides
run.output_dir and command-line flags override both. The canonical text of the merged
configuration is hashed into every artifact.
"""
from __future__ import annotations

import configparser
import hashlib
import logging
import os
from importlib import resources as importlib_resources

from .boundary import WallTemperature, resolve_profile
from .collision import KernelParams, read_calibration
from .errors import ConfigError
from .geometry import make_domain
from .grid import PhaseGrid
from .models import DomainKind
from .parsing import (
    parse_bool,
    parse_float_list,
    parse_validate_float,
    parse_validate_positive_float,
    parse_validate_positive_int,
)
from .quadrature import SphereRule, VelocityQuadrature

log = logging.getLogger(__name__)

OUTPUT_DIR_VARIABLE = "BOLTZWALL_OUTPUT_DIR"
EXPERIMENTS = ("steady", "transient", "verify", "report")
METHODS = ("krylov", "picard")


def _packaged_defaults():
    text = importlib_resources.files(__package__).joinpath("data/default.cfg").read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.read_string(text, source="default.cfg")
    return {section: dict(parser.items(section)) for section in parser.sections()}


DEFAULTS = _packaged_defaults()


def _positive_float(value, name):
    return parse_validate_positive_float(value, name)


def _nonnegative_int(value, name):
    try:
        parsed = int(value)
    except (TypeError, ValueError):
        raise ValueError(f"Could not parse value of '{name}' (must be int): {value}")
    if parsed < 0:
        raise ValueError(f"Value of '{name}' must be nonnegative: {value}")
    return parsed


def _unit_fraction(value, name):
    parsed = parse_validate_float(value, name)
    if not 0 <= parsed <= 1:
        raise ValueError(f"Value of '{name}' must lie in [0, 1]: {value}")
    return parsed


def _epsilon(value, name):
    parsed = parse_validate_float(value, name)
    if not 0 <= parsed < 0.1:
        raise ValueError(f"Value of '{name}' must lie in [0, 0.1): {value}")
    return parsed


def _epsilons(value, name):
    return tuple(_epsilon(item, name) for item in parse_float_list(value, name))


def _positive_floats(value, name):
    parsed = parse_float_list(value, name)
    if any(item <= 0 for item in parsed):
        raise ValueError(f"Values of '{name}' must be positive: {value}")
    return parsed


def _choice(choices):
    def parse(value, name):
        text = str(value).strip()
        if text not in choices:
            raise ValueError(f"Value of '{name}' must be one of {', '.join(choices)}: {value}")
        return text

    return parse


def _domain_kind(value, name):
    try:
        return DomainKind(str(value).strip()).value
    except ValueError:
        raise ValueError(f"Unknown domain kind for '{name}': {value}")


def _text(value, name):
    return str(value).strip()


def _profile(value, name):
    text = str(value).strip()
    try:
        resolve_profile(text)
    except (ImportError, ValueError, KeyError) as error:
        raise ValueError(f"Cannot resolve wall profile '{name}' = {value}: {error}")
    return text


PARSERS = {
    "domain": {
        "kind": _domain_kind,
        "semi_axes": _positive_floats,
        "tol_boundary": _positive_float,
        "tol_root": _positive_float,
        "tol_grazing": _positive_float,
        "chart_radius": _positive_float,
        "max_bounces": parse_validate_positive_int,
    },
    "wall": {
        "profile": _profile,
        "epsilon": _epsilon,
        "base_temperature": _positive_float,
    },
    "kernel": {
        "varrho": _positive_float,
        "varrho_tilde": _positive_float,
        "theta": _positive_float,
        "theta_tilde": _positive_float,
        "c_k1": _positive_float,
        "c_k2": _positive_float,
        "calibration_file": _text,
    },
    "quadrature": {
        "radial_nodes": parse_validate_positive_int,
        "polar_nodes": parse_validate_positive_int,
        "azimuthal_nodes": parse_validate_positive_int,
        "v_max": _positive_float,
        "sphere_polar": parse_validate_positive_int,
        "sphere_azimuthal": parse_validate_positive_int,
    },
    "grid": {
        "interior_points": parse_validate_positive_int,
        "boundary_points": parse_validate_positive_int,
        "near_wall_fraction": _unit_fraction,
        "near_wall_width": _positive_float,
        "velocity_nodes": parse_validate_positive_int,
        "velocity_box": _positive_float,
        "ray_nodes": parse_validate_positive_int,
        "gamma_velocity_nodes": parse_validate_positive_int,
    },
    "solver": {
        "tol_fp": _positive_float,
        "max_iter": parse_validate_positive_int,
        "method": _choice(METHODS),
        "include_gamma": parse_bool,
        "dt": _positive_float,
        "horizon": _positive_float,
        "record_every": parse_validate_positive_int,
        "tail_start": parse_validate_float,
        "amplitude": _positive_float,
        "epsilons": _epsilons,
        "refine": parse_bool,
        "snapshot_every": _nonnegative_int,
    },
    "w1p": {
        "p": _positive_float,
        "exponents": _positive_floats,
        "levels": parse_validate_positive_int,
    },
    "verify": {
        "samples": parse_validate_positive_int,
        "levels": parse_validate_positive_int,
        "lemma": _text,
    },
    "run": {
        "experiment": _choice(EXPERIMENTS),
        "seed": _nonnegative_int,
        "threads": parse_validate_positive_int,
        "output_dir": _text,
    },
}


def canonical_text(raw) -> str:
    """Sorted `[section]` / `key = value` text of the merged configuration"""
    lines = []
    for section in sorted(raw):
        lines.append(f"[{section}]")
        for key in sorted(raw[section]):
            lines.append(f"{key} = {raw[section][key]}")
    return "\n".join(lines) + "\n"


def get_sha1(text) -> str:
    sha1 = hashlib.sha1()
    sha1.update(text.encode("utf-8"))
    return sha1.hexdigest()


class RunConfig:
    """
    Validated configuration. `raw` keeps the merged text values, `values` the parsed
    ones; builders turn sections into domain, wall, kernel and grid objects.
    """

    def __init__(self, raw):
        self.raw = {section: dict(options) for section, options in raw.items()}
        self.values = {}
        for section, options in self.raw.items():
            parsers = PARSERS[section]
            parsed = {}
            for key, value in options.items():
                try:
                    parsed[key] = parsers[key](value, f"{section}.{key}")
                except ValueError as error:
                    raise ConfigError(f"{section}.{key}", str(error))
            self.values[section] = parsed
        self._check_kernel()

    def __repr__(self):
        return f"RunConfig(experiment={self.experiment!r}, hash={self.config_hash[:10]})"

    def _check_kernel(self):
        try:
            self.kernel_params()
        except ValueError as error:
            raise ConfigError("kernel", str(error))

    def section(self, name) -> dict:
        return self.values[name]

    def get(self, dotted, default=None):
        section, _, key = dotted.partition(".")
        return self.values.get(section, {}).get(key, default)

    def override(self, dotted, value) -> RunConfig:
        """A copy with one `section.key` replaced by a text value"""
        section, _, key = dotted.partition(".")
        if key not in DEFAULTS.get(section, {}):
            raise ConfigError(dotted, "unknown configuration key")
        raw = {name: dict(options) for name, options in self.raw.items()}
        raw[section][key] = str(value)
        return RunConfig(raw)

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def threads(self) -> int:
        return self.values["run"]["threads"]

    @property
    def experiment(self) -> str:
        return self.values["run"]["experiment"]

    @property
    def output_dir(self) -> str:
        return self.values["run"]["output_dir"]

    @property
    def canonical(self) -> str:
        return canonical_text(self.raw)

    @property
    def config_hash(self) -> str:
        return get_sha1(self.canonical)

    # builders

    def domain(self):
        options = self.values["domain"]
        return make_domain(
            options["kind"],
            semi_axes=options["semi_axes"],
            tol_boundary=options["tol_boundary"],
            tol_root=options["tol_root"],
            tol_grazing=options["tol_grazing"],
            chart_radius=options["chart_radius"],
        )

    def wall(self, epsilon=None) -> WallTemperature:
        options = self.values["wall"]
        return WallTemperature(
            options["profile"],
            options["epsilon"] if epsilon is None else epsilon,
            options["base_temperature"],
        )

    def kernel_params(self) -> KernelParams:
        options = self.values["kernel"]
        c_k1, c_k2 = options["c_k1"], options["c_k2"]
        if options["calibration_file"]:
            calibration = read_calibration(options["calibration_file"])
            c_k1 = float(calibration.get("c_k1", c_k1))
            c_k2 = float(calibration.get("c_k2", c_k2))
        return KernelParams(
            varrho=options["varrho"],
            varrho_tilde=options["varrho_tilde"],
            theta=options["theta"],
            theta_tilde=options["theta_tilde"],
            c_k1=c_k1,
            c_k2=c_k2,
        )

    def velocity_rule(self) -> VelocityQuadrature:
        options = self.values["quadrature"]
        return VelocityQuadrature.spherical(
            options["radial_nodes"], options["polar_nodes"], options["azimuthal_nodes"], options["v_max"]
        )

    def sphere_rule(self) -> SphereRule:
        options = self.values["quadrature"]
        return SphereRule.product(options["sphere_polar"], options["sphere_azimuthal"])

    def grid(self, seed=None) -> PhaseGrid:
        options = self.values["grid"]
        return PhaseGrid.build(
            self.domain(),
            interior_points=options["interior_points"],
            boundary_points=options["boundary_points"],
            near_wall_fraction=options["near_wall_fraction"],
            near_wall_width=options["near_wall_width"],
            velocity_nodes=options["velocity_nodes"],
            velocity_box=options["velocity_box"],
            seed=self.seed if seed is None else seed,
        )


def merged_defaults():
    return {section: dict(options) for section, options in DEFAULTS.items()}


def read_config_text(text, source="<string>"):
    """Merge INI text over DEFAULTS; unknown sections or keys raise ConfigError"""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as error:
        raise ConfigError("config", str(error))
    raw = merged_defaults()
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(section, "unknown configuration section")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key}", "unknown configuration key")
            raw[section][key] = value
    return raw


def load_config(path=None, overrides=None, environ=None) -> RunConfig:
    """
    Build a RunConfig from an optional INI file, the environment and `overrides`
    ({"section.key": value}, e.g. from command-line flags), in increasing precedence.
    """
    if path:
        try:
            with open(path, encoding="utf-8") as config_file:
                raw = read_config_text(config_file.read(), source=str(path))
        except OSError as error:
            raise ConfigError("config", f"cannot read {path}: {error}")
    else:
        raw = merged_defaults()
    environ = os.environ if environ is None else environ
    if environ.get(OUTPUT_DIR_VARIABLE):
        raw["run"]["output_dir"] = environ[OUTPUT_DIR_VARIABLE]
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if key not in DEFAULTS.get(section, {}):
            raise ConfigError(dotted, "unknown configuration key")
        raw[section][key] = str(value)
    config = RunConfig(raw)
    log.debug("configuration %s loaded from %s", config.config_hash, path or "defaults")
    return config
