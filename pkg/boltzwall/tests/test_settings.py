import unittest

from ddt import data, ddt, unpack

from boltzwall.errors import ConfigError
from boltzwall.settings import (
    DEFAULTS,
    OUTPUT_DIR_VARIABLE,
    RunConfig,
    load_config,
    merged_defaults,
    read_config_text,
)

from .factories import RunConfigFactory, small_raw

CONFIG_TEXT = """
# a ball with a hotter north pole
[domain]
kind = ball

[wall]
profile = quadratic_x3   ; inline comment
epsilon = 0.02

[run]
experiment = steady
seed = 7
"""


@ddt
class RunConfigTestCase(unittest.TestCase):
    def test_defaults(self):
        config = RunConfig(merged_defaults())
        self.assertEqual(config.experiment, "verify")
        self.assertEqual(config.seed, 0)
        self.assertEqual(config.get("w1p.exponents"), (2.0, 2.5, 2.9, 3.2, 3.5))
        self.assertEqual(config.get("solver.epsilons"), (0.005, 0.01, 0.02))
        self.assertFalse(config.get("solver.include_gamma"))
        self.assertIsNone(config.get("solver.no_such_key"))

    def test_defaults_come_from_the_packaged_file(self):
        raw = merged_defaults()
        self.assertEqual(set(raw), set(DEFAULTS))
        self.assertEqual(raw["kernel"]["calibration_file"], "")
        self.assertEqual(raw["solver"]["method"], "krylov")
        params = RunConfig(raw).kernel_params()
        self.assertEqual((params.c_k1, params.c_k2), (1.0, 4.0))
        raw["kernel"]["c_k1"] = "2.0"
        self.assertEqual(DEFAULTS["kernel"]["c_k1"], "1.0")

    @data(
        ("w1p", "p", "-1", "w1p.p"),
        ("wall", "epsilon", "0.5", "wall.epsilon"),
        ("grid", "near_wall_fraction", "1.5", "grid.near_wall_fraction"),
        ("solver", "method", "newton", "solver.method"),
        ("solver", "include_gamma", "maybe", "solver.include_gamma"),
        ("run", "threads", "0", "run.threads"),
        ("domain", "kind", "torus", "domain.kind"),
        ("wall", "profile", "no_such_profile", "wall.profile"),
        ("kernel", "theta", "0.3", "kernel"),
    )
    @unpack
    def test_invalid_value(self, section, key, value, expected):
        with self.assertRaises(ConfigError) as raised:
            RunConfig(small_raw(**{section: {key: value}}))
        self.assertEqual(raised.exception.key, expected)

    def test_read_config_text(self):
        raw = read_config_text(CONFIG_TEXT)
        config = RunConfig(raw)
        self.assertEqual(config.get("wall.profile"), "quadratic_x3")
        self.assertEqual(config.get("wall.epsilon"), 0.02)
        self.assertEqual(config.experiment, "steady")
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.get("grid.interior_points"), 400)

    @data("[domain]\nshape = cube\n", "[output]\nformat = csv\n")
    def test_unknown_names(self, text):
        with self.assertRaises(ConfigError):
            read_config_text(text)

    def test_override(self):
        config = RunConfigFactory()
        changed = config.override("wall.epsilon", 0.05)
        self.assertEqual(changed.get("wall.epsilon"), 0.05)
        self.assertEqual(config.get("wall.epsilon"), 0.01)
        with self.assertRaises(ConfigError):
            config.override("wall.colour", "red")

    def test_hash(self):
        first = RunConfigFactory()
        second = RunConfigFactory()
        self.assertEqual(first.config_hash, second.config_hash)
        self.assertEqual(len(first.config_hash), 40)
        self.assertNotEqual(first.config_hash, first.override("run.seed", 3).config_hash)
        self.assertTrue(first.canonical.startswith("[domain]\n"))

    def test_builders(self):
        config = RunConfigFactory()
        grid = config.grid()
        self.assertEqual(grid.n_interior, 40)
        self.assertEqual(grid.n_velocities, 64)
        self.assertEqual(config.kernel_params().c_k2, 4.0)
        self.assertEqual(config.wall(0.0).isothermal, True)


class LoadConfigTestCase(unittest.TestCase):
    def test_environment_and_overrides(self):
        environ = {OUTPUT_DIR_VARIABLE: "/tmp/from-env"}
        self.assertEqual(load_config(environ=environ).output_dir, "/tmp/from-env")
        config = load_config(overrides={"run.output_dir": "cli-out", "run.seed": None}, environ=environ)
        self.assertEqual(config.output_dir, "cli-out")
        self.assertEqual(config.seed, 0)

    def test_unknown_override(self):
        with self.assertRaises(ConfigError) as raised:
            load_config(overrides={"run.colour": "red"}, environ={})
        self.assertEqual(raised.exception.key, "run.colour")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/boltzwall.cfg", environ={})
