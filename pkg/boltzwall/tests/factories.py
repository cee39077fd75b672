import math

import factory

from boltzwall.collision import KernelParams
from boltzwall.models import LemmaCheck, NormSeries, Trend
from boltzwall.settings import RunConfig, merged_defaults


def small_raw(**sections):
    """Merged defaults with small grids, updated with {"section": {"key": "value"}}"""
    raw = merged_defaults()
    raw["grid"].update(
        {
            "interior_points": "40",
            "boundary_points": "24",
            "velocity_nodes": "4",
        }
    )
    raw["verify"]["samples"] = "50"
    for section, options in sections.items():
        raw[section].update(options)
    return raw


class KernelParamsFactory(factory.Factory):
    class Meta:
        model = KernelParams

    varrho = 0.125
    varrho_tilde = 0.0625
    theta = 0.1
    theta_tilde = 0.015625


class RunConfigFactory(factory.Factory):
    class Meta:
        model = RunConfig

    raw = factory.LazyFunction(small_raw)


class LemmaCheckFactory(factory.Factory):
    class Meta:
        model = LemmaCheck

    lemma_id = factory.Sequence(lambda n: f"check_{n:02d}")
    samples = 100
    levels = factory.LazyFunction(lambda: [1.0, 2.0, 3.0])
    values = factory.LazyFunction(lambda: [1.0, 1.01, 1.011])
    trend = Trend.BOUNDED
    passed = True
    parameters = factory.LazyFunction(dict)
    details = factory.LazyFunction(dict)
    elapsed = 0.5


def decaying_series(rate=0.3, horizon=6.0, dt=0.1, wobble=0.0):
    """NormSeries with every norm equal to exp(-rate t) (1 + wobble sin t)"""
    series = NormSeries()
    for step in range(int(round(horizon / dt)) + 1):
        t = step * dt
        value = math.exp(-rate * t) * (1.0 + wobble * math.sin(t))
        series.append(t, value, value, value, value, value, 0.0)
    return series
