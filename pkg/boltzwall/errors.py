"""
Exception types raised by boltzwall.

Geometry and quadrature code raises these instead of returning NaN; the CLI maps them to
exit statuses.
"""


class BoltzwallError(Exception):
    pass


class ZeroVelocity(BoltzwallError):
    pass


class OutsideDomain(BoltzwallError):
    pass


class GrazingSingularity(BoltzwallError):
    pass


class ChartMismatch(BoltzwallError):
    pass


class NotOnBoundary(BoltzwallError):
    pass


class MaxBouncesExceeded(BoltzwallError):
    pass


class NegativeRadicand(BoltzwallError):
    pass


class DegenerateAlpha(BoltzwallError):
    pass


class SingularPoint(BoltzwallError):
    pass


class QuadratureUnconverged(BoltzwallError):
    pass


class InterpolationOutOfRange(BoltzwallError):
    pass


class WrongSide(BoltzwallError):
    pass


class IterationDiverged(BoltzwallError):
    pass


class NonPositiveNorm(BoltzwallError):
    pass


class ConfigError(BoltzwallError):
    """
    Invalid run configuration. `key` is the dotted "section.option" name.
    """

    def __init__(self, key, message):
        super().__init__(f"Invalid value for '{key}': {message}")
        self.key = key


class CFLWarning(UserWarning):
    pass
