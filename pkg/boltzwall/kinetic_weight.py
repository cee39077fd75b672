"""
Kinetic distance weight.

alpha_tilde(x, v) = sqrt(|v . grad xi(x)|^2 - 2 xi(x) v . hess xi(x) v) is comparable to
|n(x_b) . v| and almost invariant along free flight; alpha = chi(alpha_tilde) caps it at 1.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.special import betainc
from scipy.stats import beta as beta_distribution

from .errors import DegenerateAlpha, NegativeRadicand
from .geometry import ConvexDomain
from .models import PhasePoint

log = logging.getLogger(__name__)

LOWER = 0.5
UPPER = 2.0
WIDTH = UPPER - LOWER


class ChiCutoff:
    """
    chi(s) = s on [0, 1/2], chi(s) = 1 on [2, inf) and in between the integral of
    chi'(s) = 1 - I_t(2, 4), the regularized incomplete beta function in
    t = (s - 1/2) / (3/2). The slope decreases monotonically from 1 to 0 and its
    derivative vanishes at both breakpoints, so chi is C^2, non-decreasing and
    |chi'| <= 1.
    """

    lower = LOWER
    upper = UPPER

    def _t(self, s):
        return np.clip((np.asarray(s, dtype=float) - LOWER) / WIDTH, 0.0, 1.0)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        t = self._t(s)
        # integral of I_tau(2, 4) over [0, t] is t I_t(2, 4) - I_t(3, 4) / 3
        middle = LOWER + WIDTH * (t - (t * betainc(2, 4, t) - betainc(3, 4, t) / 3.0))
        return np.where(s <= LOWER, s, np.where(s >= UPPER, 1.0, middle))

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        middle = 1.0 - betainc(2, 4, self._t(s))
        return np.where(s <= LOWER, 1.0, np.where(s >= UPPER, 0.0, middle))

    def second_derivative(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > LOWER) & (s < UPPER)
        return np.where(inside, -beta_distribution.pdf(self._t(s), 2, 4) / WIDTH, 0.0)

    def describe(self) -> str:
        return "chi' = 1 - I_t(2,4) on (1/2, 2), t = (s - 1/2)/1.5"


class KineticWeight:
    def __init__(self, domain: ConvexDomain, chi: ChiCutoff | None = None, tol_degenerate=1e-14):
        self.domain = domain
        self.chi = chi or ChiCutoff()
        self.tol_degenerate = tol_degenerate

    def alpha_tilde(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        xi = self.domain.xi(x)
        vg = np.sum(v * self.domain.grad_xi(x), axis=-1)
        vhv = np.einsum("...i,...ij,...j->...", v, self.domain.hess_xi(x), v)
        radicand = vg**2 - 2.0 * xi * vhv
        if np.any(radicand < -1e-12):
            raise NegativeRadicand(f"alpha radicand {float(np.min(radicand)):.3e} < 0")
        return np.sqrt(np.maximum(radicand, 0.0))

    def alpha(self, x, v):
        return self.chi(self.alpha_tilde(x, v))

    def _require(self, value, x, v):
        if value < self.tol_degenerate:
            raise DegenerateAlpha(
                f"alpha={value:.3e} at x={np.asarray(x).tolist()}, v={np.asarray(v).tolist()}"
            )

    def velocity_lemma_ratio(self, x, v, s, tilde=False) -> float:
        """alpha(x - s v, v) / alpha(x, v)"""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        weight = self.alpha_tilde if tilde else self.alpha
        base = float(weight(x, v))
        self._require(base, x, v)
        return float(weight(x - s * v, v)) / base

    def boundary_equivalence_ratio(self, x, v) -> float:
        """|n(x_b(x, v)) . v| / alpha_tilde(x, v)"""
        p = PhasePoint(x, v)
        value = float(self.alpha_tilde(p.x, p.v))
        self._require(value, p.x, p.v)
        record = self.domain.backward_exit(p)
        return abs(float(record.normal_b @ p.v)) / value

    def directional_derivative(self, x, v, step=1e-6):
        """v . grad_x alpha(x, v) by a central difference along the ray"""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        speed = np.linalg.norm(v, axis=-1, keepdims=True)
        step = np.minimum(step, 0.25 * self.domain.boundary_distance_lower(x))[..., None]
        direction = v / speed
        forward = self.alpha(x + step * direction, v)
        backward = self.alpha(x - step * direction, v)
        return (forward - backward) / (2.0 * step[..., 0]) * speed[..., 0]

    def velocity_lemma_constant(self, x, v, s, tilde=False) -> float:
        """
        Smallest C with exp(-C|v|s) <= alpha(x - s v, v) / alpha(x, v) <= exp(C|v|s)
        over the given samples; samples with s = 0 or degenerate alpha are skipped.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        s = np.asarray(s, dtype=float)
        weight = self.alpha_tilde if tilde else self.alpha
        base = weight(x, v)
        moved = weight(x - s[:, None] * v, v)
        scale = np.linalg.norm(v, axis=-1) * s
        usable = (base >= self.tol_degenerate) & (moved >= self.tol_degenerate) & (scale > 0)
        skipped = int(np.count_nonzero(~usable))
        if skipped:
            log.debug("velocity lemma constant: %d degenerate samples skipped", skipped)
        if not np.any(usable):
            return 0.0
        return float(np.max(np.abs(np.log(moved[usable] / base[usable])) / scale[usable]))
