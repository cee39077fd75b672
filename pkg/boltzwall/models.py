from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, NamedTuple

import numpy as np


class DomainKind(str, Enum):
    BALL = "ball"
    ELLIPSOID = "ellipsoid"


class PhaseSet(str, Enum):
    INTERIOR = "interior"
    OUTGOING = "gamma_plus"
    INCOMING = "gamma_minus"
    GRAZING = "gamma_zero"


class Trend(str, Enum):
    BOUNDED = "bounded"
    DIVERGING = "diverging"


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v))


@dataclass(frozen=True)
class ExitRecord:
    t_b: float
    x_b: np.ndarray
    normal_b: np.ndarray
    grazing: bool


class ExitGradients(NamedTuple):
    """
    Derivatives of the backward exit map. Matrix entries are laid out as
    grad_x_xb[i, j] = d(x_b)_i / dx_j.
    """

    grad_x_tb: np.ndarray
    grad_v_tb: np.ndarray
    grad_x_xb: np.ndarray
    grad_v_xb: np.ndarray


@dataclass(frozen=True)
class CycleBounce:
    x: np.ndarray
    v: np.ndarray
    t: float
    t_b: float


@dataclass
class StochasticCycle:
    t0: float
    start: PhasePoint
    bounces: list[CycleBounce] = field(default_factory=list)
    truncated: bool = False

    @property
    def n_bounces(self) -> int:
        """Number of wall re-emissions before the remaining time ran out"""
        return max(len(self.bounces) - 1, 0)

    def points(self) -> np.ndarray:
        return np.array([bounce.x for bounce in self.bounces])


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays to JSON friendly python values"""
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_plain(item) for item in value.tolist()]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value) or math.isinf(value):
            return repr(value)
        return value
    return value


@dataclass
class LemmaCheck:
    lemma_id: str
    samples: int
    levels: list[float]
    values: list[float]
    trend: Trend | None
    passed: bool
    parameters: dict[str, Any] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    elapsed: float = 0.0

    def to_record(self) -> dict[str, Any]:
        """JSON record for verify.json; elapsed time is not part of it"""
        return _plain(
            {
                "id": self.lemma_id,
                "samples": self.samples,
                "levels": list(self.levels),
                "values": list(self.values),
                "trend": self.trend,
                "passed": self.passed,
                "parameters": self.parameters,
                "details": self.details,
            }
        )

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> LemmaCheck:
        trend = record.get("trend")
        return cls(
            lemma_id=record["id"],
            samples=record.get("samples", 0),
            levels=list(record.get("levels", [])),
            values=list(record.get("values", [])),
            trend=Trend(trend) if trend else None,
            passed=bool(record.get("passed", False)),
            parameters=dict(record.get("parameters", {})),
            details=dict(record.get("details", {})),
        )


NORM_COLUMNS = ("t", "sup_wf", "sup_bdry_wf", "weighted_c1", "w1p_p2", "w1p_p25", "mass")


@dataclass
class NormSeries:
    times: list[float] = field(default_factory=list)
    sup_wf: list[float] = field(default_factory=list)
    sup_bdry_wf: list[float] = field(default_factory=list)
    weighted_c1: list[float] = field(default_factory=list)
    w1p_p2: list[float] = field(default_factory=list)
    w1p_p25: list[float] = field(default_factory=list)
    mass: list[float] = field(default_factory=list)
    decay_rate: float | None = None
    decay_r2: float | None = None
    decay_band: float | None = None

    def append(self, t, sup_wf, sup_bdry_wf, weighted_c1, w1p_p2, w1p_p25, mass):
        self.times.append(float(t))
        self.sup_wf.append(float(sup_wf))
        self.sup_bdry_wf.append(float(sup_bdry_wf))
        self.weighted_c1.append(float(weighted_c1))
        self.w1p_p2.append(float(w1p_p2))
        self.w1p_p25.append(float(w1p_p25))
        self.mass.append(float(mass))

    def __len__(self):
        return len(self.times)

    def rows(self):
        return list(
            zip(
                self.times,
                self.sup_wf,
                self.sup_bdry_wf,
                self.weighted_c1,
                self.w1p_p2,
                self.w1p_p25,
                self.mass,
            )
        )

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return np.asarray(self.times)
        return np.asarray(getattr(self, name))

    def bookkeeping_bound(self) -> np.ndarray:
        """Aggregate sup_wf + weighted_c1 reported as a diagnostic"""
        return self.column("sup_wf") + self.column("weighted_c1")
