"""Negative-sequence voltage limits and induction-machine derating."""

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .phasor import to_sequence

DEFAULT_VNEG_LIMIT = 0.02


@dataclass(frozen=True)
class DeratingCurve:
    """Quadratic derating curve ``g(v) = a2 v^2 + a1 v + a0`` (% with v in pu).

    The derating factor is 100 % below ``lower_knee``, ``100 - g`` up to
    ``upper_knee`` and 0 above it.
    """

    a0: float = 0.033125
    a1: float = 2.75
    a2: float = 56.25
    lower_knee: float = 0.01
    upper_knee: float = 0.05

    def __post_init__(self):
        if not self.lower_knee < self.upper_knee:
            raise ValueError("lower_knee must be below upper_knee")

    def g(self, v):
        return self.a2 * v * v + self.a1 * v + self.a0


@dataclass(frozen=True)
class InductionMachine:
    id: str
    bus: str
    rating: float  # kVA
    active_power: float  # kW, three-phase total
    power_factor: float = 0.85  # lagging

    def __post_init__(self):
        if not self.rating > 0:
            raise ValueError(f"machine {self.id!r}: rating must be positive")
        if not 0 < self.power_factor <= 1:
            raise ValueError(f"machine {self.id!r}: power factor must lie in (0, 1]")

    @property
    def reactive_power(self) -> float:
        """kvar drawn at the rated lagging power factor."""
        return self.active_power * math.tan(math.acos(self.power_factor))


def derating_factor(curve: DeratingCurve, v_neg):
    """Allowed machine loading in % for a negative-sequence voltage ``v_neg`` (pu).

    Works elementwise on arrays.
    """
    v = np.asarray(v_neg, dtype=float)
    if np.any(v < 0):
        raise ValueError("v_neg must be >= 0")
    out = np.where(v < curve.lower_knee, 100.0,
                   np.where(v < curve.upper_knee, 100.0 - curve.g(v), 0.0))
    return float(out) if out.ndim == 0 else out


def derating_surrogate(curve: DeratingCurve, v_neg: float) -> tuple[float, float, float]:
    """Smooth stand-in for ``100 - D`` used inside the optimizer.

    The quadratic ``g`` extended across both knees, clipped to [0, 100].
    Returns value, first and second derivative with respect to ``v_neg``.
    """
    val = curve.g(v_neg)
    if val <= 0.0:
        return 0.0, 0.0, 0.0
    if val >= 100.0:
        return 100.0, 0.0, 0.0
    return val, 2.0 * curve.a2 * v_neg + curve.a1, 2.0 * curve.a2


def derating_cost(machines: Sequence[InductionMachine], v_neg_by_bus: Mapping[str, float],
                  weight: float = 1.0, curve: DeratingCurve | None = None) -> float:
    """``weight * sum(S_b * (100 - D_b))`` over the machines (cost per kVA*%)."""
    curve = curve or DeratingCurve()
    total = 0.0
    for m in machines:
        if m.bus not in v_neg_by_bus:
            raise KeyError(f"no negative-sequence voltage for bus {m.bus!r}")
        total += m.rating * (100.0 - derating_factor(curve, v_neg_by_bus[m.bus]))
    return weight * total


def check_vneg_limit(v, limit: float = DEFAULT_VNEG_LIMIT) -> float | None:
    """Return the excess of |V-| over ``limit`` for pu phase voltages, or None."""
    if not limit > 0:
        raise ValueError("limit must be positive")
    v_neg = abs(to_sequence(v)[2])
    return float(v_neg - limit) if v_neg > limit else None
