"""Generic n-leg two-level VSC: leg limits, dc power, 2-omega ripple and dc-link stress.

Leg currents are phasors (RMS) injected *into the grid* at the leg's terminal.
Terminal voltages are phasors (RMS) against any common reference; because the
leg currents of one converter sum to zero, the ripple phasor does not depend
on that reference.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .phasor import BASIS_NEGATIVE, BASIS_ZERO, to_sequence

TOPOLOGIES = ("statcom", "soft_open_point", "interconnected_4w")
DEFAULT_FREQUENCY = 50.0
DEFAULT_TOL_BALANCE = 1e-6


@dataclass(frozen=True)
class LegSpec:
    """One half-bridge leg bound to a network terminal.

    ``i_max`` is the RMS ampacity; ``math.inf`` means unconstrained and ``0``
    marks an absent leg (e.g. the neutral of a three-wire converter).
    """

    id: str
    bus: str
    conductor: str
    i_max: float = math.inf


@dataclass(frozen=True)
class DcLinkSpec:
    capacitance: float  # F
    vdc_nominal: float  # V
    esr_coefficient: float = 1e-3  # ohm*F, ESR = k / C
    ripple_limit: float = math.inf  # W, |P_dc^2w| limit
    # W from the dc source into the link: a number (fixed) or a (lo, hi) range.
    dc_source_power: float | tuple[float, float] = 0.0

    def __post_init__(self):
        if not self.capacitance > 0:
            raise ValueError("dc-link capacitance must be positive")
        if not self.vdc_nominal > 0:
            raise ValueError("dc-link nominal voltage must be positive")
        if self.ripple_limit < 0:
            raise ValueError("ripple_limit must be >= 0")

    @property
    def dc_power_bounds(self) -> tuple[float, float]:
        p = self.dc_source_power
        if isinstance(p, tuple):
            return float(p[0]), float(p[1])
        return float(p), float(p)


@dataclass(frozen=True)
class VscSpec:
    id: str
    legs: tuple[LegSpec, ...]
    dc_link: DcLinkSpec
    topology: str = "statcom"

    def __post_init__(self):
        if len(self.legs) < 3:
            raise ValueError(f"VSC {self.id!r} needs at least 3 legs")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")

    def kva_rating(self, v_phase: float) -> float:
        """Sum of |V| * I_max over finite phase legs (neutral legs excluded)."""
        return sum(v_phase * leg.i_max for leg in self.legs
                   if leg.conductor != "n" and math.isfinite(leg.i_max))


@dataclass
class VscOperatingPoint:
    terminal_voltages: Sequence[complex]
    leg_currents: Sequence[complex]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(self.terminal_voltages, dtype=complex)
        i = np.asarray(self.leg_currents, dtype=complex)
        if v.shape != i.shape:
            raise ValueError(
                f"terminal voltages ({v.shape}) and leg currents ({i.shape}) differ in length")
        return v, i


@dataclass(frozen=True)
class Violation:
    constraint: str
    magnitude: float


def leg_ripple_phasor(v: complex, i: complex) -> complex:
    """2-omega power phasor of one leg: the *unconjugated* product V*I (W)."""
    return complex(v) * complex(i)


def dc_power(op: VscOperatingPoint) -> float:
    """dc-link power delivered to the ac side, sum of Re(V_j conj(I_j)) (W)."""
    v, i = op.arrays()
    return float(np.sum((v * i.conj()).real))


def ripple_phasor(op: VscOperatingPoint) -> complex:
    """2-omega dc-link power phasor, sum of V_j I_j over every leg sharing the link."""
    v, i = op.arrays()
    return complex(np.sum(v * i))


def check_constraints(spec: VscSpec, op: VscOperatingPoint,
                      tol_balance: float = DEFAULT_TOL_BALANCE,
                      tol_ripple: float = 1e-6) -> list[Violation]:
    """Leg ampacity, current balance and ripple-limit violations (empty if feasible)."""
    v, i = op.arrays()
    if len(i) != len(spec.legs):
        raise ValueError("operating point does not match the number of legs")
    out = []
    for leg, cur in zip(spec.legs, i):
        excess = abs(cur) - leg.i_max
        if excess > 0:
            out.append(Violation(f"leg_current:{leg.id}", float(excess)))
    imbalance = abs(i.sum())
    if imbalance > tol_balance:
        out.append(Violation("current_balance", float(imbalance)))
    excess = abs(ripple_phasor(op)) - spec.dc_link.ripple_limit
    if excess > tol_ripple:
        out.append(Violation("ripple_limit", float(excess)))
    return out


def capacitor_ripple(spec: DcLinkSpec, ripple_magnitude: float,
                     frequency: float = DEFAULT_FREQUENCY) -> tuple[float, float]:
    """Capacitor 2-omega voltage and current ripple amplitudes.

    Uses the small-ripple approximation (dc source current negligible next to
    ``V_dc0 * 2w * C``)::

        |V_r| = |P| / (2w C V_dc0),   |I_r| = |P| / V_dc0

    The ripple voltage has the same angle as the power ripple phasor.
    """
    if spec.capacitance <= 0 or spec.vdc_nominal <= 0:
        raise ValueError("capacitance and vdc_nominal must be positive")
    if ripple_magnitude < 0:
        raise ValueError("ripple magnitude must be >= 0")
    two_w = 4.0 * math.pi * frequency
    i_r = ripple_magnitude / spec.vdc_nominal
    v_r = i_r / (two_w * spec.capacitance)
    return v_r, i_r


def capacitor_losses(spec: DcLinkSpec, ripple_magnitude: float) -> float:
    """ESR loss of the 2-omega capacitor current, ESR = esr_coefficient / C (W)."""
    if spec.capacitance <= 0:
        raise ValueError("capacitance must be positive")
    i_r = ripple_magnitude / spec.vdc_nominal
    esr = spec.esr_coefficient / spec.capacitance
    return esr * i_r ** 2 / 2.0


def gamma_locus(gamma: float, i_mag: float, v_positive: complex = 1.0) -> np.ndarray:
    """Leg currents ``(a, b, c, n)`` on the neutral-current / ripple tradeoff locus.

    ``I_abc = gamma*|I|*b_neg + (1 - gamma)*|I|*b_zero``, rotated so the phase-a
    current is in phase with ``v_positive``.  ``gamma = 0`` is pure zero
    sequence (no ripple, neutral carries 3|I|), ``gamma = 1`` pure negative
    sequence (no neutral current, ripple equal to the converter kVA).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if i_mag < 0:
        raise ValueError("i_mag must be >= 0")
    rot = 1.0 + 0j if v_positive == 0 else complex(v_positive) / abs(v_positive)
    abc = i_mag * rot * (gamma * BASIS_NEGATIVE + (1.0 - gamma) * BASIS_ZERO)
    return np.append(abc, -abc.sum())


def sequence_ripple(v_abcn, i_abcn) -> complex:
    """Ripple phasor of a four-leg converter written with sequence components.

    Equal to ``ripple_phasor`` for any operating point; the factor 3 comes from
    ``B_fort^T B_fort`` pairing zero with zero and positive with negative.
    """
    v = np.asarray(v_abcn, dtype=complex)
    i = np.asarray(i_abcn, dtype=complex)
    v0, vp, vn = to_sequence(v[:3])
    i0, ip, in_ = to_sequence(i[:3])
    return 3.0 * (v0 * i0 + vp * in_ + vn * ip) + v[3] * i[3]


__all__ = [
    "LegSpec", "DcLinkSpec", "VscSpec", "VscOperatingPoint", "Violation",
    "leg_ripple_phasor", "dc_power", "ripple_phasor", "check_constraints",
    "capacitor_ripple", "capacitor_losses", "gamma_locus", "sequence_ripple",
]
