"""Phasor helpers and the Fortescue symmetrical-component transform.

Phasors are plain Python/numpy complex numbers in rectangular form.  A phase
triple is a complex array ordered ``(a, b, c)``; a sequence triple is ordered
``(zero, positive, negative)``.  Both transforms accept arrays whose last axis
has length 3, so batches of triples can be transformed in one call.
"""

import cmath
import math

import numpy as np

PHASES = ("a", "b", "c")
SEQUENCES = ("zero", "positive", "negative")

_ANGLE = 2.0 * math.pi / 3.0
_ROOTS = (
    complex(1.0, 0.0),
    complex(-0.5, math.sqrt(3.0) / 2.0),
    complex(-0.5, -math.sqrt(3.0) / 2.0),
)


def alpha_power(k: int) -> complex:
    """Return alpha**k with alpha = exp(j*2*pi/3).

    Reduced modulo 3 and taken from an exact table so that ``|result| == 1``
    and ``alpha_power(k) == alpha_power(k + 3)`` hold exactly.
    """
    return _ROOTS[int(k) % 3]


ALPHA = alpha_power(1)

# Columns are the zero, positive and negative sequence basis vectors.
B_FORT = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, alpha_power(-1), alpha_power(-2)],
        [1.0, alpha_power(-2), alpha_power(-4)],
    ],
    dtype=complex,
)
# Closed-form inverse: B_FORT is sqrt(3) times a unitary matrix.
T_FORT = B_FORT.conj().T / 3.0

BASIS_ZERO = B_FORT[:, 0].copy()
BASIS_POSITIVE = B_FORT[:, 1].copy()
BASIS_NEGATIVE = B_FORT[:, 2].copy()


def _triple(v) -> np.ndarray:
    arr = np.asarray(v, dtype=complex)
    if arr.shape[-1:] != (3,):
        raise ValueError(f"expected last axis of length 3, got shape {arr.shape}")
    return arr


def to_sequence(v) -> np.ndarray:
    """Phase triple(s) ``(a, b, c)`` -> sequence triple(s) ``(zero, pos, neg)``."""
    return _triple(v) @ T_FORT.T


def to_phase(s) -> np.ndarray:
    """Sequence triple(s) ``(zero, pos, neg)`` -> phase triple(s) ``(a, b, c)``."""
    return _triple(s) @ B_FORT.T


def negative_sequence(v) -> complex:
    """Negative-sequence component of a single phase triple."""
    va, vb, vc = _triple(v)
    return (va + alpha_power(2) * vb + alpha_power(1) * vc) / 3.0


def magnitude(p: complex) -> float:
    return abs(p)


def angle(p: complex, deg: bool = False) -> float:
    """Phase angle of a phasor; undefined (ValueError) for a zero phasor."""
    if p == 0:
        raise ValueError("angle of a zero phasor is undefined")
    a = cmath.phase(p)
    return math.degrees(a) if deg else a


def polar(mag: float, ang: float, deg: bool = True) -> complex:
    """Build a phasor from magnitude and angle (degrees by default)."""
    return cmath.rect(mag, math.radians(ang) if deg else ang)


def wrap_degrees(x: float) -> float:
    """Wrap an angle in degrees onto (-180, 180]."""
    y = math.fmod(x + 180.0, 360.0)
    if y <= 0.0:
        y += 360.0
    return y - 180.0
