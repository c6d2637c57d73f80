import numpy as np
import pytest
from hypothesis import given, strategies as st

from ripple_opf.phasor import alpha_power
from ripple_opf.power_quality import (DeratingCurve, InductionMachine, check_vneg_limit,
                                      derating_cost, derating_factor, derating_surrogate)
from ripple_opf.phasor import to_sequence

CURVE = DeratingCurve()


def test_derating_branches():
    assert derating_factor(CURVE, 0.005) == 100.0
    assert derating_factor(CURVE, 0.00999) == 100.0
    assert derating_factor(CURVE, 0.06) == 0.0
    assert derating_factor(CURVE, 0.05) == 0.0
    assert derating_factor(CURVE, 0.03) == pytest.approx(99.83375, abs=1e-12)


def test_derating_interior_matches_quadratic():
    v = np.linspace(0.0101, 0.0499, 20)
    direct = 100.0 - (56.25 * v ** 2 + 2.75 * v + 0.033125)
    np.testing.assert_allclose(derating_factor(CURVE, v), direct, rtol=0, atol=1e-12)


def test_derating_rejects_negative():
    with pytest.raises(ValueError):
        derating_factor(CURVE, -0.01)
    with pytest.raises(ValueError):
        DeratingCurve(lower_knee=0.05, upper_knee=0.01)


@given(st.floats(0.0, 0.2))
def test_surrogate_derivatives(v):
    val, d1, d2 = derating_surrogate(CURVE, v)
    h = 1e-7
    if val not in (0.0, 100.0):
        lo, hi = derating_surrogate(CURVE, v - h)[0], derating_surrogate(CURVE, v + h)[0]
        assert d1 == pytest.approx((hi - lo) / (2 * h), rel=1e-5)
        assert d2 == pytest.approx(2 * 56.25)
    assert 0.0 <= val <= 100.0


def test_surrogate_agrees_in_middle_branch():
    for v in np.linspace(0.011, 0.049, 7):
        assert derating_surrogate(CURVE, v)[0] == pytest.approx(100 - derating_factor(CURVE, v))


def test_cost_examples():
    m = InductionMachine("m", "b", 12.0, 6.0)
    assert derating_cost([m], {"b": 0.005}) == 0.0
    assert derating_cost([m], {"b": 0.03}, weight=1.0) == pytest.approx(1.995)
    with pytest.raises(KeyError):
        derating_cost([m], {})


@given(st.floats(0, 0.1), st.floats(0, 0.1))
def test_cost_monotone(a, b):
    m = InductionMachine("m", "b", 10.0, 5.0)
    lo, hi = sorted((a, b))
    assert derating_cost([m], {"b": lo}) <= derating_cost([m], {"b": hi})


def test_machine_reactive_power():
    m = InductionMachine("m", "b", 10.0, 8.5, 0.85)
    assert m.reactive_power == pytest.approx(8.5 * np.tan(np.arccos(0.85)))
    with pytest.raises(ValueError):
        InductionMachine("m", "b", 0.0, 1.0)


def test_vneg_limit():
    bal = np.array([1, alpha_power(-1), alpha_power(-2)])
    assert check_vneg_limit(bal) is None
    v = np.array([1, alpha_power(-1) * 0.97, alpha_power(-2) * 1.03])
    vn = abs(to_sequence(v)[2])
    res = check_vneg_limit(v)
    if vn > 0.02:
        assert res == pytest.approx(vn - 0.02)
    else:
        assert res is None
    unb = bal + 0.0318 * np.array([1, alpha_power(-2), alpha_power(-1)])
    assert check_vneg_limit(unb) == pytest.approx(0.0118, abs=1e-12)
