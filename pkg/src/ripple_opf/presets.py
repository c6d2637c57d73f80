"""Named study configurations bundled with the package.

``1a``-``1d``: four-wire STATCOM on the toy feeder under different neutral
and ripple limits, minimising the peak feeder current.  ``2``: soft open
point between two feeders, minimising machine derating plus ripple.
``3a``-``3f``: converter injections for the dc-link time-domain oracle.
"""

import math
from dataclasses import dataclass, replace

from .network import Network, bundled_network
from .opf import ObjectiveSpec, OpfProblem
from .oracle import CASE_MULTIPLIERS, OracleConfig, case_config

PHASE_AMPACITY = 30.0
CASE1_VSC = "statcom"
CASE1_TARGET = "feeder"


@dataclass(frozen=True)
class StatcomLimits:
    neutral_i_max: float  # A; 0 removes the neutral leg
    ripple_limit: float | None  # W; None means 25% of the device kVA
    description: str


STATCOM_CASES = {
    "1a": StatcomLimits(math.inf, math.inf, "unconstrained neutral and ripple"),
    "1b": StatcomLimits(0.0, math.inf, "three-wire device, no neutral leg"),
    "1c": StatcomLimits(math.inf, 0.0, "ripple-free operation"),
    "1d": StatcomLimits(PHASE_AMPACITY, None, "neutral at phase rating, ripple at 25% of kVA"),
}

OPF_PRESETS = tuple(STATCOM_CASES) + ("2",)
ORACLE_PRESETS = tuple(CASE_MULTIPLIERS)
PRESETS = OPF_PRESETS + ORACLE_PRESETS


def statcom_network(case: str, base: Network | None = None) -> Network:
    """Toy feeder with the STATCOM leg ratings and ripple limit of ``case``."""
    lim = STATCOM_CASES[case]
    net = base if base is not None else bundled_network("toy_2bus")
    dev = net.vsc(CASE1_VSC)
    legs = tuple(replace(leg, i_max=lim.neutral_i_max if leg.conductor == "n" else PHASE_AMPACITY)
                 for leg in dev.legs)
    dev = replace(dev, legs=legs)
    ripple = lim.ripple_limit
    if ripple is None:
        ripple = 0.25 * dev.kva_rating(net.bus(dev.legs[0].bus).v_nominal)
    return net.with_vsc(replace(dev, dc_link=replace(dev.dc_link, ripple_limit=ripple)))


def opf_preset(name: str, base: Network | None = None) -> OpfProblem:
    if name in STATCOM_CASES:
        return OpfProblem(statcom_network(name, base),
                          ObjectiveSpec(kind="min_max_phase_current", target_branch=CASE1_TARGET))
    if name == "2":
        net = base if base is not None else bundled_network("two_feeder_sop")
        return OpfProblem(net, ObjectiveSpec(kind="derating_plus_ripple"))
    raise KeyError(f"unknown OPF preset {name!r}; expected one of {list(OPF_PRESETS)}")


def oracle_preset(name: str, **overrides) -> OracleConfig:
    return case_config(name, **overrides)
