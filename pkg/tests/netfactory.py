"""Small hand-built networks shared by the tests."""

import math

from ripple_opf.network import network_from_dict


def two_bus(v_source=240.0, z=(0.1, 0.1), p_kw=1.0, q_kvar=0.0, vsc=False):
    """Balanced two-bus feeder with uncoupled conductors and solid grounding at both ends."""
    zr, zi = z
    diag_re = [[zr if r == c else 0.0 for c in range(4)] for r in range(4)]
    diag_im = [[zi if r == c else 0.0 for c in range(4)] for r in range(4)]
    d = {
        "schema_version": 1, "name": "two_bus",
        "buses": [
            {"id": "s", "v_nominal": v_source, "grounding_resistance": 0.0, "v_min": 0.5, "v_max": 1.5},
            {"id": "r", "v_nominal": v_source, "grounding_resistance": 0.0, "v_min": 0.5, "v_max": 1.5},
        ],
        "branches": [{"id": "line", "from_bus": "s", "to_bus": "r",
                      "impedance": {"re": diag_re, "im": diag_im}, "ampacity": None}],
        "sources": [{"id": "g", "bus": "s", "sequence_voltage": [0, 1, 0]}],
        "loads": [{"id": "ld", "bus": "r", "phases": ["a", "b", "c"], "p_kw": p_kw, "q_kvar": q_kvar}],
    }
    if vsc:
        d["vscs"] = [{"id": "d", "legs": [{"id": c, "bus": "r", "conductor": c, "i_max": 20.0}
                                          for c in "abcn"],
                      "dc_link": {"capacitance": 5e-3, "vdc_nominal": 700.0}}]
    return network_from_dict(d)


def unit_dict():
    """Minimal valid network dictionary for validation tests."""
    return {
        "schema_version": 1,
        "buses": [{"id": "s", "grounding_resistance": 0.0}, {"id": "r"}],
        "branches": [{"id": "l", "from_bus": "s", "to_bus": "r",
                      "impedance": {"z0": [0.1, 0.1], "z1": [0.05, 0.05]}, "ampacity": 100.0}],
        "sources": [{"id": "g", "bus": "s"}],
        "loads": [],
        "vscs": [],
    }


INF = math.inf
