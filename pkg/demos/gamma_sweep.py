"""Walk the tradeoff between neutral current and dc-link ripple.

At gamma = 0 the device injects pure zero sequence: triple neutral current and
no ripple.  At gamma = 1 it injects pure negative sequence: no neutral
current and the largest ripple.  Everything in between is a straight blend.
"""

import numpy as np

from ripple_opf.network import bundled_network
from ripple_opf.phasor import to_sequence
from ripple_opf.power_flow import PowerFlowSolver
from ripple_opf.vsc import VscOperatingPoint, gamma_locus, ripple_phasor

net = bundled_network("toy_2bus")
dev = net.vsc("statcom")
pf = PowerFlowSolver(net)
state = pf.solve()
bus = dev.legs[0].bus
v_pos = to_sequence(np.array([state.voltage[(bus, c)] for c in "abc"]))[1]
i_mag = min(leg.i_max for leg in dev.legs if leg.conductor != "n")
rot = v_pos / abs(v_pos)
order = {"a": 0, "b": 1, "c": 2, "n": 3}

print(f"{'gamma':>6} {'|I_n| (A)':>10} {'ripple (W)':>11} {'feeder peak (A)':>16}")
for g in np.linspace(0.0, 1.0, 11):
    inj = gamma_locus(g, i_mag, rot)
    st = pf.solve({(dev.id, leg.id): inj[order[leg.conductor]] for leg in dev.legs})
    v = [st.voltage[(leg.bus, leg.conductor)] for leg in dev.legs]
    ripple = abs(ripple_phasor(VscOperatingPoint(tuple(v), tuple(inj))))
    peak = max(abs(st.branch_current[("feeder", c)]) for c in "abc")
    print(f"{g:6.1f} {abs(inj[3]):10.2f} {ripple:11.1f} {peak:16.2f}")
