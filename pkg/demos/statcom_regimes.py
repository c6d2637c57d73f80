"""Four STATCOM operating regimes on the toy feeder.

The device tries to flatten the peak phase current on the feeder.  Removing
the neutral leg forces pure negative sequence and full ripple; forbidding
ripple forces pure zero sequence and a heavy neutral.  The last regime caps
both and lands in between.
"""

from ripple_opf.opf import solve_opf
from ripple_opf.presets import STATCOM_CASES, opf_preset

for name, lim in STATCOM_CASES.items():
    sol = solve_opf(opf_preset(name))
    print(f"{name}: {lim.description}")
    print(f"    peak feeder current {sol.objective_value:7.2f} A, "
          f"ripple {abs(sol.ripple_per_vsc['statcom']):8.1f} W, "
          f"neutral {sol.neutral_current_per_vsc['statcom']:6.2f} A  [{sol.status}]")
