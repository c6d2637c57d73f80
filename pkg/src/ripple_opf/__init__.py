"""Unbalanced four-wire OPF with converter dc-link ripple constraints."""

from .phasor import ALPHA, B_FORT, T_FORT, to_phase, to_sequence, negative_sequence
from .vsc import (DcLinkSpec, LegSpec, VscOperatingPoint, VscSpec, capacitor_losses,
                  capacitor_ripple, check_constraints, dc_power, gamma_locus, ripple_phasor,
                  sequence_ripple)
from .power_quality import DeratingCurve, InductionMachine, derating_cost, derating_factor
from .network import (Branch, Bus, Load, Network, Source, bundled_network, load_network,
                      read_demand_csv, save_network, validate, write_demand_csv)
from .power_flow import PowerFlowError, SystemState, residuals, solve
from .opf import (ConstraintToggles, ObjectiveSpec, OpfProblem, OpfSolution, assemble,
                  evaluate_objective, solve_opf)
from .series import run_timeseries
from .oracle import OracleConfig, compare_to_bilinear, extract_component, simulate

__version__ = "0.1.0"
