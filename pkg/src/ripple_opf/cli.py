"""Command-line front end: ``ripple-opf {pf,opf,opf-series,oracle,gamma-sweep}``.

Every command writes into ``--out``.  Exit status is 0 on success, 1 when
the inputs fail validation and 2 when a solver fails; in both failure cases
``error.json`` describes what went wrong.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import presets
from .ipm import IpmOptions
from .network import (DemandSeries, bundled_network, bundled_path, load_network,
                      read_demand_csv, validate)
from .opf import ObjectiveSpec, OpfProblem, solution_to_dict, solve_opf
from .oracle import (OracleError, STEADY_PERIODS, compare_to_bilinear, simulate,
                     write_spectrum_csv, write_trace_csv, SimTrace)
from .phasor import to_sequence
from .power_flow import PowerFlowError, PowerFlowSolver, residuals, state_to_dict
from .series import RECORD_FIELDS, run_timeseries
from .vsc import gamma_locus

log = logging.getLogger("ripple_opf")

COMMANDS = ("pf", "opf", "opf-series", "oracle", "gamma-sweep")
OBJECTIVE_FLAGS = {"of1": "min_max_phase_current", "of2": "derating_plus_ripple"}
EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class InputError(Exception):
    pass


class SolverError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    network_path: str | None = None
    demand_path: str | None = None
    objective: str | None = None  # of1 / of2
    preset: str | None = None
    target_branch: str | None = None
    ripple_limit_w: float | None = None
    beta: float | None = None
    output_dir: str = "out"
    workers: int = 1
    points: int = 11
    step: int = 0
    starts: int = 3
    seed: int = 0
    tol: float | None = None
    max_iter: int | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        for p in (self.network_path, self.demand_path):
            if p is not None and not Path(p).exists():
                raise InputError(f"file not found: {p}")
        if self.objective is not None and self.objective not in OBJECTIVE_FLAGS:
            raise InputError(f"objective must be one of {sorted(OBJECTIVE_FLAGS)}")

    def ipm_options(self) -> IpmOptions:
        opt = IpmOptions()
        if self.tol is not None:
            opt = replace(opt, tol=self.tol)
        if self.max_iter is not None:
            opt = replace(opt, max_iter=self.max_iter)
        return opt


# ---------------------------------------------------------------- io helpers

def _clean(obj):
    """JSON-safe copy: non-finite floats become null, complex becomes [re, im]."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, complex):
        return [_clean(obj.real), _clean(obj.imag)]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


# ---------------------------------------------------------------- problem setup

def _load_net(cfg: RunConfig, default: str | None = None):
    if cfg.network_path is None and default is None:
        raise InputError("--network is required")
    try:
        net = load_network(cfg.network_path) if cfg.network_path else bundled_network(default)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot parse network: {exc}") from exc
    issues = validate(net)
    if issues:
        raise InputError("network validation failed: "
                         + "; ".join(f"{i.code}: {i.message}" for i in issues))
    return net


def _load_demand(cfg: RunConfig) -> DemandSeries | None:
    if cfg.demand_path is None:
        return None
    try:
        return read_demand_csv(cfg.demand_path)
    except (ValueError, KeyError) as exc:
        raise InputError(f"cannot parse demand: {exc}") from exc


def _default_target(net) -> str:
    src_buses = {s.bus for s in net.sources}
    for br in net.branches:
        if br.from_bus in src_buses or br.to_bus in src_buses:
            return br.id
    raise InputError("no branch adjacent to a source; pass --target-branch")


def build_problem(cfg: RunConfig) -> OpfProblem:
    if cfg.preset is not None:
        if cfg.preset not in presets.OPF_PRESETS:
            raise InputError(f"unknown OPF preset {cfg.preset!r}; expected one of {list(presets.OPF_PRESETS)}")
        base = _load_net(cfg) if cfg.network_path else None
        problem = presets.opf_preset(cfg.preset, base)
        issues = validate(problem.network)
        if issues:
            raise InputError("; ".join(i.message for i in issues))
    else:
        net = _load_net(cfg)
        kind = OBJECTIVE_FLAGS[cfg.objective or "of1"]
        target = cfg.target_branch or (_default_target(net) if kind == "min_max_phase_current" else None)
        problem = OpfProblem(net, ObjectiveSpec(kind=kind, target_branch=target))
    obj = problem.objective
    if cfg.objective is not None and OBJECTIVE_FLAGS[cfg.objective] != obj.kind:
        target = cfg.target_branch or obj.target_branch or _default_target(problem.network)
        obj = replace(obj, kind=OBJECTIVE_FLAGS[cfg.objective], target_branch=target)
    if cfg.target_branch is not None:
        obj = replace(obj, target_branch=cfg.target_branch)
    if cfg.beta is not None:
        if cfg.beta < 0:
            raise InputError("--beta must be >= 0")
        obj = replace(obj, ripple_weight=cfg.beta)
    net = problem.network
    if cfg.ripple_limit_w is not None:
        if cfg.ripple_limit_w < 0:
            raise InputError("--ripple-limit-w must be >= 0")
        for d in net.vscs:
            net = net.with_vsc(replace(d, dc_link=replace(d.dc_link, ripple_limit=cfg.ripple_limit_w)))
    if obj.target_branch is not None:
        try:
            net.branch(obj.target_branch)
        except KeyError:
            raise InputError(f"unknown target branch {obj.target_branch!r}") from None
    return replace(problem, network=net, objective=obj)


# ---------------------------------------------------------------- commands

def cmd_pf(cfg: RunConfig, out: Path) -> int:
    net = _load_net(cfg)
    demand = _load_demand(cfg)
    if demand is not None:
        if not 0 <= cfg.step < len(demand):
            raise InputError(f"--step {cfg.step} outside the demand series")
        try:
            net = net.with_demand(demand.steps[cfg.step])
        except KeyError as exc:
            raise InputError(str(exc)) from exc
    try:
        state = PowerFlowSolver(net).solve()
    except PowerFlowError as exc:
        raise SolverError(str(exc)) from exc
    rep = residuals(net, state)
    write_json(out / "solution.json", {"command": "pf", "network": net.name,
                                       "residuals": vars(rep), "state": state_to_dict(state)})
    rows = []
    for b in net.buses:
        for c in b.conductors:
            v = state.voltage.get((b.id, c), 0j)
            rows.append([b.id, c, abs(v), math.degrees(np.angle(v)) if abs(v) > 0 else 0.0])
    write_csv(out / "summary.csv", ("bus", "conductor", "v_magnitude", "v_angle_deg"), rows)
    return EXIT_OK


def _device_rows(sol, net):
    rows = []
    for d in net.vscs:
        p = sol.ripple_per_vsc[d.id]
        for leg, i in zip(d.legs, sol.state.leg_currents(d)):
            rows.append([d.id, leg.id, leg.conductor, abs(i),
                         math.degrees(np.angle(i)) if abs(i) > 0 else 0.0,
                         abs(p), sol.neutral_current_per_vsc[d.id]])
    return rows


def cmd_opf(cfg: RunConfig, out: Path) -> int:
    problem = build_problem(cfg)
    sol = solve_opf(problem, starts=cfg.starts, seed=cfg.seed, options=cfg.ipm_options())
    doc = solution_to_dict(sol)
    doc.update(command="opf", preset=cfg.preset, objective_kind=problem.objective.kind,
               target_branch=problem.objective.target_branch)
    write_json(out / "solution.json", doc)
    write_csv(out / "summary.csv", ("vsc", "leg", "conductor", "current_a", "angle_deg",
                                    "ripple_w", "neutral_current_a"), _device_rows(sol, problem.network))
    if sol.status != "local_optimum":
        raise SolverError(f"OPF finished with status {sol.status}")
    return EXIT_OK


def cmd_series(cfg: RunConfig, out: Path) -> int:
    problem = build_problem(cfg)
    demand = _load_demand(cfg)
    if demand is None:
        if cfg.preset in presets.STATCOM_CASES:
            demand = read_demand_csv(bundled_path("toy_48step.csv"))
        else:
            raise InputError("--demand is required")
    try:
        problem.network.with_demand(demand.steps[0] if len(demand) else {})
    except KeyError as exc:
        raise InputError(str(exc)) from exc
    res = run_timeseries(problem, demand, workers=cfg.workers, starts=cfg.starts,
                         seed=cfg.seed, options=cfg.ipm_options())
    write_csv(out / "summary.csv", RECORD_FIELDS, (r.row() for r in res.records))
    write_csv(out / "duration_curve.csv", ("rank", "max_current_without_a", "max_current_with_a"),
              ([k, a, b] for k, (a, b) in enumerate(zip(res.duration_without, res.duration_with))))
    write_json(out / "solution.json", {
        "command": "opf-series", "preset": cfg.preset, "steps": len(res.records),
        "failed_steps": [r.index for r in res.failures], "peak_reduction_a": res.peak_reduction(),
        "records": [dict(zip(RECORD_FIELDS, r.row())) for r in res.records]})
    if res.failures:
        raise SolverError(f"{len(res.failures)} of {len(res.records)} steps failed")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, out: Path) -> int:
    case = cfg.preset
    if case not in presets.ORACLE_PRESETS:
        raise InputError(f"--case must be one of {list(presets.ORACLE_PRESETS)}")
    conf = presets.oracle_preset(case)
    try:
        trace = simulate(conf)
    except OracleError as exc:
        raise SolverError(str(exc)) from exc
    rep = compare_to_bilinear(conf, trace)
    per = int(round(1.0 / (trace.frequency * trace.dt)))
    m = per * STEADY_PERIODS + 1
    window = SimTrace(trace.time[-m:], trace.p_dc[-m:], trace.v_dc[-m:], trace.i_cap[-m:],
                      trace.i_src[-m:], trace.v_terminal[-m:], trace.frequency, trace.dt)
    write_trace_csv(window, out / "trace.csv")
    write_spectrum_csv(trace, out / "spectrum.csv")
    write_json(out / "solution.json", {"command": "oracle", "case": case, "report": vars(rep)})
    write_csv(out / "summary.csv", ("quantity", "value"), sorted(vars(rep).items()))
    return EXIT_OK


def cmd_gamma_sweep(cfg: RunConfig, out: Path) -> int:
    net = _load_net(cfg, default="toy_2bus")
    if cfg.points < 2:
        raise InputError("--points must be >= 2")
    if not net.vscs:
        raise InputError("gamma sweep needs a network with a VSC")
    dev = net.vscs[0]
    phase_legs = [leg for leg in dev.legs if leg.conductor != "n"]
    if len(phase_legs) != 3 or len(dev.legs) != 4 or len({leg.bus for leg in dev.legs}) != 1:
        raise InputError(f"VSC {dev.id!r} must be a single four-leg converter")
    i_mag = min(leg.i_max for leg in phase_legs)
    if not math.isfinite(i_mag):
        raise InputError("gamma sweep needs finite phase-leg ratings")
    pf = PowerFlowSolver(net)
    try:
        base = pf.solve()
    except PowerFlowError as exc:
        raise SolverError(str(exc)) from exc
    v_pos = to_sequence(base.phase_voltages(net.bus(dev.legs[0].bus)))[1]
    target = cfg.target_branch or _default_target(net)
    rows = []
    for k in range(cfg.points):
        g = k / (cfg.points - 1)
        inj = gamma_locus(g, i_mag, v_pos)
        order = {"a": 0, "b": 1, "c": 2, "n": 3}
        setp = {(dev.id, leg.id): inj[order[leg.conductor]] for leg in dev.legs}
        try:
            st = pf.solve(setp, x0=pf.last_x)
        except PowerFlowError as exc:
            raise SolverError(f"gamma {g}: {exc}") from exc
        v = st.leg_voltages(dev)
        i = st.leg_currents(dev)
        br = net.branch(target)
        rows.append([g, abs(i[3]), abs(np.sum(v * i)), 3.0 * abs(v_pos) * i_mag * g,
                     max(abs(st.branch_current[(br.id, c)]) for c in br.conductors)])
    header = ("gamma", "neutral_current_a", "ripple_w", "ripple_ideal_w", "max_target_current_a")
    write_csv(out / "summary.csv", header, rows)
    write_json(out / "solution.json", {"command": "gamma-sweep", "vsc": dev.id, "i_mag": i_mag,
                                       "target_branch": target,
                                       "rows": [dict(zip(header, r)) for r in rows]})
    return EXIT_OK


HANDLERS = {"pf": cmd_pf, "opf": cmd_opf, "opf-series": cmd_series, "oracle": cmd_oracle,
            "gamma-sweep": cmd_gamma_sweep}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    err = out / "error.json"
    if err.exists():
        err.unlink()
    try:
        return HANDLERS[cfg.command](cfg, out)
    except InputError as exc:
        code, kind = EXIT_INVALID, "validation"
        msg = str(exc)
    except SolverError as exc:
        code, kind = EXIT_SOLVER, "solver"
        msg = str(exc)
    write_json(err, {"command": cfg.command, "error": kind, "exit_code": code, "message": msg})
    print(f"ripple-opf {cfg.command}: {kind} error: {msg}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ripple-opf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, network_required=False):
        p.add_argument("--network", dest="network_path", required=network_required,
                       help="network JSON file")
        p.add_argument("--out", dest="output_dir", default="out", help="output directory")
        return p

    def opf_flags(p):
        p.add_argument("--preset", choices=presets.OPF_PRESETS)
        p.add_argument("--objective", choices=sorted(OBJECTIVE_FLAGS))
        p.add_argument("--target-branch")
        p.add_argument("--ripple-limit-w", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--starts", type=int, default=3)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)

    p = common(sub.add_parser("pf", help="solve a power flow"), network_required=True)
    p.add_argument("--demand", dest="demand_path")
    p.add_argument("--step", type=int, default=0, help="demand timestep to apply")
    opf_flags(common(sub.add_parser("opf", help="solve one OPF")))
    p = common(sub.add_parser("opf-series", help="OPF per demand timestep"))
    opf_flags(p)
    p.add_argument("--demand", dest="demand_path")
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("oracle", help="time-domain dc-link simulation")
    p.add_argument("--case", "--preset", dest="preset", required=True, choices=presets.ORACLE_PRESETS)
    p.add_argument("--out", dest="output_dir", default="out")
    p = common(sub.add_parser("gamma-sweep", help="sweep the neutral/ripple tradeoff locus"))
    p.add_argument("--points", type=int, default=11)
    p.add_argument("--target-branch")
    return ap


def main(argv=None) -> int:
    level = os.environ.get("RIPPLE_OPF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = vars(build_parser().parse_args(argv))
    try:
        cfg = RunConfig(**{k: v for k, v in args.items() if v is not None})
    except InputError as exc:
        Path(args.get("output_dir") or "out").mkdir(parents=True, exist_ok=True)
        write_json(Path(args.get("output_dir") or "out") / "error.json",
                   {"command": args["command"], "error": "validation", "exit_code": EXIT_INVALID,
                    "message": str(exc)})
        print(f"ripple-opf: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
