"""Optimal power flow with explicit converter dc-link ripple constraints.

The network equations of ``power_flow`` are extended with the VSC device
rows (leg current limits, current balance, dc power balance, 2-omega ripple
equality or limit) and power-quality rows (voltage bounds, negative-sequence
limit), and solved with the interior-point method of ``ipm``.

Objectives:

* ``min_max_phase_current`` - epigraph form ``min t`` with ``|I_k|^2 <= t^2``
  for every conductor of the target branch.
* ``derating_plus_ripple`` - machine derating cost (smooth surrogate inside
  the solver, exact piecewise curve for reporting) plus ``beta * |P_2w|``.

Both add a small ``rho * sum |I_leg / I_base|^2`` so that flat optima (e.g.
every injection that relieves the worst phase equally well) resolve to the
least-current one.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._poly import QuadBuilder
from .ipm import IpmOptions, solve_nlp
from .network import Network, validate
from .phasor import alpha_power
from .power_flow import (Layout, PowerFlowError, PowerFlowSolver, ResidualReport, SystemState,
                         network_rows, residuals, state_to_dict)
from .power_quality import DeratingCurve, derating_cost, derating_surrogate

log = logging.getLogger(__name__)

OBJECTIVES = ("min_max_phase_current", "derating_plus_ripple")
DEFAULT_BETA = 1e-4
RIPPLE_SMOOTHING = 1.0  # W
VNEG_SMOOTHING = 1e-4  # pu
REGULARIZATION = 1e-3
EQ_TOL = 1e-6
INEQ_TOL = 1e-6
STAT_TOL = 1e-5


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "min_max_phase_current"
    target_branch: str | None = None
    derating_weight: float = 1.0
    ripple_weight: float = DEFAULT_BETA
    curve: DeratingCurve = field(default_factory=DeratingCurve)
    regularization: float = REGULARIZATION

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.ripple_weight < 0:
            raise ValueError("ripple_weight must be >= 0")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")


@dataclass(frozen=True)
class ConstraintToggles:
    ripple_limit: bool = True
    vneg_limit: bool = True
    voltage_bounds: bool = True
    ampacity: bool = True


@dataclass(frozen=True)
class OpfProblem:
    network: Network
    objective: ObjectiveSpec
    toggles: ConstraintToggles = field(default_factory=ConstraintToggles)


@dataclass
class Feasibility:
    residuals: ResidualReport
    max_ineq_violation: float


@dataclass
class OpfSolution:
    state: SystemState
    objective_value: float
    ripple_per_vsc: dict  # vsc id -> complex W
    neutral_current_per_vsc: dict  # vsc id -> A, largest neutral-leg magnitude
    feasibility: Feasibility
    solver_stats: dict

    @property
    def status(self) -> str:
        return self.solver_stats["status"]


# ---------------------------------------------------------------- helpers

def _v_neg_coeffs(layout: Layout, bus) -> dict:
    """Coefficients of V- (pu of v_nominal) over voltage ids; the neutral cancels."""
    coeffs = {}
    for ph, k in zip(("a", "b", "c"), (0, 2, 1)):
        vid = layout.v(bus.id, ph)
        if vid is not None:
            coeffs[vid] = coeffs.get(vid, 0) + alpha_power(k) / (3.0 * bus.v_nominal)
    return coeffs


def v_neg_pu(state: SystemState, bus) -> complex:
    u = state.phase_voltages(bus) / bus.v_nominal
    return complex((u[0] + alpha_power(2) * u[1] + alpha_power(1) * u[2]) / 3.0)


def vsc_ripple(state: SystemState, vsc) -> complex:
    return complex(np.sum(state.leg_voltages(vsc) * state.leg_currents(vsc)))


def vsc_neutral_current(state: SystemState, vsc) -> float:
    i = state.leg_currents(vsc)
    return max((abs(c) for c, leg in zip(i, vsc.legs) if leg.conductor == "n"), default=0.0)


def _active_vscs(net: Network):
    return [d for d in net.vscs if any(leg.i_max > 0 for leg in d.legs)]


# ---------------------------------------------------------------- assembly

@dataclass
class Nlp:
    layout: Layout
    eq: object
    ineq: object
    objective: object
    ripple_aux: dict  # vsc id -> (slot re, slot im), W scale
    t_slot: int | None
    problem: OpfProblem

    @property
    def n(self) -> int:
        return self.layout.n


class _Of1:
    def __init__(self, n, t_slot, leg_slots, rho):
        self.n, self.t, self.legs, self.rho = n, t_slot, leg_slots, rho

    def value(self, x):
        return float(x[self.t] + self.rho * np.sum(x[self.legs] ** 2))

    def grad(self, x):
        g = np.zeros(self.n)
        g[self.t] = 1.0
        g[self.legs] += 2.0 * self.rho * x[self.legs]
        return g

    def hess(self, x):
        h = np.zeros((self.n, self.n))
        h[self.legs, self.legs] = 2.0 * self.rho
        return h


class _Of2:
    """Surrogate derating cost + smoothed ripple magnitude + leg regularisation."""

    def __init__(self, n, machines, ripple_slots, leg_slots, weight, beta, curve, rho):
        self.n = n
        # machines: list of (rating kVA, a_re row vector, a_im row vector)
        self.machines = machines
        self.ripple = ripple_slots  # list of (slot re, slot im, scale)
        self.legs, self.weight, self.beta, self.curve, self.rho = leg_slots, weight, beta, curve, rho

    def _machine_terms(self, x):
        for rating, ar, ai in self.machines:
            r, i = ar @ x, ai @ x
            m = math.sqrt(r * r + i * i + VNEG_SMOOTHING ** 2)
            yield rating, ar, ai, r, i, m

    def value(self, x):
        f = self.rho * float(np.sum(x[self.legs] ** 2))
        for rating, _, _, _, _, m in self._machine_terms(x):
            f += self.weight * rating * derating_surrogate(self.curve, m)[0]
        for sr, si, sc in self.ripple:
            pr, pi = sc * x[sr], sc * x[si]
            f += self.beta * (math.sqrt(pr * pr + pi * pi + RIPPLE_SMOOTHING ** 2) - RIPPLE_SMOOTHING)
        return f

    def grad(self, x):
        g = np.zeros(self.n)
        g[self.legs] += 2.0 * self.rho * x[self.legs]
        for rating, ar, ai, r, i, m in self._machine_terms(x):
            d1 = derating_surrogate(self.curve, m)[1]
            g += self.weight * rating * d1 * (r * ar + i * ai) / m
        for sr, si, sc in self.ripple:
            pr, pi = sc * x[sr], sc * x[si]
            phi = math.sqrt(pr * pr + pi * pi + RIPPLE_SMOOTHING ** 2)
            g[sr] += self.beta * sc * pr / phi
            g[si] += self.beta * sc * pi / phi
        return g

    def hess(self, x):
        h = np.zeros((self.n, self.n))
        h[self.legs, self.legs] = 2.0 * self.rho
        for rating, ar, ai, r, i, m in self._machine_terms(x):
            _, d1, d2 = derating_surrogate(self.curve, m)
            dm = (r * ar + i * ai) / m
            d2m = (np.outer(ar, ar) + np.outer(ai, ai)) / m - np.outer(dm, dm) / m
            h += self.weight * rating * (d2 * np.outer(dm, dm) + d1 * d2m)
        for sr, si, sc in self.ripple:
            p = np.array([sc * x[sr], sc * x[si]])
            phi = math.sqrt(p @ p + RIPPLE_SMOOTHING ** 2)
            blk = self.beta * sc * sc * (np.eye(2) / phi - np.outer(p, p) / phi ** 3)
            h[np.ix_([sr, si], [sr, si])] += blk
        return h


def assemble(problem: OpfProblem) -> Nlp:
    """Build the scaled NLP (variables, equality/inequality rows, objective)."""
    net, obj, tog = problem.network, problem.objective, problem.toggles
    issues = validate(net)
    if issues:
        raise AssemblyError("invalid network: " + "; ".join(f"{i.code}: {i.message}" for i in issues))
    if obj.kind == "min_max_phase_current":
        if obj.target_branch is None:
            raise AssemblyError("min_max_phase_current needs a target_branch")
        try:
            target = net.branch(obj.target_branch)
        except KeyError:
            raise AssemblyError(f"unknown target branch {obj.target_branch!r}") from None
    layout = Layout(net)
    ib = layout.i_base
    active = _active_vscs(net)

    # auxiliaries: ripple phasor per device (when limited or penalised) and the epigraph t
    ripple_aux = {}
    for d in active:
        lim = d.dc_link.ripple_limit
        limited = tog.ripple_limit and 0 < lim < math.inf
        if limited or (obj.kind == "derating_plus_ripple" and obj.ripple_weight > 0):
            v_ref = max(layout.buses[leg.bus].v_nominal for leg in d.legs)
            sc = v_ref * ib
            ripple_aux[d.id] = (layout.add_aux(f"ripple_re:{d.id}", sc),
                                layout.add_aux(f"ripple_im:{d.id}", sc), sc)
    t_slot = layout.add_aux("t", ib) if obj.kind == "min_max_phase_current" else None

    eqb = QuadBuilder(layout.var_scale)
    network_rows(layout, eqb)
    inb = QuadBuilder(layout.var_scale)

    # devices with every leg zero-rated take no part: pin their currents to 0
    for d in net.vscs:
        if d in active:
            continue
        for leg in d.legs:
            rr = eqb.row(f"leg_off:{d.id}.{leg.id}:re", 1.0 / ib)
            ri = eqb.row(f"leg_off:{d.id}.{leg.id}:im", 1.0 / ib)
            eqb.c_lin(rr, ri, layout.leg[(d.id, leg.id)], 1.0)

    for d in active:
        legs = [(leg, layout.leg[(d.id, leg.id)]) for leg in d.legs]
        v_ref = max(layout.buses[leg.bus].v_nominal for leg in d.legs)
        # zero-rated legs are absent: I = 0
        for leg, k in legs:
            if leg.i_max == 0:
                rr = eqb.row(f"leg_off:{d.id}.{leg.id}:re", 1.0 / ib)
                ri = eqb.row(f"leg_off:{d.id}.{leg.id}:im", 1.0 / ib)
                eqb.c_lin(rr, ri, k, 1.0)
            elif tog.ampacity and leg.i_max < math.inf:
                r = inb.row(f"leg_amp:{d.id}.{leg.id}", 1.0 / ib ** 2)
                inb.abs2_linear(r, {k: 1.0})
                inb.const_term(r, -leg.i_max ** 2)
        # current balance
        rr = eqb.row(f"balance:{d.id}:re", 1.0 / ib)
        ri = eqb.row(f"balance:{d.id}:im", 1.0 / ib)
        for leg, k in legs:
            if leg.i_max != 0:
                eqb.c_lin(rr, ri, k, 1.0)
        # dc power balance: sum Re(V conj I) = P_src
        lo, hi = d.dc_link.dc_power_bounds
        sc_p = 1.0 / (v_ref * ib)
        if lo == hi:
            r = eqb.row(f"dc_power:{d.id}", sc_p)
            rows = [(r, eqb, 1.0)]
            eqb.const_term(r, -lo)
        else:
            r_hi = inb.row(f"dc_power_hi:{d.id}", sc_p)
            r_lo = inb.row(f"dc_power_lo:{d.id}", sc_p)
            inb.const_term(r_hi, -hi)
            inb.const_term(r_lo, lo)
            rows = [(r_hi, inb, 1.0), (r_lo, inb, -1.0)]
        for r, b, sign in rows:
            for leg, k in legs:
                if leg.i_max != 0:
                    b.c_bilin(r, None, layout.v(leg.bus, leg.conductor), k, sign, conj2=True)
        # ripple phasor sum V I
        lim = d.dc_link.ripple_limit
        if tog.ripple_limit and lim == 0:
            rr = eqb.row(f"ripple_zero:{d.id}:re", sc_p)
            ri = eqb.row(f"ripple_zero:{d.id}:im", sc_p)
            for leg, k in legs:
                eqb.c_bilin(rr, ri, layout.v(leg.bus, leg.conductor), k, 1.0)
        if d.id in ripple_aux:
            sr, si, sc = ripple_aux[d.id]
            rr = eqb.row(f"ripple_def:{d.id}:re", 1.0 / sc)
            ri = eqb.row(f"ripple_def:{d.id}:im", 1.0 / sc)
            eqb.lin_term(rr, sr, 1.0)
            eqb.lin_term(ri, si, 1.0)
            for leg, k in legs:
                eqb.c_bilin(rr, ri, layout.v(leg.bus, leg.conductor), k, -1.0)
            if tog.ripple_limit and 0 < lim < math.inf:
                r = inb.row(f"ripple_limit:{d.id}", 1.0 / sc ** 2)
                inb.quad_term(r, sr, sr, 1.0)
                inb.quad_term(r, si, si, 1.0)
                inb.const_term(r, -lim ** 2)

    if tog.ampacity:
        for br in net.branches:
            for c in br.conductors:
                amp = br.ampacity_of(c)
                if amp < math.inf:
                    r = inb.row(f"branch_amp:{br.id}.{c}", 1.0 / ib ** 2)
                    inb.abs2_linear(r, {layout.branch[(br.id, c)]: 1.0})
                    inb.const_term(r, -amp ** 2)

    if tog.voltage_bounds:
        for b in net.buses:
            for ph in b.phases:
                coeffs = {layout.v(b.id, ph): 1.0}
                if b.has_neutral and layout.v(b.id, "n") is not None:
                    coeffs[layout.v(b.id, "n")] = -1.0
                vn2 = b.v_nominal ** 2
                r = inb.row(f"v_max:{b.id}.{ph}", 1.0 / vn2)
                inb.abs2_linear(r, coeffs)
                inb.const_term(r, -(b.v_max ** 2) * vn2)
                r = inb.row(f"v_min:{b.id}.{ph}", -1.0 / vn2)
                inb.abs2_linear(r, coeffs)
                inb.const_term(r, -(b.v_min ** 2) * vn2)

    if tog.vneg_limit:
        for b in net.buses:
            if b.vneg_limit is not None and len(b.phases) == 3:
                r = inb.row(f"vneg:{b.id}", 1.0 / b.vneg_limit ** 2)
                inb.abs2_linear(r, _v_neg_coeffs(layout, b))
                inb.const_term(r, -b.vneg_limit ** 2)

    if t_slot is not None:
        for c in target.conductors:
            r = inb.row(f"epigraph:{target.id}.{c}", 1.0 / ib ** 2)
            inb.abs2_linear(r, {layout.branch[(target.id, c)]: 1.0})
            inb.quad_term(r, t_slot, t_slot, -1.0)

    eq, ineq = eqb.build(), inb.build()
    n = layout.n
    leg_slots = layout.real_slots(layout.leg[(d.id, leg.id)] for d in active for leg in d.legs)
    if obj.kind == "min_max_phase_current":
        objective = _Of1(n, t_slot, leg_slots, obj.regularization)
    else:
        machines = []
        for m in net.machines:
            bus = layout.buses[m.bus]
            ar, ai = np.zeros(n), np.zeros(n)
            for vid, c in _v_neg_coeffs(layout, bus).items():
                # pu coefficient on the scaled variables
                c = complex(c) * bus.v_nominal
                ar[2 * vid] += c.real
                ar[2 * vid + 1] -= c.imag
                ai[2 * vid] += c.imag
                ai[2 * vid + 1] += c.real
            machines.append((m.rating, ar, ai))
        objective = _Of2(n, machines, list(ripple_aux.values()), leg_slots, obj.derating_weight,
                         obj.ripple_weight, obj.curve, obj.regularization)
    return Nlp(layout, eq, ineq, objective, ripple_aux, t_slot, problem)


# ---------------------------------------------------------------- evaluation

def evaluate_objective(problem: OpfProblem, state: SystemState) -> float:
    """True objective: max target-branch current (A) or exact derating cost + beta |P|."""
    net, obj = problem.network, problem.objective
    if obj.kind == "min_max_phase_current":
        br = net.branch(obj.target_branch)
        return max(abs(state.branch_current[(br.id, c)]) for c in br.conductors)
    vneg = {m.bus: abs(v_neg_pu(state, net.bus(m.bus))) for m in net.machines}
    cost = derating_cost(net.machines, vneg, obj.derating_weight, obj.curve)
    return cost + obj.ripple_weight * sum(abs(vsc_ripple(state, d)) for d in net.vscs)


def surrogate_cost(problem: OpfProblem, state: SystemState) -> float:
    net, obj = problem.network, problem.objective
    total = 0.0
    for m in net.machines:
        v = abs(v_neg_pu(state, net.bus(m.bus)))
        total += m.rating * derating_surrogate(obj.curve, math.hypot(v, VNEG_SMOOTHING))[0]
    return obj.derating_weight * total


def inequality_violation(problem: OpfProblem, state: SystemState) -> float:
    """Largest violation of the toggled inequalities in their natural units (A, pu, W)."""
    net, tog = problem.network, problem.toggles
    worst = 0.0
    for d in net.vscs:
        i = state.leg_currents(d)
        if tog.ampacity:
            for leg, c in zip(d.legs, i):
                worst = max(worst, abs(c) - leg.i_max)
        lim = d.dc_link.ripple_limit
        if tog.ripple_limit and lim < math.inf:
            worst = max(worst, abs(vsc_ripple(state, d)) - lim)
        lo, hi = d.dc_link.dc_power_bounds
        if lo < hi:
            p = float(np.sum((state.leg_voltages(d) * i.conj()).real))
            worst = max(worst, lo - p, p - hi)
    if tog.ampacity:
        for br in net.branches:
            for c in br.conductors:
                worst = max(worst, abs(state.branch_current[(br.id, c)]) - br.ampacity_of(c))
    for b in net.buses:
        u = np.abs(state.phase_voltages(b)) / b.v_nominal if len(b.phases) == 3 else None
        if u is not None and tog.voltage_bounds:
            worst = max(worst, float(np.max(u - b.v_max)), float(np.max(b.v_min - u)))
        if u is not None and tog.vneg_limit and b.vneg_limit is not None:
            worst = max(worst, abs(v_neg_pu(state, b)) - b.vneg_limit)
    return float(max(worst, 0.0))


# ---------------------------------------------------------------- solve

def _initial_point(nlp: Nlp, pf: PowerFlowSolver, rng=None, warm: SystemState | None = None):
    layout = nlp.layout
    net = layout.net
    if warm is not None:
        x = np.zeros(layout.n)
        x[:len(pf.layout.var_scale)] = pf.layout.from_state(warm)
    else:
        set_points = {}
        if rng is not None:
            for d in _active_vscs(net):
                mags = np.array([min(leg.i_max, layout.i_base) for leg in d.legs])
                cur = 0.3 * mags * (rng.standard_normal(len(mags)) + 1j * rng.standard_normal(len(mags)))
                on = mags > 0
                cur[on] -= cur[on].mean()
                cur[~on] = 0.0
                set_points[d.id] = cur
        try:
            state = pf.solve(set_points or None)
        except PowerFlowError:
            state = pf.solve(None)
        x = np.zeros(layout.n)
        x[:len(pf.layout.var_scale)] = pf.layout.from_state(state)
    state = layout.to_state(x)
    for d in net.vscs:
        if d.id in nlp.ripple_aux:
            sr, si, sc = nlp.ripple_aux[d.id]
            p = vsc_ripple(state, d)
            x[sr], x[si] = p.real / sc, p.imag / sc
    if nlp.t_slot is not None:
        br = net.branch(nlp.problem.objective.target_branch)
        t = max(abs(state.branch_current[(br.id, c)]) for c in br.conductors)
        x[nlp.t_slot] = 1.05 * t / layout.i_base + 1e-2
    return x


def _finish(problem: OpfProblem, nlp: Nlp, pf: PowerFlowSolver, res) -> OpfSolution:
    net = problem.network
    raw = nlp.layout.to_state(res.x, iterations=res.iterations)
    stats = {"status": res.status, "iterations": res.iterations, "kkt_error": res.kkt_error,
             "constr_violation": res.constr_violation, "stationarity": res.stationarity,
             "restorations": res.restorations}
    state = raw
    if res.status == "local_optimum":
        # freeze the optimal leg currents and re-solve the power flow
        try:
            state = pf.solve(raw.device_current, x0=pf.layout.from_state(raw))
            state.iterations = res.iterations
        except PowerFlowError as exc:
            stats["status"] = "max_iter"
            stats["pf_reverify"] = str(exc)
    report = residuals(net, state)
    viol = inequality_violation(problem, state)
    if stats["status"] == "local_optimum" and (report.max() > EQ_TOL or viol > INEQ_TOL):
        stats["status"] = "max_iter"
    objective = evaluate_objective(problem, state)
    if problem.objective.kind == "derating_plus_ripple":
        exact = objective - problem.objective.ripple_weight * sum(abs(vsc_ripple(state, d)) for d in net.vscs)
        gap = abs(surrogate_cost(problem, state) - exact)
        scale = problem.objective.derating_weight * sum(m.rating for m in net.machines) * 100.0
        stats["surrogate_gap"] = gap
        stats["surrogate_accepted"] = bool(gap <= 1e-3 * scale) if scale > 0 else True
    return OpfSolution(
        state=state,
        objective_value=float(objective),
        ripple_per_vsc={d.id: vsc_ripple(state, d) for d in net.vscs},
        neutral_current_per_vsc={d.id: vsc_neutral_current(state, d) for d in net.vscs},
        feasibility=Feasibility(report, viol),
        solver_stats=stats,
    )


def _rank_key(sol: OpfSolution):
    ok = sol.status == "local_optimum" and sol.solver_stats.get("surrogate_accepted", True)
    ripple = sum(abs(p) for p in sol.ripple_per_vsc.values())
    return (0 if ok else 1, round(sol.objective_value, 9), ripple)


def solve_opf(problem: OpfProblem, warm_start: SystemState | None = None, starts: int = 3,
              seed: int = 0, options: IpmOptions | None = None) -> OpfSolution:
    """Solve from a power-flow start plus ``starts - 1`` perturbed starts; best feasible wins."""
    nlp = assemble(problem)
    pf = PowerFlowSolver(problem.network, check=False)
    rng = np.random.default_rng(seed)
    candidates = []
    for k in range(max(1, starts)):
        if k == 0:
            x0 = _initial_point(nlp, pf, warm=warm_start)
        else:
            x0 = _initial_point(nlp, pf, rng=rng)
        try:
            res = solve_nlp(nlp.objective, nlp.eq, nlp.ineq, x0, options)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            log.warning("start %d: numerical breakdown: %s", k, exc)
            continue
        sol = _finish(problem, nlp, pf, res)
        sol.solver_stats["start"] = k
        candidates.append(sol)
        log.debug("start %d: %s objective %.6g", k, sol.status, sol.objective_value)
    if not candidates:
        state = pf.solve(None)
        return OpfSolution(state, evaluate_objective(problem, state),
                           {d.id: vsc_ripple(state, d) for d in problem.network.vscs},
                           {d.id: vsc_neutral_current(state, d) for d in problem.network.vscs},
                           Feasibility(residuals(problem.network, state), math.nan),
                           {"status": "infeasible_detected", "iterations": 0, "start": None})
    best = min(candidates, key=_rank_key)
    best.solver_stats["starts"] = len(candidates)
    return best


def solution_to_dict(sol: OpfSolution) -> dict:
    stats = {k: (v if not isinstance(v, float) or math.isfinite(v) else None)
             for k, v in sol.solver_stats.items()}
    return {
        "objective_value": sol.objective_value,
        "status": sol.status,
        "ripple_per_vsc": {k: {"re": p.real, "im": p.imag, "magnitude": abs(p)}
                           for k, p in sorted(sol.ripple_per_vsc.items())},
        "neutral_current_per_vsc": dict(sorted(sol.neutral_current_per_vsc.items())),
        "feasibility": {"kcl_inf_norm": sol.feasibility.residuals.kcl_inf_norm,
                        "ohm_inf_norm": sol.feasibility.residuals.ohm_inf_norm,
                        "load_inf_norm": sol.feasibility.residuals.load_inf_norm,
                        "device_inf_norm": sol.feasibility.residuals.device_inf_norm,
                        "max_ineq_violation": sol.feasibility.max_ineq_violation},
        "solver_stats": dict(sorted(stats.items())),
        "state": state_to_dict(sol.state),
    }


def with_toggles(problem: OpfProblem, **changes) -> OpfProblem:
    return replace(problem, toggles=replace(problem.toggles, **changes))
