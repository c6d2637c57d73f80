"""Unbalanced four-wire power flow in current-voltage rectangular form.

Unknowns are the real and imaginary parts of free node voltages, branch
currents, source currents and load currents.  Every equation (KCL, Ohm's law,
Thevenin sources, constant-power loads) is linear or bilinear in those
unknowns, so the Newton Jacobian is exact.  VSC leg currents are fixed
set-points here and free variables in the OPF, which reuses this layout.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._poly import QuadBuilder, QuadRows
from .network import Network, free_nodes, validate

log = logging.getLogger(__name__)

DENSE_LIMIT = 200


class PowerFlowError(RuntimeError):
    """Newton failed; ``diagnostic`` carries iteration count and final residual."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


@dataclass(frozen=True)
class LoadEntry:
    """One phase connection of a load or induction machine."""

    label: str
    bus: str
    phase: str
    p: float  # W
    q: float  # var


@dataclass
class SystemState:
    voltage: dict  # (bus, conductor) -> complex V
    branch_current: dict  # (branch, conductor) -> complex A, from -> to
    device_current: dict  # (vsc, leg) -> complex A injected into the grid
    source_current: dict = field(default_factory=dict)  # (source, conductor) -> A into the bus
    load_current: dict = field(default_factory=dict)  # load label -> A drawn
    iterations: int = 0

    def leg_currents(self, vsc) -> np.ndarray:
        return np.array([self.device_current.get((vsc.id, leg.id), 0j) for leg in vsc.legs], dtype=complex)

    def leg_voltages(self, vsc) -> np.ndarray:
        return np.array([self.voltage[(leg.bus, leg.conductor)] for leg in vsc.legs], dtype=complex)

    def phase_voltages(self, bus) -> np.ndarray:
        """Phase-to-neutral (or phase-to-earth) voltages of a bus, ordered a, b, c."""
        vn = self.voltage.get((bus.id, "n"), 0j) if bus.has_neutral else 0j
        return np.array([self.voltage[(bus.id, p)] - vn for p in ("a", "b", "c")], dtype=complex)


@dataclass
class ResidualReport:
    kcl_inf_norm: float  # A
    ohm_inf_norm: float  # V (branch and source Thevenin equations)
    load_inf_norm: float  # W / var
    device_inf_norm: float  # A for current balance, W for dc power balance

    def max(self) -> float:
        return max(self.kcl_inf_norm, self.ohm_inf_norm, self.load_inf_norm, self.device_inf_norm)


def load_entries(net: Network) -> list[LoadEntry]:
    out = []
    for ld in net.loads:
        for ph, p, q in zip(ld.phases, ld.p_kw, ld.q_kvar):
            out.append(LoadEntry(f"{ld.id}:{ph}", ld.bus, ph, 1e3 * p, 1e3 * q))
    for m in net.machines:
        p, q = 1e3 * m.active_power / 3.0, 1e3 * m.reactive_power / 3.0
        for ph in ("a", "b", "c"):
            out.append(LoadEntry(f"{m.id}:{ph}", m.bus, ph, p, q))
    return out


def current_base(net: Network) -> float:
    rated = [leg.i_max for d in net.vscs for leg in d.legs if 0 < leg.i_max < math.inf]
    rated += [a for br in net.branches for a in br.ampacity if 0 < a < math.inf]
    return float(max(rated)) if rated else 100.0


class Layout:
    """Complex variable ids for one network plus optional real auxiliaries."""

    def __init__(self, net: Network, i_base: float | None = None):
        self.net = net
        self.i_base = i_base or current_base(net)
        self.buses = {b.id: b for b in net.buses}
        scale = []
        self.node = {}
        for nd in free_nodes(net):
            self.node[nd] = len(scale)
            scale.append(self.buses[nd[0]].v_nominal)
        self.branch = {}
        for br in net.branches:
            for c in br.conductors:
                self.branch[(br.id, c)] = len(scale)
                scale.append(self.i_base)
        self.source = {}
        for s in net.sources:
            for c in self.source_conductors(s):
                self.source[(s.id, c)] = len(scale)
                scale.append(self.i_base)
        self.loads = load_entries(net)
        self.load = {}
        for e in self.loads:
            self.load[e.label] = len(scale)
            scale.append(self.i_base)
        self.leg = {}
        for d in net.vscs:
            for leg in d.legs:
                self.leg[(d.id, leg.id)] = len(scale)
                scale.append(self.i_base)
        self.n_complex = len(scale)
        self.var_scale = list(np.repeat(scale, 2))
        self.aux = {}

    def source_conductors(self, src) -> tuple[str, ...]:
        """Source terminals carrying a current unknown (a solidly earthed neutral is not one)."""
        b = self.buses[src.bus]
        return tuple(c for c in b.conductors if (b.id, c) in self.node)

    def add_aux(self, name, scale=1.0) -> int:
        self.aux[name] = len(self.var_scale)
        self.var_scale.append(float(scale))
        return self.aux[name]

    @property
    def n(self) -> int:
        return len(self.var_scale)

    def v(self, bus, cond):
        """Voltage variable id, or None for a solidly grounded neutral."""
        return self.node.get((bus, cond))

    def real_slots(self, ids) -> np.ndarray:
        ids = np.asarray(list(ids), dtype=np.int64)
        return np.sort(np.concatenate([2 * ids, 2 * ids + 1])) if ids.size else ids

    def leg_slots(self) -> np.ndarray:
        return self.real_slots(self.leg.values())

    # --- conversions between the scaled real vector and SI quantities
    def cget(self, x, k) -> complex:
        if k is None:
            return 0j
        s = self.var_scale[2 * k]
        return complex(x[2 * k] * s, x[2 * k + 1] * s)

    def cset(self, x, k, val):
        s = self.var_scale[2 * k]
        x[2 * k] = val.real / s
        x[2 * k + 1] = val.imag / s

    def to_state(self, x, iterations=0) -> SystemState:
        volt = {}
        for b in self.net.buses:
            for c in b.conductors:
                volt[(b.id, c)] = self.cget(x, self.v(b.id, c))
        return SystemState(
            voltage=volt,
            branch_current={key: self.cget(x, k) for key, k in self.branch.items()},
            device_current={key: self.cget(x, k) for key, k in self.leg.items()},
            source_current={key: self.cget(x, k) for key, k in self.source.items()},
            load_current={key: self.cget(x, k) for key, k in self.load.items()},
            iterations=iterations,
        )

    def from_state(self, state: SystemState) -> np.ndarray:
        x = np.zeros(self.n)
        for key, k in self.node.items():
            self.cset(x, k, state.voltage[key])
        for table, values in ((self.branch, state.branch_current), (self.source, state.source_current),
                              (self.load, state.load_current), (self.leg, state.device_current)):
            for key, k in table.items():
                self.cset(x, k, complex(values.get(key, 0j)))
        return x

    def flat_start(self, leg_currents=None) -> np.ndarray:
        """Source-propagated flat profile: each island takes its source EMF, neutrals 0."""
        net = self.net
        adj = {b.id: set() for b in net.buses}
        for br in net.branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        x = np.zeros(self.n)
        for src in net.sources:
            emf_pu = {c: e / self.buses[src.bus].v_nominal for c, e in net.source_emf(src).items()}
            seen, stack = {src.bus}, [src.bus]
            while stack:
                b = stack.pop()
                for c in self.buses[b].conductors:
                    k = self.v(b, c)
                    if k is not None and c != "n":
                        self.cset(x, k, emf_pu.get(c, 0j) * self.buses[b].v_nominal)
                for nb in adj[b]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
        if leg_currents:
            self.set_legs(x, leg_currents)
        return x

    def set_legs(self, x, leg_currents):
        """``leg_currents``: {vsc_id: sequence aligned with legs} or {(vsc, leg): complex}."""
        for key, val in leg_currents.items():
            if isinstance(key, tuple):
                self.cset(x, self.leg[key], complex(val))
            else:
                d = self.net.vsc(key)
                vals = list(val)
                if len(vals) != len(d.legs):
                    raise ValueError(f"VSC {key}: expected {len(d.legs)} leg currents, got {len(vals)}")
                for leg, v in zip(d.legs, vals):
                    self.cset(x, self.leg[(d.id, leg.id)], complex(v))


def network_rows(layout: Layout, builder: QuadBuilder) -> None:
    """Append KCL, Ohm, source and load equations (2 rows each, re/im)."""
    net, L = layout.net, layout
    ib = layout.i_base
    # KCL: sum of currents leaving the node through elements = 0
    kcl = {}
    for (bus, c), k in L.node.items():
        rr = builder.row(f"kcl:{bus}.{c}:re", 1.0 / ib)
        ri = builder.row(f"kcl:{bus}.{c}:im", 1.0 / ib)
        kcl[(bus, c)] = (rr, ri)
    for br in net.branches:
        for c in br.conductors:
            k = L.branch[(br.id, c)]
            if (br.from_bus, c) in kcl:
                builder.c_lin(*kcl[(br.from_bus, c)], k, 1.0)
            if (br.to_bus, c) in kcl:
                builder.c_lin(*kcl[(br.to_bus, c)], k, -1.0)
    for s in net.sources:
        for c in L.source_conductors(s):
            if (s.bus, c) in kcl:
                builder.c_lin(*kcl[(s.bus, c)], L.source[(s.id, c)], -1.0)
    for e in L.loads:
        k = L.load[e.label]
        if (e.bus, e.phase) in kcl:
            builder.c_lin(*kcl[(e.bus, e.phase)], k, 1.0)
        if (e.bus, "n") in kcl:
            builder.c_lin(*kcl[(e.bus, "n")], k, -1.0)
    for d in net.vscs:
        for leg in d.legs:
            if (leg.bus, leg.conductor) in kcl:
                builder.c_lin(*kcl[(leg.bus, leg.conductor)], L.leg[(d.id, leg.id)], -1.0)
    for b in net.buses:
        r = b.grounding_resistance
        if r is not None and r > 0 and (b.id, "n") in kcl:
            builder.c_lin(*kcl[(b.id, "n")], L.v(b.id, "n"), 1.0 / r)

    # Ohm: V_from - V_to - Z I = 0
    for br in net.branches:
        z = br.z
        vb = L.buses[br.from_bus].v_nominal
        for a, c in enumerate(br.conductors):
            rr = builder.row(f"ohm:{br.id}.{c}:re", 1.0 / vb)
            ri = builder.row(f"ohm:{br.id}.{c}:im", 1.0 / vb)
            builder.c_lin(rr, ri, L.v(br.from_bus, c), 1.0)
            builder.c_lin(rr, ri, L.v(br.to_bus, c), -1.0)
            for b_, d in enumerate(br.conductors):
                builder.c_lin(rr, ri, L.branch[(br.id, d)], -z[a, b_])

    # Thevenin source: E - V - Zs I = 0
    for s in net.sources:
        bus = L.buses[s.bus]
        z = s.z
        emf = net.source_emf(s)
        conds = L.source_conductors(s)
        for c in conds:
            a = bus.conductors.index(c)
            rr = builder.row(f"src:{s.id}.{c}:re", 1.0 / bus.v_nominal)
            ri = builder.row(f"src:{s.id}.{c}:im", 1.0 / bus.v_nominal)
            builder.c_const(rr, ri, emf[c])
            builder.c_lin(rr, ri, L.v(s.bus, c), -1.0)
            for d in conds:
                builder.c_lin(rr, ri, L.source[(s.id, d)], -z[a, bus.conductors.index(d)])

    # constant power: (V_p - V_n) conj(I) - (P + jQ) = 0
    for e in L.loads:
        bus = L.buses[e.bus]
        sc = 1.0 / (bus.v_nominal * ib)
        rr = builder.row(f"load:{e.label}:re", sc)
        ri = builder.row(f"load:{e.label}:im", sc)
        k = L.load[e.label]
        builder.c_bilin(rr, ri, L.v(e.bus, e.phase), k, 1.0, conj2=True)
        builder.c_bilin(rr, ri, L.v(e.bus, "n"), k, -1.0, conj2=True)
        builder.c_const(rr, ri, complex(-e.p, -e.q))


def _solve_linear(jac, rhs):
    if jac.shape[0] < DENSE_LIMIT:
        return sla.solve(jac.toarray(), rhs)
    return spla.splu(sp.csc_matrix(jac)).solve(rhs)


class PowerFlowSolver:
    """Reusable Newton solver for one network (layout and rows built once)."""

    def __init__(self, net: Network, check: bool = True):
        if check:
            issues = validate(net)
            if issues:
                raise ValueError("invalid network: " + "; ".join(f"{i.code}: {i.message}" for i in issues))
        self.net = net
        self.layout = Layout(net)
        builder = QuadBuilder(self.layout.var_scale)
        network_rows(self.layout, builder)
        self.rows: QuadRows = builder.build()
        fixed = np.zeros(self.layout.n, dtype=bool)
        fixed[self.layout.leg_slots()] = True
        self.free = np.flatnonzero(~fixed)
        if len(self.free) != self.rows.m:
            raise RuntimeError("power-flow system is not square")

    def solve(self, device_currents=None, x0=None, max_iter: int = 50, tol: float = 1e-8) -> SystemState:
        L = self.layout
        x = L.flat_start() if x0 is None else np.array(x0, dtype=float)
        x[L.leg_slots()] = 0.0
        if device_currents:
            L.set_legs(x, device_currents)
        f = self.rows.value(x)
        norm = float(np.max(np.abs(f))) if f.size else 0.0
        it = 0
        while norm >= tol:
            if it >= max_iter:
                raise PowerFlowError(f"power flow did not converge in {max_iter} iterations",
                                     {"iterations": it, "residual": norm})
            jac = self.rows.jacobian(x)[:, self.free]
            try:
                dx = _solve_linear(jac, -f)
            except (np.linalg.LinAlgError, RuntimeError) as exc:
                raise PowerFlowError("singular power-flow Jacobian",
                                     {"iterations": it, "residual": norm}) from exc
            if not np.all(np.isfinite(dx)):
                raise PowerFlowError("singular power-flow Jacobian", {"iterations": it, "residual": norm})
            x[self.free] += dx
            it += 1
            f = self.rows.value(x)
            norm = float(np.max(np.abs(f)))
            log.debug("pf iter %d residual %.3e", it, norm)
        if it:
            # one polishing step costs little and lands near machine precision
            dx = _solve_linear(self.rows.jacobian(x)[:, self.free], -f)
            x_pol = x.copy()
            x_pol[self.free] += dx
            if np.max(np.abs(self.rows.value(x_pol))) <= norm:
                x = x_pol
        self.last_x = x
        return L.to_state(x, iterations=it)


def solve(net: Network, fixed_device_setpoints=None, max_iter: int = 50, tol: float = 1e-8,
          initial: SystemState | None = None) -> SystemState:
    """Solve the power flow with VSC leg currents held at the given set-points.

    ``fixed_device_setpoints`` maps a VSC id to its leg currents (A, aligned
    with the legs) or ``(vsc, leg)`` to a single current; missing legs are 0.
    Raises ``PowerFlowError`` on non-convergence or a singular Jacobian.
    """
    solver = PowerFlowSolver(net)
    x0 = None if initial is None else solver.layout.from_state(initial)
    return solver.solve(fixed_device_setpoints, x0=x0, max_iter=max_iter, tol=tol)


def residuals(net: Network, state: SystemState) -> ResidualReport:
    """Equation mismatches of a state in SI units, evaluated directly from the network."""
    V = state.voltage
    buses = {b.id: b for b in net.buses}
    mismatch = {}
    for b in net.buses:
        for c in b.conductors:
            if not (c == "n" and b.grounding_resistance == 0.0):
                mismatch[(b.id, c)] = 0j
    for br in net.branches:
        for c in br.conductors:
            i = state.branch_current[(br.id, c)]
            if (br.from_bus, c) in mismatch:
                mismatch[(br.from_bus, c)] += i
            if (br.to_bus, c) in mismatch:
                mismatch[(br.to_bus, c)] -= i
    for (sid, c), i in state.source_current.items():
        bus = next(s.bus for s in net.sources if s.id == sid)
        if (bus, c) in mismatch:
            mismatch[(bus, c)] -= i
    for e in load_entries(net):
        i = state.load_current[e.label]
        if (e.bus, e.phase) in mismatch:
            mismatch[(e.bus, e.phase)] += i
        if (e.bus, "n") in mismatch:
            mismatch[(e.bus, "n")] -= i
    for d in net.vscs:
        for leg in d.legs:
            if (leg.bus, leg.conductor) in mismatch:
                mismatch[(leg.bus, leg.conductor)] -= state.device_current[(d.id, leg.id)]
    for b in net.buses:
        r = b.grounding_resistance
        if r is not None and r > 0:
            mismatch[(b.id, "n")] += V[(b.id, "n")] / r
    kcl = max((abs(v) for v in mismatch.values()), default=0.0)

    ohm = 0.0
    for br in net.branches:
        i = np.array([state.branch_current[(br.id, c)] for c in br.conductors])
        dv = np.array([V[(br.from_bus, c)] - V[(br.to_bus, c)] for c in br.conductors])
        ohm = max(ohm, float(np.max(np.abs(dv - br.z @ i))))
    for s in net.sources:
        b = buses[s.bus]
        conds = [c for c in b.conductors if (s.id, c) in state.source_current]
        idx = [b.conductors.index(c) for c in conds]
        emf = net.source_emf(s)
        i = np.array([state.source_current[(s.id, c)] for c in conds])
        dv = np.array([emf[c] - V[(s.bus, c)] for c in conds])
        ohm = max(ohm, float(np.max(np.abs(dv - s.z[np.ix_(idx, idx)] @ i))))

    load = 0.0
    for e in load_entries(net):
        b = buses[e.bus]
        u = V[(e.bus, e.phase)] - (V[(e.bus, "n")] if b.has_neutral else 0j)
        s = u * np.conj(state.load_current[e.label])
        load = max(load, abs(s - complex(e.p, e.q)))

    device = 0.0
    for d in net.vscs:
        i = state.leg_currents(d)
        v = state.leg_voltages(d)
        device = max(device, abs(i.sum()))
        p = float(np.sum((v * i.conj()).real))
        lo, hi = d.dc_link.dc_power_bounds
        device = max(device, lo - p, p - hi, 0.0)
    return ResidualReport(float(kcl), float(ohm), float(load), float(device))


# ---------------------------------------------------------------- JSON helpers

def _key(k):
    return ".".join(k) if isinstance(k, tuple) else k


def _unkey(s, tuple_key=True):
    return tuple(s.rsplit(".", 1)) if tuple_key else s


def state_to_dict(state: SystemState) -> dict:
    def table(d):
        return {_key(k): [v.real, v.imag] for k, v in sorted(d.items())}

    return {
        "voltage": table(state.voltage),
        "branch_current": table(state.branch_current),
        "device_current": table(state.device_current),
        "source_current": table(state.source_current),
        "load_current": table(state.load_current),
        "iterations": state.iterations,
    }


def state_from_dict(d: dict) -> SystemState:
    def table(t, tuple_key=True):
        return {_unkey(k, tuple_key): complex(v[0], v[1]) for k, v in t.items()}

    return SystemState(voltage=table(d["voltage"]), branch_current=table(d["branch_current"]),
                       device_current=table(d["device_current"]),
                       source_current=table(d.get("source_current", {})),
                       load_current=table(d.get("load_current", {}), tuple_key=False),
                       iterations=int(d.get("iterations", 0)))
