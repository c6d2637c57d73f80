"""Multi-conductor (a, b, c, n) distribution network data model.

SI units throughout (V, A, ohm); bus voltage bounds, source EMFs and the
negative-sequence limits are in per unit of the bus phase-to-neutral nominal.
Networks are immutable; ``with_demand`` and friends return modified copies.
"""

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

from .phasor import B_FORT, to_phase
from .power_quality import InductionMachine
from .vsc import DcLinkSpec, LegSpec, VscSpec

SCHEMA_VERSION = 1
CONDUCTORS = ("a", "b", "c", "n")
PHASE_CONDUCTORS = ("a", "b", "c")

Matrix = tuple[tuple[complex, ...], ...]


def as_matrix(z) -> Matrix:
    arr = np.atleast_2d(np.asarray(z, dtype=complex))
    return tuple(tuple(complex(v) for v in row) for row in arr)


def sequence_impedance(z0: complex, z1: complex, zn: complex | None = None,
                       conductors: Iterable[str] = CONDUCTORS) -> Matrix:
    """Expand sequence-parameter shorthand to a conductor impedance matrix.

    The phase block is ``B diag(z0, z1, z1) B^-1``; a neutral conductor gets
    self impedance ``zn`` (defaults to ``z1``) with no mutual coupling.
    """
    conductors = tuple(conductors)
    phase = B_FORT @ np.diag([z0, z1, z1]) @ np.linalg.inv(B_FORT)
    z = np.zeros((len(conductors), len(conductors)), dtype=complex)
    for r, cr in enumerate(conductors):
        for c, cc in enumerate(conductors):
            if cr == "n" or cc == "n":
                if cr == cc:
                    z[r, c] = z1 if zn is None else zn
            else:
                z[r, c] = phase[PHASE_CONDUCTORS.index(cr), PHASE_CONDUCTORS.index(cc)]
    return as_matrix(z)


@dataclass(frozen=True)
class Bus:
    id: str
    conductors: tuple[str, ...] = CONDUCTORS
    v_nominal: float = 230.0  # V phase-to-neutral
    v_min: float = 0.94
    v_max: float = 1.10
    # None: ungrounded neutral; 0.0: solidly grounded (neutral held at 0 V)
    grounding_resistance: float | None = None
    vneg_limit: float | None = None

    @property
    def has_neutral(self) -> bool:
        return "n" in self.conductors

    @property
    def phases(self) -> tuple[str, ...]:
        return tuple(c for c in self.conductors if c != "n")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    conductors: tuple[str, ...]
    impedance: Matrix  # ohm, series, conductor-ordered
    ampacity: tuple[float, ...] = ()  # A per conductor, inf = unrated

    @property
    def z(self) -> np.ndarray:
        return np.array(self.impedance, dtype=complex)

    def ampacity_of(self, cond: str) -> float:
        if not self.ampacity:
            return math.inf
        return self.ampacity[self.conductors.index(cond)]


@dataclass(frozen=True)
class Source:
    """Thevenin source: sequence EMF (pu of bus nominal) behind an impedance.

    The EMF star point is earthed, so the EMF of a neutral conductor is 0 V.
    A zero impedance matrix makes the source ideal.
    """

    id: str
    bus: str
    sequence_voltage: tuple[complex, complex, complex] = (0j, 1 + 0j, 0j)
    impedance: Matrix = ()  # over the bus conductors

    @property
    def z(self) -> np.ndarray:
        return np.array(self.impedance, dtype=complex)


@dataclass(frozen=True)
class Load:
    """Constant-power load, phase-to-neutral (phase-to-earth on 3-wire buses).

    ``p_kw`` and ``q_kvar`` hold one value per connected phase.
    """

    id: str
    bus: str
    phases: tuple[str, ...]
    p_kw: tuple[float, ...]
    q_kvar: tuple[float, ...]


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...] = ()
    sources: tuple[Source, ...] = ()
    loads: tuple[Load, ...] = ()
    machines: tuple[InductionMachine, ...] = ()
    vscs: tuple[VscSpec, ...] = ()
    name: str = ""
    frequency: float = 50.0

    def bus(self, bus_id: str) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def vsc(self, vsc_id: str) -> VscSpec:
        for d in self.vscs:
            if d.id == vsc_id:
                return d
        raise KeyError(vsc_id)

    def source_emf(self, src: Source) -> dict[str, complex]:
        """EMF per conductor of a source in volts."""
        b = self.bus(src.bus)
        abc = to_phase(np.asarray(src.sequence_voltage, dtype=complex)) * b.v_nominal
        return {c: (0j if c == "n" else complex(abc[PHASE_CONDUCTORS.index(c)]))
                for c in b.conductors}

    def with_demand(self, demand: Mapping[tuple[str, str], tuple[float, float]]) -> "Network":
        """Copy with per-phase load values replaced; keys are ``(bus, phase)``."""
        index = {}
        for li, load in enumerate(self.loads):
            for pi, ph in enumerate(load.phases):
                key = (load.bus, ph)
                if key in index:
                    raise ValueError(f"ambiguous demand target {key}: several loads")
                index[key] = (li, pi)
        p = [list(l.p_kw) for l in self.loads]
        q = [list(l.q_kvar) for l in self.loads]
        for key, (pk, qk) in demand.items():
            if tuple(key) not in index:
                raise KeyError(f"demand entry {key} matches no load")
            li, pi = index[tuple(key)]
            p[li][pi], q[li][pi] = float(pk), float(qk)
        loads = tuple(replace(l, p_kw=tuple(p[i]), q_kvar=tuple(q[i]))
                      for i, l in enumerate(self.loads))
        return replace(self, loads=loads)

    def with_vsc(self, vsc: VscSpec) -> "Network":
        """Copy with the VSC of the same id replaced (or appended)."""
        others = tuple(d for d in self.vscs if d.id != vsc.id)
        if len(others) == len(self.vscs):
            return replace(self, vscs=self.vscs + (vsc,))
        return replace(self, vscs=tuple(vsc if d.id == vsc.id else d for d in self.vscs))

    def without_vscs(self) -> "Network":
        return replace(self, vscs=())


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    ref: str = ""


def _islands(net: Network) -> list[set[str]]:
    parent = {b.id: b.id for b in net.buses}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for br in net.branches:
        if br.from_bus in parent and br.to_bus in parent:
            parent[find(br.from_bus)] = find(br.to_bus)
    groups = defaultdict(set)
    for b in net.buses:
        groups[find(b.id)].add(b.id)
    return list(groups.values())


def validate(net: Network) -> list[Issue]:
    """Check type invariants and references; an empty list means valid."""
    issues: list[Issue] = []
    add = lambda code, msg, ref="": issues.append(Issue(code, msg, ref))

    buses = {}
    for b in net.buses:
        if b.id in buses:
            add("duplicate_id", f"bus {b.id} defined twice", b.id)
        buses[b.id] = b
        if not set(b.conductors) <= set(CONDUCTORS) or len(set(b.conductors)) != len(b.conductors):
            add("bad_conductors", f"bus {b.id} conductors {b.conductors}", b.id)
        if not b.v_min < b.v_max:
            add("invalid_bounds", f"bus {b.id}: v_min >= v_max", b.id)
        if not b.v_nominal > 0:
            add("invalid_nominal", f"bus {b.id}: v_nominal must be positive", b.id)
        if b.grounding_resistance is not None:
            if not b.has_neutral:
                add("grounding_without_neutral", f"bus {b.id} is grounded but has no neutral", b.id)
            elif b.grounding_resistance < 0:
                add("invalid_grounding", f"bus {b.id}: negative grounding resistance", b.id)

    def terminal(bus_id, cond, ref):
        if bus_id not in buses:
            add("unknown_bus", f"{ref} refers to missing bus {bus_id}", ref)
            return False
        if cond not in buses[bus_id].conductors:
            add("missing_conductor", f"{ref} needs conductor {cond} at bus {bus_id}", ref)
            return False
        return True

    seen = set()
    for br in net.branches:
        if br.id in seen:
            add("duplicate_id", f"branch {br.id} defined twice", br.id)
        seen.add(br.id)
        if br.from_bus not in buses or br.to_bus not in buses:
            add("dangling_branch", f"branch {br.id} references a missing bus", br.id)
            continue
        for c in br.conductors:
            terminal(br.from_bus, c, br.id)
            terminal(br.to_bus, c, br.id)
        z = br.z
        k = len(br.conductors)
        if z.shape != (k, k):
            add("dimension_mismatch", f"branch {br.id}: impedance is {z.shape}, expected {(k, k)}", br.id)
            continue
        if not np.allclose(z, z.T, rtol=1e-9, atol=1e-12):
            add("impedance_asymmetric", f"branch {br.id}: impedance not symmetric", br.id)
        if np.any(np.diag(z).real <= 0):
            add("nonpositive_resistance", f"branch {br.id}: diagonal resistance must be > 0", br.id)
        if br.ampacity and len(br.ampacity) != k:
            add("dimension_mismatch", f"branch {br.id}: ampacity length", br.id)

    for src in net.sources:
        if src.bus not in buses:
            add("unknown_bus", f"source {src.id} at missing bus {src.bus}", src.id)
            continue
        k = len(buses[src.bus].conductors)
        if src.z.shape != (k, k):
            add("dimension_mismatch", f"source {src.id}: impedance is {src.z.shape}, expected {(k, k)}", src.id)
        if abs(src.sequence_voltage[1]) == 0:
            add("source_zero_positive", f"source {src.id}: zero positive-sequence EMF", src.id)

    for load in net.loads:
        if not (len(load.phases) == len(load.p_kw) == len(load.q_kvar)):
            add("dimension_mismatch", f"load {load.id}: per-phase values do not match phases", load.id)
        for ph in load.phases:
            if ph == "n":
                add("load_phase_missing", f"load {load.id}: neutral is not a phase", load.id)
            else:
                terminal(load.bus, ph, load.id)

    for m in net.machines:
        for ph in PHASE_CONDUCTORS:
            terminal(m.bus, ph, m.id)

    for d in net.vscs:
        if len(d.legs) < 3:
            add("vsc_too_few_legs", f"VSC {d.id} has fewer than 3 legs", d.id)
        for leg in d.legs:
            terminal(leg.bus, leg.conductor, f"{d.id}.{leg.id}")
            if leg.i_max < 0:
                add("invalid_ampacity", f"VSC {d.id} leg {leg.id}: negative i_max", d.id)

    for isl in _islands(net):
        n_src = sum(1 for s in net.sources if s.bus in isl)
        if n_src != 1:
            add("island_source_count",
                f"island {sorted(isl)} has {n_src} sources (need exactly 1)", ",".join(sorted(isl)))
    return issues


# ---------------------------------------------------------------- admittance

def free_nodes(net: Network) -> list[tuple[str, str]]:
    """(bus, conductor) pairs with an unknown voltage (solid grounds excluded)."""
    nodes = []
    for b in net.buses:
        for c in b.conductors:
            if c == "n" and b.grounding_resistance == 0.0:
                continue
            nodes.append((b.id, c))
    return nodes


def admittance(net: Network) -> tuple[sp.csr_matrix, list[tuple[str, str]]]:
    """Nodal admittance over the free nodes, with branch stamps and grounding paths.

    Sources are not stamped.  Solidly grounded neutrals are the reference and
    drop out of the matrix.
    """
    nodes = free_nodes(net)
    index = {nd: k for k, nd in enumerate(nodes)}
    rows, cols, vals = [], [], []
    for br in net.branches:
        z = br.z
        try:
            y = np.linalg.inv(z)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"branch {br.id}: singular impedance") from exc
        if not np.all(np.isfinite(y)) or np.linalg.cond(z) > 1e14:
            raise ValueError(f"branch {br.id}: singular impedance")
        ends = [index.get((br.from_bus, c)) for c in br.conductors], \
               [index.get((br.to_bus, c)) for c in br.conductors]
        for (side_r, sign_r) in ((0, 1), (1, -1)):
            for (side_c, sign_c) in ((0, 1), (1, -1)):
                for r, nr in enumerate(ends[side_r]):
                    for c, nc in enumerate(ends[side_c]):
                        if nr is None or nc is None:
                            continue
                        rows.append(nr)
                        cols.append(nc)
                        vals.append(sign_r * sign_c * y[r, c])
    for b in net.buses:
        r = b.grounding_resistance
        if r is not None and r > 0 and (b.id, "n") in index:
            k = index[(b.id, "n")]
            rows.append(k)
            cols.append(k)
            vals.append(1.0 / r)
    n = len(nodes)
    ymat = sp.coo_matrix((np.asarray(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    return ymat, nodes


def kron_reduce(net: Network) -> Network:
    """Eliminate the neutral of a network whose neutrals are all solidly grounded.

    Branch impedances become ``Z_pp - Z_pn Z_nn^-1 Z_np``; loads and machines
    then connect phase-to-earth.  VSC neutral legs are not supported here.
    """
    for b in net.buses:
        if b.has_neutral and b.grounding_resistance != 0.0:
            raise ValueError(f"bus {b.id}: Kron reduction needs solidly grounded neutrals")
    if any(leg.conductor == "n" for d in net.vscs for leg in d.legs):
        raise ValueError("Kron reduction does not support VSC neutral legs")

    def reduce(z, conductors):
        conductors = tuple(conductors)
        if "n" not in conductors:
            return z, conductors
        n = conductors.index("n")
        p = [i for i in range(len(conductors)) if i != n]
        zr = z[np.ix_(p, p)] - np.outer(z[p, n], z[n, p]) / z[n, n]
        return zr, tuple(conductors[i] for i in p)

    buses = tuple(replace(b, conductors=b.phases, grounding_resistance=None) for b in net.buses)
    branches = []
    for br in net.branches:
        zr, conds = reduce(br.z, br.conductors)
        amp = tuple(br.ampacity_of(c) for c in conds) if br.ampacity else ()
        branches.append(replace(br, conductors=conds, impedance=as_matrix(zr), ampacity=amp))
    sources = []
    for s in net.sources:
        b = net.bus(s.bus)
        z = s.z
        if b.has_neutral and np.any(z[b.conductors.index("n")] != 0):
            zr, _ = reduce(z, b.conductors)
        else:
            keep = [i for i, c in enumerate(b.conductors) if c != "n"]
            zr = z[np.ix_(keep, keep)]
        sources.append(replace(s, impedance=as_matrix(zr)))
    return replace(net, buses=buses, branches=tuple(branches), sources=tuple(sources))


# ---------------------------------------------------------------- JSON io

def _cnum(z: complex):
    return [z.real, z.imag]


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isinf(x)) else x


def _fromnum(x, default=math.inf):
    return default if x is None else float(x)


def _parse_complex(x) -> complex:
    if isinstance(x, (int, float)):
        return complex(x)
    if isinstance(x, dict):
        return complex(x.get("re", 0.0), x.get("im", 0.0))
    return complex(x[0], x[1])


def _parse_matrix(obj, conductors) -> Matrix:
    if isinstance(obj, dict) and "re" in obj:
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        return as_matrix(re + 1j * im)
    if isinstance(obj, dict) and "z1" in obj:
        zn = obj.get("zn")
        return sequence_impedance(_parse_complex(obj.get("z0", obj["z1"])), _parse_complex(obj["z1"]),
                                  None if zn is None else _parse_complex(zn), conductors)
    if isinstance(obj, dict) and "zeros" in obj:
        k = len(conductors)
        return as_matrix(np.zeros((k, k)))
    raise ValueError(f"unrecognised impedance specification: {obj!r}")


def _emit_matrix(m: Matrix):
    z = np.array(m, dtype=complex)
    return {"re": z.real.tolist(), "im": z.imag.tolist()}


def _per_phase(val, n):
    if isinstance(val, (int, float)):
        return tuple(float(val) for _ in range(n))
    vals = tuple(float(v) for v in val)
    if len(vals) != n:
        raise ValueError("per-phase value count does not match phases")
    return vals


def network_from_dict(d: dict) -> Network:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    buses = tuple(
        Bus(id=b["id"], conductors=tuple(b.get("conductors", CONDUCTORS)),
            v_nominal=float(b.get("v_nominal", 230.0)), v_min=float(b.get("v_min", 0.94)),
            v_max=float(b.get("v_max", 1.10)),
            grounding_resistance=(None if b.get("grounding_resistance") in (None, "ungrounded")
                                  else float(b["grounding_resistance"])),
            vneg_limit=(None if b.get("vneg_limit") in (None, "none") else float(b["vneg_limit"])))
        for b in d["buses"])
    bus_conds = {b.id: b.conductors for b in buses}
    branches = []
    for br in d.get("branches", []):
        conds = tuple(br.get("conductors", bus_conds.get(br["from_bus"], CONDUCTORS)))
        amp = br.get("ampacity", ())
        if isinstance(amp, (int, float)) or amp is None:
            amp = [amp] * len(conds) if amp is not None else []
        branches.append(Branch(id=br["id"], from_bus=br["from_bus"], to_bus=br["to_bus"],
                               conductors=conds, impedance=_parse_matrix(br["impedance"], conds),
                               ampacity=tuple(_fromnum(a) for a in amp)))
    sources = []
    for s in d.get("sources", []):
        conds = bus_conds.get(s["bus"], CONDUCTORS)
        seq = s.get("sequence_voltage", [0, 1, 0])
        sources.append(Source(id=s["id"], bus=s["bus"],
                              sequence_voltage=tuple(_parse_complex(v) for v in seq),
                              impedance=_parse_matrix(s.get("impedance", {"zeros": True}), conds)))
    loads = []
    for l in d.get("loads", []):
        phases = tuple(l["phases"])
        loads.append(Load(id=l["id"], bus=l["bus"], phases=phases,
                          p_kw=_per_phase(l.get("p_kw", 0.0), len(phases)),
                          q_kvar=_per_phase(l.get("q_kvar", 0.0), len(phases))))
    machines = tuple(
        InductionMachine(id=m["id"], bus=m["bus"], rating=float(m["rating"]),
                         active_power=float(m["active_power"]),
                         power_factor=float(m.get("power_factor", 0.85)))
        for m in d.get("machines", []))
    vscs = []
    for v in d.get("vscs", []):
        dc = v["dc_link"]
        psrc = dc.get("dc_source_power", 0.0)
        psrc = tuple(float(x) for x in psrc) if isinstance(psrc, list) else float(psrc)
        link = DcLinkSpec(capacitance=float(dc["capacitance"]), vdc_nominal=float(dc["vdc_nominal"]),
                          esr_coefficient=float(dc.get("esr_coefficient", 1e-3)),
                          ripple_limit=_fromnum(dc.get("ripple_limit")), dc_source_power=psrc)
        legs = tuple(LegSpec(id=g["id"], bus=g["bus"], conductor=g["conductor"],
                             i_max=_fromnum(g.get("i_max"))) for g in v["legs"])
        vscs.append(VscSpec(id=v["id"], legs=legs, dc_link=link,
                            topology=v.get("topology", "statcom")))
    return Network(buses=buses, branches=tuple(branches), sources=tuple(sources),
                   loads=tuple(loads), machines=machines, vscs=tuple(vscs),
                   name=d.get("name", ""), frequency=float(d.get("frequency", 50.0)))


def network_to_dict(net: Network) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": net.name,
        "frequency": net.frequency,
        "buses": [{"id": b.id, "conductors": list(b.conductors), "v_nominal": b.v_nominal,
                   "v_min": b.v_min, "v_max": b.v_max,
                   "grounding_resistance": b.grounding_resistance, "vneg_limit": b.vneg_limit}
                  for b in net.buses],
        "branches": [{"id": br.id, "from_bus": br.from_bus, "to_bus": br.to_bus,
                      "conductors": list(br.conductors), "impedance": _emit_matrix(br.impedance),
                      "ampacity": [_num(a) for a in br.ampacity]}
                     for br in net.branches],
        "sources": [{"id": s.id, "bus": s.bus,
                     "sequence_voltage": [_cnum(v) for v in s.sequence_voltage],
                     "impedance": _emit_matrix(s.impedance)} for s in net.sources],
        "loads": [{"id": l.id, "bus": l.bus, "phases": list(l.phases), "p_kw": list(l.p_kw),
                   "q_kvar": list(l.q_kvar)} for l in net.loads],
        "machines": [{"id": m.id, "bus": m.bus, "rating": m.rating, "active_power": m.active_power,
                      "power_factor": m.power_factor} for m in net.machines],
        "vscs": [{"id": v.id, "topology": v.topology,
                  "legs": [{"id": g.id, "bus": g.bus, "conductor": g.conductor, "i_max": _num(g.i_max)}
                           for g in v.legs],
                  "dc_link": {"capacitance": v.dc_link.capacitance,
                              "vdc_nominal": v.dc_link.vdc_nominal,
                              "esr_coefficient": v.dc_link.esr_coefficient,
                              "ripple_limit": _num(v.dc_link.ripple_limit),
                              "dc_source_power": (list(v.dc_link.dc_source_power)
                                                  if isinstance(v.dc_link.dc_source_power, tuple)
                                                  else v.dc_link.dc_source_power)}}
                 for v in net.vscs],
    }


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def save_network(net: Network, path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh, indent=1)
        fh.write("\n")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("ripple_opf") / "data" / name))


def bundled_network(name: str) -> Network:
    """Load one of the shipped feeders: ``toy_2bus``, ``demo_5bus``, ``two_feeder_sop``."""
    fname = name if name.endswith(".json") else f"{name}.json"
    return load_network(bundled_path(fname))


# ---------------------------------------------------------------- demand CSV

DEMAND_HEADER = ("timestamp", "bus", "phase", "p_kw", "q_kvar")


@dataclass
class DemandSeries:
    """Timestamps in first-seen order, each mapping ``(bus, phase) -> (p_kw, q_kvar)``."""

    timestamps: list[str] = field(default_factory=list)
    steps: list[dict[tuple[str, str], tuple[float, float]]] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)


def read_demand_csv(path) -> DemandSeries:
    series = DemandSeries()
    index = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DEMAND_HEADER:
            raise ValueError(f"demand CSV header must be {','.join(DEMAND_HEADER)}")
        for row in reader:
            ts = row["timestamp"]
            if ts not in index:
                index[ts] = len(series.steps)
                series.timestamps.append(ts)
                series.steps.append({})
            series.steps[index[ts]][(row["bus"], row["phase"])] = (float(row["p_kw"]), float(row["q_kvar"]))
    return series


def write_demand_csv(series: DemandSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DEMAND_HEADER)
        for ts, step in zip(series.timestamps, series.steps):
            for (bus, ph), (p, q) in step.items():
                w.writerow([ts, bus, ph, repr(p), repr(q)])
