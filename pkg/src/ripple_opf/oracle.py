"""Averaged time-domain dc-link simulator used to check the ripple phasor algebra.

The converter legs are ideal controlled current sources fed by phasor
set-points.  Their instantaneous power is drawn from the dc-link capacitor,
which is recharged by a non-ideal dc source (ideal EMF behind a series
choke and resistor forming a second-order low-pass).  The capacitor state
uses ``p / v_dc`` rather than ``p / V_dc0`` so the small-ripple
approximations of the closed-form capacitor ripple remain testable.

Phasors are RMS; harmonic amplitudes returned by ``extract_component`` are
peak values in the cosine convention ``x(t) = |X| cos(h w t + angle X)``.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .phasor import alpha_power, wrap_degrees
from .vsc import DcLinkSpec, capacitor_ripple, ripple_phasor, VscOperatingPoint

SIGNALS = ("p_dc", "v_dc", "i_cap", "i_src")
STEADY_PERIODS = 10


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleConfig:
    grid_voltage: tuple  # (a, b, c) phase-to-neutral RMS phasors, V
    leg_currents: tuple  # (a, b, c[, n]) RMS phasors injected into the grid, A
    dc_link: DcLinkSpec = field(default_factory=lambda: DcLinkSpec(capacitance=50e-3, vdc_nominal=700.0))
    frequency: float = 50.0
    dt: float = 1e-5
    duration: float = 1.0
    filter_inductance: float = 5e-3
    filter_resistance: float = 1e-3
    source_cutoff: float = 7.5  # Hz
    source_damping: float = 0.89

    def __post_init__(self):
        if len(self.grid_voltage) != 3:
            raise ValueError("grid_voltage must hold the three phase phasors")
        if len(self.leg_currents) not in (3, 4):
            raise ValueError("leg_currents must hold 3 or 4 phasors")
        if self.dt > 1.0 / (200.0 * self.frequency):
            raise ValueError("dt must not exceed 1/(200 f)")
        if self.duration < 20.0 / self.frequency:
            raise ValueError("duration must cover at least 20 fundamental periods")
        if self.source_cutoff <= 0 or self.source_damping <= 0:
            raise ValueError("source filter cutoff and damping must be positive")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.frequency

    def currents(self) -> np.ndarray:
        """Four leg currents (a, b, c, n); a missing neutral leg returns the phase sum."""
        i = np.asarray(self.leg_currents, dtype=complex)
        if len(i) == 3:
            i = np.append(i, -i.sum())
        return i

    def terminal_voltages(self) -> np.ndarray:
        """Half-bridge side voltages: grid voltage plus the filter drop, neutral leg included."""
        v_grid = np.append(np.asarray(self.grid_voltage, dtype=complex), 0j)
        z = self.filter_resistance + 1j * self.omega * self.filter_inductance
        return v_grid + z * self.currents()

    def source_filter(self) -> tuple[float, float]:
        """(L_s, R_s) of the dc source branch from cutoff and damping with the link C."""
        wc = 2.0 * math.pi * self.source_cutoff
        c = self.dc_link.capacitance
        l_s = 1.0 / (wc * wc * c)
        return l_s, 2.0 * self.source_damping * math.sqrt(l_s / c)


@dataclass
class SimTrace:
    time: np.ndarray
    p_dc: np.ndarray
    v_dc: np.ndarray
    i_cap: np.ndarray
    i_src: np.ndarray
    v_terminal: np.ndarray  # (samples, 4) instantaneous leg voltages
    frequency: float = 50.0
    dt: float = 1e-5

    def __post_init__(self):
        n = len(self.time)
        if any(len(a) != n for a in (self.p_dc, self.v_dc, self.i_cap, self.i_src, self.v_terminal)):
            raise ValueError("trace arrays differ in length")


def _waveform(phasors, t, omega):
    return math.sqrt(2.0) * np.real(np.multiply.outer(np.exp(1j * omega * np.asarray(t)), phasors))


def instantaneous_power(cfg: OracleConfig, t) -> np.ndarray:
    """Power drawn from the dc link, sum over legs of v_j(t) i_j(t) (W)."""
    v = _waveform(cfg.terminal_voltages(), t, cfg.omega)
    i = _waveform(cfg.currents(), t, cfg.omega)
    return np.sum(v * i, axis=-1)


def simulate(cfg: OracleConfig) -> SimTrace:
    """Integrate the dc link with the trapezoidal rule (closed-form implicit step)."""
    n = int(round(cfg.duration / cfg.dt)) + 1
    t = np.arange(n) * cfg.dt
    p = instantaneous_power(cfg, t)
    c = cfg.dc_link.capacitance
    v0 = cfg.dc_link.vdc_nominal
    l_s, r_s = cfg.source_filter()
    # mean dc power from the phasors; the EMF is raised by the resistive drop
    p_mean = float(np.sum((cfg.terminal_voltages() * cfg.currents().conj()).real))
    v_src = v0 + r_s * p_mean / v0

    h = cfg.dt
    k = h / (2.0 * c)
    den = 1.0 + h * r_s / (2.0 * l_s)
    b = -(h / (2.0 * l_s)) / den
    v = np.empty(n)
    i = np.empty(n)
    v[0], i[0] = v0, 0.0
    vk, ik = v0, 0.0
    for step in range(1, n):
        a = (ik + (h / (2.0 * l_s)) * (2.0 * v_src - r_s * ik - vk)) / den
        lin = vk + k * (ik - p[step - 1] / vk + a)
        quad = 1.0 - k * b
        disc = lin * lin - 4.0 * quad * k * p[step]
        if disc < 0.0 or not math.isfinite(disc):
            raise OracleError(f"dc link collapsed at t = {t[step]:.6f} s")
        vk = (lin + math.sqrt(disc)) / (2.0 * quad)
        ik = a + b * vk
        if vk <= 0.0:
            raise OracleError(f"dc link voltage reached {vk:.3g} V at t = {t[step]:.6f} s")
        v[step], i[step] = vk, ik
    i_cap = i - p / v
    v_term = _waveform(cfg.terminal_voltages(), t, cfg.omega)
    trace = SimTrace(t, p, v, i_cap, i, v_term, cfg.frequency, cfg.dt)
    _check_steady(trace)
    return trace


def _check_steady(trace: SimTrace):
    per = int(round(1.0 / (trace.frequency * trace.dt)))
    if len(trace.v_dc) < 2 * per:
        raise OracleError("trace shorter than two periods")
    last, prev = trace.v_dc[-per:], trace.v_dc[-2 * per:-per]
    drift = math.sqrt(np.mean((last - prev) ** 2))
    if drift > 1e-6 * float(np.mean(last)):
        raise OracleError(f"no steady state: period-to-period rms change {drift:.3g} V")


def extract_component(trace: SimTrace, signal: str, harmonic: int,
                      periods: int = STEADY_PERIODS) -> complex:
    """Fourier coefficient of ``signal`` at ``harmonic * f`` over the last ``periods`` periods."""
    if signal not in SIGNALS:
        raise ValueError(f"unknown signal {signal!r}")
    if harmonic < 0:
        raise ValueError("harmonic must be >= 0")
    per = int(round(1.0 / (trace.frequency * trace.dt)))
    m = per * periods
    x = np.asarray(getattr(trace, signal))
    if len(x) < m + 1:
        raise OracleError("trace shorter than the steady-state window")
    x = x[-m:]
    if harmonic == 0:
        return complex(np.mean(x))
    ph = 2.0 * math.pi * harmonic * np.arange(m) / per
    t0 = trace.time[-m]
    coeff = 2.0 / m * np.sum(x * np.exp(-1j * ph))
    # refer the phase to t = 0
    return complex(coeff * np.exp(-1j * 2.0 * math.pi * harmonic * trace.frequency * t0))


def spectrum(trace: SimTrace, signal: str, max_harmonic: int = 50) -> np.ndarray:
    return np.array([extract_component(trace, signal, h) for h in range(max_harmonic + 1)])


@dataclass
class BilinearReport:
    proposed_ripple_w: float
    simulated_ripple_w: float
    proposed_ir_a: float
    simulated_ir_a: float
    proposed_vr_v: float
    simulated_vr_v: float
    lowfreq_rms_w: float
    lowfreq_rms_a: float
    ripple_phase_deg: float  # angle of the ripple phasor
    vr_phase_deg: float  # angle of the extracted v_dc ripple in the sine convention
    fourth_harmonic_w: float
    mean_i_cap: float


def _rss(coeffs) -> float:
    return float(math.sqrt(np.sum(np.abs(coeffs) ** 2)))


def compare_to_bilinear(cfg: OracleConfig, trace: SimTrace | None = None) -> BilinearReport:
    """Proposed (phasor) versus simulated 2-omega power, capacitor current and voltage ripple."""
    trace = trace or simulate(cfg)
    p = ripple_phasor(VscOperatingPoint(cfg.terminal_voltages(), cfg.currents()))
    vr, ir = capacitor_ripple(cfg.dc_link, abs(p), cfg.frequency)
    p_spec = spectrum(trace, "p_dc")
    i_spec = spectrum(trace, "i_cap")
    v2 = extract_component(trace, "v_dc", 2)
    # sine convention: x = A sin(.. + phi) = A cos(.. + phi - 90 deg)
    vr_sine = wrap_degrees(math.degrees(np.angle(v2)) + 90.0) if abs(v2) > 0 else 0.0
    return BilinearReport(
        proposed_ripple_w=abs(p),
        simulated_ripple_w=abs(p_spec[2]),
        proposed_ir_a=ir,
        simulated_ir_a=abs(i_spec[2]),
        proposed_vr_v=vr,
        simulated_vr_v=abs(v2),
        lowfreq_rms_w=_rss(p_spec[1:]),
        lowfreq_rms_a=_rss(i_spec[1:]),
        ripple_phase_deg=math.degrees(np.angle(p)) if abs(p) > 0 else 0.0,
        vr_phase_deg=vr_sine,
        fourth_harmonic_w=abs(p_spec[4]),
        mean_i_cap=abs(i_spec[0]),
    )


# ---------------------------------------------------------------- cases

I_REF = 20.0 / math.sqrt(2.0)
V_LINE = 416.0

CASE_MULTIPLIERS = {
    "3a": (1, alpha_power(-1), alpha_power(-2)),
    "3b": (1, 0, 0),
    "3c": (1, -0.5, -0.5),
    "3d": (1, alpha_power(1), alpha_power(2)),
    "3e": (1j, 1j * alpha_power(-1), 1j * alpha_power(-2)),
    "3f": (1j, 0, 0),
}


def case_config(case: str, **overrides) -> OracleConfig:
    """Converter test case with the time-domain parameter set (416 V, 700 V dc, 50 mF)."""
    if case not in CASE_MULTIPLIERS:
        raise KeyError(f"unknown oracle case {case!r}; expected one of {sorted(CASE_MULTIPLIERS)}")
    v_ph = V_LINE / math.sqrt(3.0)
    grid = tuple(v_ph * alpha_power(-k) for k in range(3))
    legs = tuple(I_REF * complex(m) for m in CASE_MULTIPLIERS[case])
    return OracleConfig(grid_voltage=grid, leg_currents=legs, **overrides)


# ---------------------------------------------------------------- CSV io

TRACE_HEADER = ("time", "p_dc", "v_dc", "i_cap", "i_src", "v_a", "v_b", "v_c", "v_n")
SPECTRUM_HEADER = ("signal", "harmonic", "magnitude", "phase_deg")


def write_trace_csv(trace: SimTrace, path, stride: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for k in range(0, len(trace.time), stride):
            w.writerow([repr(float(trace.time[k])), repr(float(trace.p_dc[k])), repr(float(trace.v_dc[k])),
                        repr(float(trace.i_cap[k])), repr(float(trace.i_src[k]))]
                       + [repr(float(x)) for x in trace.v_terminal[k]])


def read_trace_csv(path, frequency: float = 50.0) -> SimTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 1e-5
    return SimTrace(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], data[:, 5:9], frequency, dt)


def write_spectrum_csv(trace: SimTrace, path, max_harmonic: int = 50,
                       signals=("p_dc", "i_cap", "v_dc")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SPECTRUM_HEADER)
        for sig in signals:
            for hh, c in enumerate(spectrum(trace, sig, max_harmonic)):
                ang = math.degrees(np.angle(c)) if abs(c) > 0 else 0.0
                w.writerow([sig, hh, repr(float(abs(c))), repr(float(ang))])


def read_spectrum_csv(path) -> dict:
    """``{signal: {harmonic: complex}}``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = abs(float(row["magnitude"])) * np.exp(1j * math.radians(float(row["phase_deg"])))
            out.setdefault(row["signal"], {})[int(row["harmonic"])] = complex(c)
    return out
