"""Timeseries driver: one independent OPF per demand step, plus load-duration data."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ipm import IpmOptions
from .network import DemandSeries
from .opf import OpfProblem, evaluate_objective, solve_opf
from .power_flow import PowerFlowError, PowerFlowSolver

log = logging.getLogger(__name__)

RECORD_FIELDS = ("index", "timestamp", "status", "max_current_without_a", "max_current_with_a",
                 "objective_without", "objective_with", "ripple_w", "neutral_current_a", "error")


@dataclass
class StepRecord:
    index: int
    timestamp: str
    status: str
    max_current_without_a: float = math.nan
    max_current_with_a: float = math.nan
    objective_without: float = math.nan
    objective_with: float = math.nan
    ripple_w: float = math.nan  # summed over devices
    neutral_current_a: float = math.nan  # largest neutral-leg current over devices
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.status != "local_optimum"

    def row(self) -> list:
        return [getattr(self, f) for f in RECORD_FIELDS]


@dataclass
class SeriesResult:
    records: list[StepRecord]
    duration_without: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duration_with: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def failures(self) -> list[StepRecord]:
        return [r for r in self.records if r.failed]

    def peak_reduction(self) -> float:
        """Peak of the unmitigated curve minus peak of the mitigated curve (A)."""
        if not len(self.duration_with):
            return math.nan
        return float(self.duration_without[0] - self.duration_with[0])


def _max_current(problem: OpfProblem, state) -> float:
    net = problem.network
    tgt = problem.objective.target_branch
    branches = [net.branch(tgt)] if tgt else net.branches
    return max((abs(state.branch_current[(br.id, c)]) for br in branches for c in br.conductors),
               default=0.0)


def run_step(problem: OpfProblem, index: int, timestamp: str, demand: dict,
             starts: int = 3, seed: int = 0, options: IpmOptions | None = None) -> StepRecord:
    """Solve one timestep; exceptions become a failed record."""
    rec = StepRecord(index, timestamp, "error")
    try:
        net = problem.network.with_demand(demand)
        prob = replace(problem, network=net)
        base_prob = replace(prob, network=net.without_vscs())
        base = PowerFlowSolver(base_prob.network).solve()
        rec.max_current_without_a = _max_current(base_prob, base)
        rec.objective_without = evaluate_objective(base_prob, base)
        sol = solve_opf(prob, starts=starts, seed=seed, options=options)
        rec.status = sol.status
        rec.max_current_with_a = _max_current(prob, sol.state)
        rec.objective_with = sol.objective_value
        rec.ripple_w = float(sum(abs(p) for p in sol.ripple_per_vsc.values()))
        rec.neutral_current_a = float(max(sol.neutral_current_per_vsc.values(), default=0.0))
    except (PowerFlowError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("step %d (%s) failed: %s", index, timestamp, rec.error)
    return rec


def _run_packed(args):
    return run_step(*args)


def run_timeseries(problem: OpfProblem, demand: DemandSeries, workers: int = 1,
                   starts: int = 3, seed: int = 0, options: IpmOptions | None = None) -> SeriesResult:
    """Independent OPF per step; records are ordered by step index whatever ``workers`` is."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    jobs = [(problem, k, ts, step, starts, seed, options)
            for k, (ts, step) in enumerate(zip(demand.timestamps, demand.steps))]
    if workers == 1 or len(jobs) <= 1:
        records = [_run_packed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_packed, jobs))
    records.sort(key=lambda r: r.index)
    ok = [r for r in records if not r.failed]
    without = np.sort([r.max_current_without_a for r in ok])[::-1]
    with_dev = np.sort([r.max_current_with_a for r in ok])[::-1]
    return SeriesResult(records, np.asarray(without, dtype=float), np.asarray(with_dev, dtype=float))
