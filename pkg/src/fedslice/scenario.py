"""Synthetic H/V traffic scenarios, parameter sweeps and sync-vs-async races."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import admm_async as aa
from . import admm_sync as ad
from .errors import DomainError, InfeasibleCellError, InfeasibleProblemError, NonConvergenceError
from .fedsim import SimReport, TimingModel, simulate_async, simulate_naive_async, simulate_sync
from .model import (CellConfig, ChannelStats, ProblemInstance, ServiceClass, response_times,
                    scale_problem)
from .oracle import SlicingMode, centralized_solve, solve_mode

# service order is fixed: index 0 is the human-related class, 1 the vehicular one
SERVICE_NAMES = ("H", "V")
TASK_BITS = {"H": 300 * 8, "V": 500 * 8}
SLA_S = {"H": 0.5, "V": 0.1}

# (mean, std) of per-cell arrival rates in tasks/s; V is busier and more variable than H
RATE_PRESETS = {
    "peak": {"H": (2000.0, 150.0), "V": (7500.0, 500.0)},
    "nonpeak": {"H": (1500.0, 120.0), "V": (5500.0, 400.0)},
}


@dataclass
class ScenarioSpec:
    """Knobs for :func:`generate_scenario`; defaults give the standard ten-cell, two-service setup.

    ``fog_power_per_node`` is per fog node, one node per cell, so the aggregate
    fog budget is ``num_cells * fog_power_per_node``.
    """

    num_cells: int = 10
    period: str = "peak"
    seed: int = 0
    bandwidth_hz: float = 60e6
    fog_power_per_node: float = 10000.0
    confidence: float = 0.9
    min_slice_bandwidth_hz: float = 1e3
    rate_scale: float = 1.0
    rates: Optional[dict] = None        # explicit {(cell, service): lambda}, overrides draws
    tx_power_w: float = 0.2
    noise_w: float = 2e-14
    gain_scale: float = 1e-10
    gain_spread: tuple = (0.5, 2.0)

    def __post_init__(self):
        if self.period not in RATE_PRESETS:
            raise ValueError(f"period must be one of {sorted(RATE_PRESETS)}")
        if self.num_cells < 1:
            raise ValueError("num_cells must be >= 1")


def lognormal_params(mean: float, std: float) -> tuple[float, float]:
    """(mu, sigma) of the underlying normal for a lognormal with the given mean and std."""
    s2 = math.log1p((std / mean) ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


def draw_rates(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    S = spec.num_cells
    out = np.empty((S, len(SERVICE_NAMES)))
    for n, name in enumerate(SERVICE_NAMES):
        mu, sigma = lognormal_params(*RATE_PRESETS[spec.period][name])
        out[:, n] = rng.lognormal(mu, sigma, size=S)
    return out * spec.rate_scale


def generate_scenario(spec: ScenarioSpec) -> ProblemInstance:
    """Deterministic instance from ``spec`` (all randomness comes from ``spec.seed``)."""
    rng = np.random.default_rng(spec.seed)
    S = spec.num_cells
    lam = draw_rates(spec, rng)
    gains = spec.gain_scale * rng.uniform(*spec.gain_spread, size=(S, len(SERVICE_NAMES)))
    if spec.rates is not None:
        for (s, n), v in spec.rates.items():
            lam[s, n] = v
    services = [ServiceClass(n, TASK_BITS[name], SLA_S[name], name)
                for n, name in enumerate(SERVICE_NAMES)]
    cells = [
        CellConfig(s, spec.bandwidth_hz, spec.min_slice_bandwidth_hz,
                   tuple(ChannelStats(float(lam[s, n]), float(gains[s, n]), spec.tx_power_w,
                                      spec.noise_w)
                         for n in range(len(SERVICE_NAMES))))
        for s in range(S)
    ]
    return ProblemInstance(services, cells, spec.fog_power_per_node * S, spec.confidence)


def random_instance(seed: int, S: int = 2, N: int = 2, load: float = 0.85,
                    bandwidth_hz: float = 20e6, confidence: float = 0.9) -> ProblemInstance:
    """Small heterogeneous instance for tests and oracle cross-checks."""
    rng = np.random.default_rng(seed)
    bits = [2400.0, 4000.0, 3200.0][:N]
    slas = [0.5, 0.1, 0.3][:N]
    if N > 3:
        raise ValueError("random_instance supports N <= 3")
    services = [ServiceClass(n, bits[n], slas[n]) for n in range(N)]
    cells = []
    total = 0.0
    for s in range(S):
        per = []
        for n in range(N):
            lam = float(rng.uniform(50.0, 400.0))
            total += lam
            per.append(ChannelStats(lam, 1e-10 * float(rng.uniform(0.5, 2.0)), 0.2, 2e-14))
        cells.append(CellConfig(s, bandwidth_hz * float(rng.uniform(0.8, 1.2)), 1e3, per))
    return ProblemInstance(services, cells, total / load, confidence)


# arrival-rate tables ------------------------------------------------------------

RATES_HEADER = ("cell_id", "service_id", "lambda")


class RatesFormatError(ValueError):
    pass


def load_rates_csv(path) -> dict:
    """Read ``cell_id,service_id,lambda`` rows into ``{(cell, service): lambda}``."""
    table: dict = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RatesFormatError("line 1: empty file") from None
        if tuple(h.strip() for h in header) != RATES_HEADER:
            raise RatesFormatError(f"line 1: expected header {','.join(RATES_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise RatesFormatError(f"line {line_no}: expected 3 fields, got {len(row)}")
            try:
                key = (int(row[0]), int(row[1]))
                lam = float(row[2])
            except ValueError as exc:
                raise RatesFormatError(f"line {line_no}: {exc}") from None
            if key in table:
                raise ValueError(f"line {line_no}: duplicate entry for cell {key[0]}, "
                                 f"service {key[1]}")
            if not lam >= 0 or not math.isfinite(lam):
                raise ValueError(f"line {line_no}: invalid lambda {row[2]!r} for cell {key[0]}, "
                                 f"service {key[1]}")
            table[key] = lam
    return table


def export_rates_csv(table: dict, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATES_HEADER)
        for (s, n) in sorted(table):
            w.writerow([s, n, repr(float(table[(s, n)]))])
    return path


def rates_of(instance: ProblemInstance) -> dict:
    lam = instance.arrival_rates
    return {(s, n): float(lam[s, n]) for s in range(lam.shape[0]) for n in range(lam.shape[1])}


# single solves -----------------------------------------------------------------

SOLVERS = ("central", "sync_admm", "async_admm")
SOLVER_ERRORS = (DomainError, InfeasibleCellError, InfeasibleProblemError, NonConvergenceError)


@dataclass
class SolveOutcome:
    """What a sweep or the CLI records about one (instance, mode, solver) solve.

    ``solver`` is the solver that actually ran: the single-resource baselines are
    always solved centrally.
    """

    mode: str
    solver: str
    objective: float
    iterations: int
    converged: bool
    alloc: object = None
    trace: object = None


def solve(instance: ProblemInstance, mode="joint", solver: str = "central",
          admm: Optional[dict] = None, async_params: Optional[dict] = None,
          seed: int = 0) -> SolveOutcome:
    """Solve one slicing mode with the requested solver."""
    mode = SlicingMode(mode)
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}")
    admm = dict(admm or {})
    if mode is not SlicingMode.JOINT or solver == "central":
        r = solve_mode(instance, mode)
        return SolveOutcome(mode.value, "central", r.objective, r.iterations,
                            bool(np.isfinite(r.kkt_residual)), r.alloc)
    if solver == "sync_admm":
        r = ad.run(instance, **admm)
        return SolveOutcome(mode.value, solver, r.objective, r.iterations, r.converged, r.alloc,
                            r.trace)
    kw = {"rho": admm.get("rho", 1.0)}
    kw.update({k: v for k, v in (async_params or {}).items() if v is not None})
    r = aa.run_async(instance, seed=seed, **kw)
    return SolveOutcome(mode.value, solver, r.objective, r.updates, r.converged, r.alloc, r.trace)


# sweeps ----------------------------------------------------------------------------

SWEEP_AXES = ("bandwidth", "fog_power", "confidence")
SWEEP_COLUMNS = ("axis", "value", "mode", "solver", "objective", "iterations", "converged",
                 "error")
SERVICE_COLUMNS = ("axis", "value", "mode", "service_id", "service_name", "mean_response_s")


@dataclass(frozen=True)
class SweepSpec:
    """One-axis parameter sweep.

    ``bandwidth`` points are per-cell budgets in Hz, ``fog_power`` points are
    per-node processing power in tasks/s (the aggregate budget is S times the
    point) and ``confidence`` points are provisioning quantiles.
    """

    axis: str
    points: tuple
    modes: tuple = tuple(m.value for m in SlicingMode)
    solver: str = "central"

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(float(p) for p in self.points))
        object.__setattr__(self, "modes", tuple(SlicingMode(m).value for m in self.modes))
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}")
        if not self.points:
            raise ValueError("sweep needs at least one point")
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError("sweep points must be strictly increasing")
        if not self.modes:
            raise ValueError("sweep needs at least one mode")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")


def apply_point(instance: ProblemInstance, axis: str, value: float) -> ProblemInstance:
    if axis == "bandwidth":
        return instance.with_bandwidth(value)
    if axis == "fog_power":
        return instance.replace(fog_budget_tasks_per_s=value * instance.num_cells)
    if axis == "confidence":
        return instance.replace(confidence=value)
    raise ValueError(f"axis must be one of {SWEEP_AXES}")


@dataclass
class SweepRow:
    axis: str
    value: float
    mode: str
    solver: str
    objective: float
    iterations: int
    converged: bool
    error: str = ""
    mean_response: tuple = ()


def _sweep_point(args) -> list:
    instance, axis, value, modes, solver, admm, async_params, seed = args
    rows = []
    try:
        inst = apply_point(instance, axis, value)
    except (ValueError, *SOLVER_ERRORS) as exc:
        return [SweepRow(axis, value, m, solver, math.nan, 0, False, f"{type(exc).__name__}: {exc}")
                for m in modes]
    for m in modes:
        try:
            out = solve(inst, m, solver, admm, async_params, seed)
        except SOLVER_ERRORS as exc:
            rows.append(SweepRow(axis, value, m, solver, math.nan, 0, False,
                                 f"{type(exc).__name__}: {exc}"))
            continue
        per = response_times(inst, out.alloc).mean(axis=0)
        rows.append(SweepRow(axis, value, m, out.solver, out.objective, out.iterations,
                             out.converged, "", tuple(float(v) for v in per)))
    return rows


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    services: tuple

    def objectives(self, mode) -> np.ndarray:
        mode = SlicingMode(mode).value
        return np.array([r.objective for r in self.rows if r.mode == mode])

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def crossover(self) -> Optional[float]:
        """First point where the better single-resource baseline changes, if any."""
        bw, cp = self.objectives("bandwidth_only"), self.objectives("compute_only")
        if len(bw) != len(self.spec.points) or len(cp) != len(self.spec.points):
            return None
        ok = np.isfinite(bw) & np.isfinite(cp)
        sign = np.sign(bw - cp)
        prev = None
        for i in np.flatnonzero(ok):
            if prev is not None and sign[i] != 0 and sign[i] != prev:
                return self.spec.points[i]
            if sign[i] != 0:
                prev = sign[i]
        return None

    def summary(self) -> dict:
        by_mode = {m: [None if not math.isfinite(v) else v for v in self.objectives(m)]
                   for m in self.spec.modes}
        return {
            "axis": self.spec.axis,
            "points": list(self.spec.points),
            "modes": list(self.spec.modes),
            "solver": self.spec.solver,
            "objective": by_mode,
            "failures": [{"value": r.value, "mode": r.mode, "error": r.error}
                         for r in self.rows if r.error],
            "all_converged": self.all_converged,
            "crossover": self.crossover(),
        }

    def write(self, out_dir, stem: Optional[str] = None) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or f"sweep_{self.spec.axis}"
        paths = {"table": out / f"{stem}.csv", "services": out / f"{stem}_services.csv",
                 "summary": out / f"{stem}_summary.json"}
        with paths["table"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([r.axis, repr(float(r.value)), r.mode, r.solver,
                            "" if math.isnan(r.objective) else repr(float(r.objective)),
                            r.iterations, int(r.converged), r.error])
        with paths["services"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERVICE_COLUMNS)
            for r in self.rows:
                for n, v in enumerate(r.mean_response):
                    w.writerow([r.axis, repr(float(r.value)), r.mode, n, self.services[n], repr(float(v))])
        paths["summary"].write_text(json.dumps(self.summary(), indent=2))
        return paths


def run_sweep(instance: ProblemInstance, sweep: SweepSpec, admm: Optional[dict] = None,
              async_params: Optional[dict] = None, seed: int = 0,
              workers: int = 1) -> SweepResult:
    """Solve every (point, mode) pair; failures are recorded and the sweep continues.

    With ``workers > 1`` points run in separate processes; rows are always
    returned in point order.
    """
    jobs = [(instance, sweep.axis, v, sweep.modes, sweep.solver, admm, async_params, seed)
            for v in sweep.points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_sweep_point, jobs))
    else:
        chunks = [_sweep_point(j) for j in jobs]
    names = tuple(s.name or str(s.id) for s in instance.services)
    return SweepResult(sweep, [r for c in chunks for r in c], names)


# shipped sweep grids on the default scenario; the bandwidth grid reaches far enough
# for the single-resource baselines to swap order
BANDWIDTH_POINTS_HZ = (45e6, 60e6, 120e6, 240e6, 480e6, 960e6)
FOG_POWER_POINTS = (9700.0, 10000.0, 11000.0, 12500.0, 15000.0, 20000.0)
CONFIDENCE_POINTS = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


def shipped_sweeps(solver: str = "central") -> list:
    return [SweepSpec("bandwidth", BANDWIDTH_POINTS_HZ, solver=solver),
            SweepSpec("fog_power", FOG_POWER_POINTS, solver=solver),
            SweepSpec("confidence", CONFIDENCE_POINTS, solver=solver)]


# races -------------------------------------------------------------------------------

RACE_COLUMNS = ("sim_time", "sync_objective", "async_objective")


@dataclass
class RaceResult:
    """Sync and async simulations of one instance under one timing draw.

    ``*_time`` is the simulated time after which the run's objective stays
    within ``rel_tol`` of the centralized optimum.
    """

    sync: SimReport
    async_: SimReport
    reference: float
    rel_tol: float
    sync_time: float
    async_time: float

    @property
    def converged(self) -> bool:
        return math.isfinite(self.sync_time) and math.isfinite(self.async_time)

    def aligned(self) -> list:
        """Both objective traces on the union of their event times (last value held)."""
        def series(rep):
            t, f = rep.trace.column("sim_time"), rep.trace.column("objective")
            keep = np.isfinite(f)
            return t[keep], f[keep]

        ts, fs = series(self.sync)
        ta, fa = series(self.async_)
        grid = np.union1d(ts, ta)

        def hold(t, f):
            i = np.searchsorted(t, grid, side="right") - 1
            return np.where(i >= 0, f[np.maximum(i, 0)], np.nan)

        return list(zip(grid.tolist(), hold(ts, fs).tolist(), hold(ta, fa).tolist()))

    def write(self, out_dir, stem: str = "race") -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"aligned": out / f"{stem}_aligned.csv",
                 "sync_trace": self.sync.trace.to_csv(out / f"{stem}_sync_trace.csv"),
                 "async_trace": self.async_.trace.to_csv(out / f"{stem}_async_trace.csv"),
                 "sync_events": self.sync.event_log_to_csv(out / f"{stem}_sync_events.csv"),
                 "async_events": self.async_.event_log_to_csv(out / f"{stem}_async_events.csv")}
        with paths["aligned"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RACE_COLUMNS)
            for row in self.aligned():
                w.writerow(["" if math.isnan(v) else repr(v) for v in row])
        return paths


def run_race(instance: ProblemInstance, timing: TimingModel, rho: float = 1.0,
             alpha: float = 0.5, tau: Optional[int] = None, rel_tol: float = 1e-3,
             max_iter: int = 120, max_updates: int = 3000, async_tol: float = 1e-4,
             reference: Optional[float] = None, sp=None) -> RaceResult:
    """Simulate sync and async ADMM on the same instance and timing seed.

    Both simulations run well past the point where the objective settles, so
    ``sync_time`` and ``async_time`` are not cut short by the stopping rules.
    """
    sp = sp or scale_problem(instance)
    ref = centralized_solve(instance, sp=sp).objective if reference is None else reference
    rs = simulate_sync(instance, timing, rho, max_iter=max_iter, sp=sp)
    ra = simulate_async(instance, timing, rho, alpha=alpha, tau=tau, tol=async_tol,
                        max_updates=max_updates, sp=sp)
    return RaceResult(rs, ra, ref, rel_tol, rs.time_to_objective(ref, rel_tol),
                      ra.time_to_objective(ref, rel_tol))


# naive asynchronous stress fixture ------------------------------------------------------

STRESS_CELLS = 8
STRESS_SLOW = (7,)
STRESS_RHO = 1.0
STRESS_PERTURBATION = 1e-3


def stress_instance(seed: int = 0) -> ProblemInstance:
    """Default-style scenario with eight cells."""
    return generate_scenario(ScenarioSpec(num_cells=STRESS_CELLS, seed=seed))


def stress_timing(seed: int) -> TimingModel:
    """One base station ten times slower than the other seven."""
    return TimingModel.with_stragglers(STRESS_CELLS, slow=STRESS_SLOW, factor=10.0, seed=seed)


@dataclass
class NaiveDemo:
    naive: SimReport
    async_: SimReport
    seed: int
    probe: tuple = (10, 200)

    @property
    def residual_grew(self) -> bool:
        r = self.naive.trace.column("primal")
        a, b = self.probe
        return len(r) >= b and bool(r[b - 1] > r[a - 1])


def run_naive_demo(instance: ProblemInstance, timing: TimingModel, rho: float = STRESS_RHO,
                   perturbation: float = STRESS_PERTURBATION, alpha: float = 0.5,
                   max_updates: int = 200, async_max_updates: int = 20000,
                   seed: int = 0, sp=None) -> NaiveDemo:
    """Naive and proper asynchronous ADMM from the same start on the same event sequence.

    Both start next to the saddle point: x is the centralized optimum with a
    relative perturbation drawn from ``seed``, the dual is at its optimal value,
    and the asynchronous memory is the matching Douglas-Rachford point.
    """
    sp = sp or scale_problem(instance)
    c = centralized_solve(instance, sp=sp)
    start = aa.naive_saddle_start(sp, c.x, c.fog_multiplier, rho, perturbation,
                                  np.random.default_rng(1000 + seed))
    naive = simulate_naive_async(instance, timing, rho, max_updates=max_updates, sp=sp,
                                 start=start)
    proper = simulate_async(instance, timing, rho, alpha=alpha, max_updates=async_max_updates,
                            sp=sp, V0=aa.naive_equivalent_memory(start))
    return NaiveDemo(naive, proper, seed)
