"""Discrete-event simulation of the orchestrator / base-station federation.

Simulated time advances only through modelled compute times and message
latencies; the solver math runs instantaneously at the event that triggers it.
Simultaneous events are ordered by ``(time, bs_id, event kind, sequence)``.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import admm_async as aa
from . import admm_sync as ad
from .model import AllocationMatrix, ProblemInstance, ScaledProblem, scale_problem, total_objective
from .trace import EVENT_COLUMNS, SIM_COLUMNS, RunTrace

# kind order used for tie-breaking simultaneous events
WRITE, READ, UPDATE = 0, 1, 2
_KIND_NAMES = {WRITE: "write", READ: "read", UPDATE: "update"}


@dataclass(frozen=True)
class TimingModel:
    """Per-BS exponential compute times plus fixed message latencies (seconds).

    ``mean_compute[s]`` is the mean compute time of BS ``s``.  With
    ``deterministic`` every compute takes exactly its mean.
    """

    mean_compute: tuple
    uplink: float = 0.0
    downlink: float = 0.0
    deterministic: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean_compute", tuple(float(m) for m in self.mean_compute))
        if not all(m > 0 for m in self.mean_compute):
            raise ValueError("compute means must be > 0")
        if self.uplink < 0 or self.downlink < 0:
            raise ValueError("latencies must be >= 0")

    @classmethod
    def homogeneous(cls, S: int, mean: float = 1.0, **kw) -> "TimingModel":
        return cls(tuple([mean] * S), **kw)

    @classmethod
    def with_stragglers(cls, S: int, slow: Sequence[int] = (0,), factor: float = 10.0,
                        mean: float = 1.0, **kw) -> "TimingModel":
        means = [mean * (factor if s in set(slow) else 1.0) for s in range(S)]
        return cls(tuple(means), **kw)

    def draw(self, rng: np.random.Generator, s: int) -> float:
        m = self.mean_compute[s]
        return m if self.deterministic else float(rng.exponential(m))


@dataclass(frozen=True)
class EventRecord:
    time: float
    bs_id: int
    event: str
    staleness: float = math.nan
    residual: float = math.nan


@dataclass
class SimReport:
    mode: str
    events: int
    sim_time_to_tol: float
    idle_time: np.ndarray
    trace: RunTrace
    event_log: list
    converged: bool
    alloc: Optional[AllocationMatrix] = None
    objective: float = math.nan
    local_solves: int = 0
    updates: int = 0
    max_staleness: int = 0
    extra: dict = field(default_factory=dict)

    def time_to_objective(self, target: float, rel_tol: float = 1e-3) -> float:
        """First simulated time after which the traced objective stays within ``rel_tol``."""
        t = self.trace.column("sim_time")
        f = self.trace.column("objective")
        ok = np.isfinite(f) & (np.abs(f - target) <= rel_tol * abs(target))
        sampled = np.isfinite(f)
        bad = np.flatnonzero(sampled & ~ok)
        good = np.flatnonzero(ok)
        if len(good) == 0:
            return math.inf
        after = good[good > bad[-1]] if len(bad) else good
        return float(t[after[0]]) if len(after) else math.inf

    def event_log_to_csv(self, path) -> Path:
        return write_event_log(self.event_log, path)


def write_event_log(log: Sequence[EventRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for e in log:
            w.writerow([repr(e.time), e.bs_id, e.event,
                        "" if math.isnan(e.staleness) else int(e.staleness),
                        "" if math.isnan(e.residual) else repr(e.residual)])
    return path


class _Queue:
    def __init__(self):
        self.heap: list = []
        self.seq = 0

    def push(self, time: float, bs: int, kind: int, payload=None):
        heapq.heappush(self.heap, (time, bs, kind, self.seq, payload))
        self.seq += 1

    def pop(self):
        return heapq.heappop(self.heap)

    def __bool__(self):
        return bool(self.heap)


# synchronous rounds ------------------------------------------------------------

def simulate_sync(instance: ProblemInstance, timing: TimingModel, rho: float = 1.0,
                  eps_primal: Optional[float] = None, eps_dual: Optional[float] = None,
                  max_iter: int = 500, sp: Optional[ScaledProblem] = None,
                  t_final: float = 1e-9) -> SimReport:
    """Barrier-synchronized rounds; the math is exactly :func:`admm_sync.run`'s."""
    sp = sp or scale_problem(instance)
    S = sp.S
    if len(timing.mean_compute) != S:
        raise ValueError("timing model must have one compute mean per cell")
    tol = ad.default_tolerance(S, sp.N)
    eps_primal = tol if eps_primal is None else eps_primal
    eps_dual = tol if eps_dual is None else eps_dual
    rng = np.random.default_rng(timing.seed)
    A = ad.halfspace_matrix((S, sp.N))
    x0 = ad.initial_point(sp)
    state = ad.SyncState(x0.copy(), ad.project_halfspace(x0, A, sp.gamma), np.zeros(sp.dim),
                         float(rho), 0)
    trace = RunTrace(SIM_COLUMNS, meta={"mode": "sync", "rho": rho})
    log: list = []
    idle = np.zeros(S)
    q = _Queue()
    now = 0.0
    converged = False
    t_tol = math.inf
    solves = 0
    while state.k < max_iter:
        for s in range(S):
            t_read = now + timing.downlink
            log.append(EventRecord(t_read, s, "read", 0))
            q.push(t_read + timing.draw(rng, s) + timing.uplink, s, WRITE)
        arrivals = np.empty(S)
        while q:
            t, s, kind, _, _ = q.pop()
            arrivals[s] = t
            log.append(EventRecord(t, s, "write", 0))
        barrier = float(arrivals.max())
        idle += barrier - arrivals
        now = barrier
        state, res, _ = ad.iterate(state, sp, A, t_final=t_final)
        solves += S
        log.append(EventRecord(now, -1, "update", 0, res.primal))
        trace.append(k=state.k, sim_time=now, primal=res.primal, dual=res.dual,
                     objective=res.objective)
        if res.primal <= eps_primal and res.dual <= eps_dual:
            converged = True
            t_tol = now
            break
    trace.converged = converged
    alloc = sp.to_alloc(ad.final_point(sp, state))
    return SimReport("sync", len(log), t_tol, idle, trace, log, converged, alloc,
                     total_objective(instance, alloc), solves, state.k)


# asynchronous read / compute / write cycles --------------------------------------

class _Admission:
    """Bounded-staleness gatekeeper.

    A write is admitted only if no other in-flight reader would then lag by more
    than ``tau`` updates; a read is admitted only if no other in-flight reader
    holds the current version.  Read versions of in-flight BSs are therefore
    distinct, so the oldest reader can always write and nothing deadlocks.
    """

    def __init__(self, tau: Optional[int]):
        self.tau = tau
        self.reading: dict = {}  # bs -> version read

    def can_write(self, s: int, k: int) -> bool:
        if self.tau is None:
            return True
        return all(k + 1 - r <= self.tau for j, r in self.reading.items() if j != s)

    def can_read(self, s: int, k: int) -> bool:
        if self.tau is None:
            return True
        return all(r != k for j, r in self.reading.items() if j != s)


def _async_loop(S: int, timing: TimingModel, tau: Optional[int], max_updates: int, on_read,
                on_write, log: list):
    """Drive read/compute/write cycles; returns (idle, end_time, writes, max_age).

    ``on_read(s)`` captures the reader's snapshot; ``on_write(s, t, age)`` applies
    the write and returns ``(stop, residual)``.
    """
    rng = np.random.default_rng(timing.seed)
    q = _Queue()
    gate = _Admission(tau)
    idle = np.zeros(S)
    waiting_write: dict = {}  # bs -> time it started waiting
    waiting_read: dict = {}
    k = 0
    max_age = 0
    now = 0.0

    def start_read(s, t):
        gate.reading[s] = k
        on_read(s)
        log.append(EventRecord(t, s, "read"))
        q.push(t + timing.draw(rng, s) + timing.uplink, s, WRITE)

    for s in range(S):
        q.push(timing.downlink, s, READ)

    stop = False
    while q and not stop and k < max_updates:
        now, s, kind, _, _ = q.pop()
        if kind == READ:
            if gate.can_read(s, k):
                start_read(s, now)
            else:
                waiting_read[s] = now
            continue
        # write
        if not gate.can_write(s, k):
            waiting_write[s] = now
            continue
        pending = [(s, now)]
        while pending:
            w, t_arr = pending.pop(0)
            idle[w] += now - t_arr
            age = k - gate.reading.pop(w)
            max_age = max(max_age, age)
            stop, residual = on_write(w, now, age)
            k += 1
            log.append(EventRecord(now, w, "write", age, residual))
            q.push(now + timing.downlink, w, READ)
            if stop or k >= max_updates:
                break
            # a write can unblock readers and other writers; serve them first come,
            # first served (BS id breaks ties) so no BS starves
            for r in sorted(waiting_read, key=lambda j: (waiting_read[j], j)):
                if gate.can_read(r, k):
                    idle[r] += now - waiting_read.pop(r)
                    start_read(r, now)
            for o in sorted(waiting_write, key=lambda j: (waiting_write[j], j)):
                if gate.can_write(o, k):
                    pending.append((o, waiting_write.pop(o)))
                    break
    return idle, now, k, max_age


def simulate_async(instance: ProblemInstance, timing: TimingModel, rho: float = 1.0,
                   alpha: float = 0.5, tau: Optional[int] = None, tol: Optional[float] = None,
                   max_updates: Optional[int] = None, sample_every: int = 1,
                   sp: Optional[ScaledProblem] = None, t_final: float = 1e-9,
                   V0: Optional[np.ndarray] = None) -> SimReport:
    """Event-driven asynchronous run; ``tau=None`` imposes no staleness bound.

    ``V0`` overrides the default memory start ``-rho * x0``.
    """
    sp = sp or scale_problem(instance)
    S = sp.S
    if len(timing.mean_compute) != S:
        raise ValueError("timing model must have one compute mean per cell")
    tol = ad.default_tolerance(S, sp.N) if tol is None else tol
    max_updates = 4000 * S if max_updates is None else max_updates
    A = ad.halfspace_matrix((S, sp.N))
    V0 = aa.initial_memory(sp, rho) if V0 is None else np.array(V0, dtype=float)
    state = aa.AsyncState(V0, np.zeros(S, dtype=np.int64), alpha, rho)
    snaps: dict = {}
    trace = RunTrace(SIM_COLUMNS, meta={"mode": "async", "rho": rho, "alpha": alpha,
                                        "tau": tau})
    log: list = []
    result = {"t_tol": math.inf, "converged": False, "best": (math.inf, state.V.copy())}

    def on_read(s):
        snaps[s] = aa.StaleRead(state.V.copy(), np.zeros(S, dtype=np.int64),
                                state.version.copy())

    def on_write(s, t, age):
        upd = aa.block_update(sp, snaps.pop(s), s, rho, alpha, A, t_final)
        aa.apply_block_update(state, upd)
        if state.k % sample_every:
            trace.append(k=state.k, sim_time=t)
            return False, math.nan
        sw = aa.fresh_sweep(sp, state.V, rho, A, t_final)
        obj = sp.objective(ad.restore_feasible(sp, sw.x)) * sp.ut
        trace.append(k=state.k, sim_time=t, primal=float(np.linalg.norm(sw.x - sw.z)),
                     fixed_point_residual=sw.residual, objective=obj)
        if sw.residual < result["best"][0]:
            result["best"] = (sw.residual, state.V.copy())
        if sw.residual <= tol:
            result["converged"] = True
            result["t_tol"] = t
            return True, sw.residual
        return False, sw.residual

    idle, end, writes, max_age = _async_loop(S, timing, tau, max_updates, on_read, on_write, log)
    trace.converged = result["converged"]
    V = state.V if result["converged"] else result["best"][1]
    alloc = sp.to_alloc(aa.recover_primal(sp, V, rho))
    return SimReport("async", len(log), result["t_tol"], idle, trace, log, result["converged"],
                     alloc, total_objective(instance, alloc), writes, writes, max_age)


def simulate_naive_async(instance: ProblemInstance, timing: TimingModel, rho: float = 1.0,
                         tau: Optional[int] = None, max_updates: int = 200,
                         divergence_factor: float = 10.0, sp: Optional[ScaledProblem] = None,
                         t_final: float = 1e-9,
                         start: Optional[aa.NaiveState] = None) -> SimReport:
    """Synchronous ADMM update rules fed by stale, one-at-a-time base-station writes.

    Every write triggers a full halfspace projection and dual update using the
    other cells' last-written (stale) x.  After each write the state is mapped to
    its Douglas-Rachford point and a fresh sweep is taken, so the traced
    ``primal`` and ``fixed_point_residual`` are directly comparable with
    :func:`simulate_async`.  The raw post-write gap ``||x - z||`` passes through
    zero whenever the budget goes slack, so it is kept in ``extra["write_gap"]``
    only.  The run is flagged divergent when the final primal residual exceeds
    ``divergence_factor`` times its minimum.
    """
    sp = sp or scale_problem(instance)
    S = sp.S
    if len(timing.mean_compute) != S:
        raise ValueError("timing model must have one compute mean per cell")
    A = ad.halfspace_matrix((S, sp.N))
    st = aa.naive_initial_state(sp, rho) if start is None else start.copy()
    snaps: dict = {}
    trace = RunTrace(SIM_COLUMNS, meta={"mode": "naive", "rho": rho, "tau": tau})
    log: list = []
    gaps: list = []

    def on_read(s):
        snaps[s] = (st.z.copy(), st.lam.copy())

    def on_write(s, t, age):
        z_snap, lam_snap = snaps.pop(s)
        xb = aa.naive_local(sp, z_snap, lam_snap, s, rho, t_final)
        gaps.append(aa.naive_write(sp, st, s, xb, A))
        sw = aa.fresh_sweep(sp, aa.naive_equivalent_memory(st), rho, A, t_final)
        primal = float(np.linalg.norm(sw.x - sw.z))
        obj = sp.objective(ad.restore_feasible(sp, st.x)) * sp.ut
        trace.append(k=st.k, sim_time=t, primal=primal, fixed_point_residual=sw.residual,
                     objective=obj)
        return False, primal

    idle, end, writes, max_age = _async_loop(S, timing, tau, max_updates, on_read, on_write, log)
    r = trace.column("primal")
    divergent = bool(len(r) and r[-1] > divergence_factor * r.min())
    trace.converged = not divergent
    alloc = sp.to_alloc(ad.restore_feasible(sp, st.x))
    rep = SimReport("naive", len(log), math.inf, idle, trace, log, not divergent, alloc,
                    total_objective(instance, alloc), writes, writes, max_age)
    rep.extra["divergent"] = divergent
    rep.extra["write_gap"] = np.array(gaps)
    return rep
