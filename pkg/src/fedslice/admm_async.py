"""Asynchronous randomized-block ADMM on the Douglas-Rachford fixed-point map.

The orchestrator keeps a global memory ``V`` (solver coordinates, stacked per
cell).  An active base station reads a possibly stale snapshot ``V_hat`` and
computes, for its own block only,

    z_hat  = block of Proj_G(-V_hat / rho)
    L_ig   = V_hat + rho * z_hat
    x_hat  = prox of the cell objective at center (2 L_ig - V_hat) / rho
    L_f    = 2 L_ig - V_hat - rho * x_hat
    V_s   <- V_s - alpha * (L_ig - L_f)

With fresh reads and ``alpha = 1`` over all blocks this is one Douglas-Rachford
step.  The fixed-point residual ``||V - M(V)||`` equals ``rho ||x_hat - z_hat||``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .admm_sync import (default_tolerance, halfspace_matrix, initial_point, project_halfspace,
                         restore_feasible)
from .local import LocalProblem, local_prox
from .model import AllocationMatrix, ProblemInstance, ScaledProblem, scale_problem, total_objective
from .trace import ASYNC_COLUMNS, RunTrace

STALENESS_MODELS = ("fresh", "uniform", "geometric")


@dataclass
class AsyncState:
    """Global memory plus bookkeeping.  Mutated in place by :func:`apply_block_update`."""

    V: np.ndarray
    version: np.ndarray
    alpha: float
    rho: float
    k: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        self.V = np.array(self.V, dtype=float)
        self.version = np.array(self.version, dtype=np.int64)

    def copy(self) -> "AsyncState":
        return AsyncState(self.V.copy(), self.version.copy(), self.alpha, self.rho, self.k)


@dataclass(frozen=True)
class StaleRead:
    v_hat: np.ndarray
    age: np.ndarray          # per block, global updates elapsed since the read
    versions: np.ndarray     # per-block version counters seen by the reader


@dataclass(frozen=True)
class BlockUpdate:
    block: int
    delta: np.ndarray
    based_on_version: np.ndarray
    x_hat: Optional[np.ndarray] = None
    z_hat: Optional[np.ndarray] = None


def _sl(N: int, block: int) -> slice:
    return slice(2 * N * block, 2 * N * (block + 1))


def z_block_closed_form(v_hat: np.ndarray, A: np.ndarray, gamma: float, rho: float,
                        block: int) -> np.ndarray:
    """Block of the minimizer of ``rho/2 ||z + v_hat/rho||^2`` over ``A z <= gamma``.

    The inactive branch returns ``-v_hat/rho``; the active branch is the
    KKT closed form, which needs the single global scalar ``A v_hat``.
    """
    a = A[0]
    N = int(np.argmax(a > 0))  # each block is N bandwidth zeros followed by N rate ones
    sl = _sl(N, block)
    av = float(a @ v_hat)
    out = -v_hat[sl] / rho
    if -av / rho <= gamma:
        return out
    return out + a[sl] * (av / rho + gamma) / float(a @ a)


def lambda_ig_block(v_hat_block: np.ndarray, z_hat_block: np.ndarray, rho: float) -> np.ndarray:
    return v_hat_block + rho * z_hat_block


def x_block_solve(sp: ScaledProblem, v_hat_block: np.ndarray, lig_block: np.ndarray,
                  rho: float, block: int, t_final: float = 1e-9):
    """Returns ``(x_hat, lambda_f)`` for one block."""
    center = (2.0 * lig_block - v_hat_block) / rho
    x = local_prox(LocalProblem.for_cell(sp, block, rho, center), t_final=t_final).x
    return x, 2.0 * lig_block - v_hat_block - rho * x


def block_update(sp: ScaledProblem, read: StaleRead, block: int, rho: float, alpha: float,
                 A: Optional[np.ndarray] = None, t_final: float = 1e-9) -> BlockUpdate:
    if A is None:
        A = halfspace_matrix((sp.S, sp.N))
    sl = _sl(sp.N, block)
    zb = z_block_closed_form(read.v_hat, A, sp.gamma, rho, block)
    lig = lambda_ig_block(read.v_hat[sl], zb, rho)
    xb, lf = x_block_solve(sp, read.v_hat[sl], lig, rho, block, t_final)
    return BlockUpdate(block, alpha * (lig - lf), read.versions.copy(), xb, zb)


def apply_block_update(state: AsyncState, update: BlockUpdate) -> AsyncState:
    if not np.all(np.isfinite(update.delta)):
        raise ValueError("non-finite block update")
    N2 = len(update.delta)
    sl = slice(N2 * update.block, N2 * (update.block + 1))
    state.V[sl] -= update.delta
    state.version[update.block] += 1
    state.k += 1
    return state


# fresh sweeps -----------------------------------------------------------------

@dataclass
class Sweep:
    """All blocks evaluated on one fresh snapshot."""

    x: np.ndarray
    z: np.ndarray
    residual: float


def fresh_sweep(sp: ScaledProblem, V: np.ndarray, rho: float, A=None,
                t_final: float = 1e-9) -> Sweep:
    if A is None:
        A = halfspace_matrix((sp.S, sp.N))
    read = StaleRead(V, np.zeros(sp.S, dtype=np.int64), np.zeros(sp.S, dtype=np.int64))
    x = np.empty(sp.dim)
    z = np.empty(sp.dim)
    for s in range(sp.S):
        u = block_update(sp, read, s, rho, 1.0, A, t_final)
        x[_sl(sp.N, s)] = u.x_hat
        z[_sl(sp.N, s)] = u.z_hat
    return Sweep(x, z, float(rho * np.linalg.norm(x - z)))


def drs_operator(sp: ScaledProblem, V: np.ndarray, rho: float, t_final: float = 1e-9) -> np.ndarray:
    """``M_DRS(V) = V - (L_ig - L_f)`` evaluated on every block."""
    sw = fresh_sweep(sp, V, rho, t_final=t_final)
    return V - rho * (sw.x - sw.z)


def fixed_point_residual(sp: ScaledProblem, V: np.ndarray, rho: float) -> float:
    return fresh_sweep(sp, V, rho).residual


def recover_primal(sp: ScaledProblem, V: np.ndarray, rho: float) -> np.ndarray:
    """Fresh x-sweep from ``V``, mapped into the full feasible set (solver coordinates)."""
    return restore_feasible(sp, fresh_sweep(sp, V, rho).x)


def oracle_fixed_point(sp: ScaledProblem, x_star: np.ndarray, nu: float, rho: float) -> np.ndarray:
    """``V* = -nu A^T - rho x*`` for a primal optimum and fog-budget multiplier."""
    A = halfspace_matrix((sp.S, sp.N))[0]
    return -nu * A - rho * x_star


def initial_memory(sp: ScaledProblem, rho: float) -> np.ndarray:
    return -rho * initial_point(sp)


# staleness models -----------------------------------------------------------------

class SnapshotHistory:
    """Last ``tau + 1`` versions of V, for modelled stale reads."""

    def __init__(self, V: np.ndarray, version: np.ndarray, tau: int):
        self.tau = int(tau)
        self.buf = deque([V.copy()], maxlen=self.tau + 1)
        self.versions = deque([version.copy()], maxlen=self.tau + 1)

    def push(self, V: np.ndarray, version: np.ndarray) -> None:
        self.buf.append(V.copy())
        self.versions.append(version.copy())

    def read(self, rng: np.random.Generator, model: str, S: int, N: int,
             p_geom: float = 0.5) -> StaleRead:
        avail = len(self.buf) - 1
        if model == "fresh" or self.tau == 0:
            ages = np.zeros(S, dtype=np.int64)
        elif model == "uniform":
            ages = np.full(S, int(rng.integers(0, min(self.tau, avail) + 1)), dtype=np.int64)
        elif model == "geometric":
            ages = np.minimum(rng.geometric(p_geom, size=S) - 1, min(self.tau, avail))
        else:
            raise ValueError(f"unknown staleness model {model!r}")
        v = np.empty_like(self.buf[-1])
        vers = np.zeros(S, dtype=np.int64)
        for s in range(S):
            src = self.buf[-1 - ages[s]]
            sl = _sl(N, s)
            v[sl] = src[sl]
            vers[s] = self.versions[-1 - ages[s]][s]
        return StaleRead(v, ages, vers)


# driver ---------------------------------------------------------------------------

@dataclass
class AsyncResult:
    alloc: AllocationMatrix
    trace: RunTrace
    converged: bool
    updates: int
    state: AsyncState
    objective: float
    memory: list = field(default_factory=list)  # V after every update, when requested

    def __iter__(self):
        yield self.alloc
        yield self.trace


def conservative_alpha(S: int, tau: int, p_min: Optional[float] = None) -> float:
    p_min = 1.0 / S if p_min is None else p_min
    return min(1.0, S * p_min / (2 * tau + 1))


def run_async(instance: ProblemInstance, rho: float = 1.0, alpha: float = 0.5, tau: int = 0,
              staleness: str = "uniform", activation: Optional[Sequence[float]] = None,
              seed: int = 0, tol: Optional[float] = None, max_updates: Optional[int] = None,
              V0=None, sample_every: Optional[int] = None, t_final: float = 1e-9,
              sp: Optional[ScaledProblem] = None, keep_memory: bool = False) -> AsyncResult:
    """Simulated asynchronous run with i.i.d. block activation and modelled staleness.

    The fixed-point residual and the recovered objective are sampled on fresh
    snapshots every ``sample_every`` (default S) updates; the run stops once the
    residual is within ``tol``.
    """
    sp = sp or scale_problem(instance)
    if staleness not in STALENESS_MODELS:
        raise ValueError(f"staleness must be one of {STALENESS_MODELS}")
    S = sp.S
    tol = default_tolerance(S, sp.N) if tol is None else tol
    max_updates = 2000 * S if max_updates is None else max_updates
    every = S if sample_every is None else sample_every
    if activation is None:
        probs = np.full(S, 1.0 / S)
    else:
        probs = np.asarray(activation, dtype=float)
        if probs.shape != (S,) or np.any(probs <= 0):
            raise ValueError("activation probabilities must be positive, one per cell")
        probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    A = halfspace_matrix((S, sp.N))
    V = initial_memory(sp, rho) if V0 is None else np.asarray(V0, dtype=float)
    state = AsyncState(V.copy(), np.zeros(S, dtype=np.int64), alpha, rho, 0)
    hist = SnapshotHistory(state.V, state.version, 0 if staleness == "fresh" else tau)

    trace = RunTrace(ASYNC_COLUMNS, meta={"rho": rho, "alpha": alpha, "tau": tau,
                                          "staleness": staleness, "seed": seed})
    memory = [state.V.copy()] if keep_memory else []
    converged = False
    best = (math.inf, None)
    sw = fresh_sweep(sp, state.V, rho, A, t_final)
    if sw.residual <= tol:
        converged = True
    while not converged and state.k < max_updates:
        s = int(rng.choice(S, p=probs)) if activation is not None else int(rng.integers(S))
        read = hist.read(rng, staleness, S, sp.N)
        upd = block_update(sp, read, s, rho, alpha, A, t_final)
        apply_block_update(state, upd)
        hist.push(state.V, state.version)
        if keep_memory:
            memory.append(state.V.copy())
        row = dict(k=state.k, active_block=s, staleness_age=int(read.age.max()))
        if state.k % every == 0:
            sw = fresh_sweep(sp, state.V, rho, A, t_final)
            xr = restore_feasible(sp, sw.x)
            row.update(fixed_point_residual=sw.residual, objective=sp.objective(xr) * sp.ut)
            if sw.residual < best[0]:
                best = (sw.residual, state.V.copy())
            if sw.residual <= tol:
                converged = True
        trace.append(**row)
    trace.converged = converged
    V_out = state.V if converged or best[1] is None else best[1]
    xf = recover_primal(sp, V_out, rho)
    alloc = sp.to_alloc(xf)
    res = AsyncResult(alloc, trace, converged, state.k, state, total_objective(instance, alloc))
    if keep_memory:
        res.memory = memory
    return res


# naive asynchronous ADMM ------------------------------------------------------------

@dataclass
class NaiveState:
    """Orchestrator state for synchronous-ADMM rules applied to stale, one-at-a-time writes."""

    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    rho: float
    k: int = 0

    def copy(self) -> "NaiveState":
        return NaiveState(self.x.copy(), self.z.copy(), self.lam.copy(), self.rho, self.k)


def naive_initial_state(sp: ScaledProblem, rho: float) -> NaiveState:
    x = initial_point(sp)
    return NaiveState(x.copy(), x.copy(), np.zeros(sp.dim), rho, 0)


def naive_saddle_start(sp: ScaledProblem, x_star: np.ndarray, nu: float, rho: float,
                       perturbation: float = 0.0,
                       rng: Optional[np.random.Generator] = None) -> NaiveState:
    """Start next to the saddle point: ``x`` is a relative perturbation of ``x_star``.

    The dual sits at its optimal value ``nu / rho`` on every processing-rate
    coordinate and ``z`` is the matching projection, so with no perturbation the
    state is a fixed point of the synchronous iteration.
    """
    A = halfspace_matrix((sp.S, sp.N))
    x = np.array(x_star, dtype=float)
    if perturbation:
        rng = rng or np.random.default_rng()
        x = restore_feasible(sp, x * (1 + perturbation * rng.uniform(-1, 1, sp.dim)))
    lam = (nu / rho) * A[0]
    return NaiveState(x.copy(), project_halfspace(x + lam, A, sp.gamma), lam, rho, 0)


def naive_equivalent_memory(state: NaiveState) -> np.ndarray:
    """Douglas-Rachford point matching an ADMM state: ``V = -rho (z + lam)``.

    A fresh sweep from this ``V`` reproduces the next synchronous x-update from
    ``(z, lam)``, so its residual measures the naive state on the same scale as
    the asynchronous method's memory.
    """
    return -state.rho * (state.z + state.lam)


def naive_local(sp: ScaledProblem, z_snap: np.ndarray, lam_snap: np.ndarray, block: int,
                rho: float, t_final: float = 1e-9) -> np.ndarray:
    sl = _sl(sp.N, block)
    lp = LocalProblem.for_cell(sp, block, rho, z_snap[sl] - lam_snap[sl])
    return local_prox(lp, t_final=t_final).x


def naive_write(sp: ScaledProblem, state: NaiveState, block: int, x_block: np.ndarray,
                A: Optional[np.ndarray] = None) -> float:
    """Apply one base station's write with the full z and dual updates; returns ``||x - z||``."""
    if A is None:
        A = halfspace_matrix((sp.S, sp.N))
    state.x[_sl(sp.N, block)] = x_block
    state.z = project_halfspace(state.x + state.lam, A, sp.gamma)
    state.lam = state.lam + (state.x - state.z)
    state.k += 1
    return float(np.linalg.norm(state.x - state.z))
