"""Synchronous consensus ADMM with partial variable splitting.

Every base station solves its own prox subproblem, the orchestrator projects
onto the shared fog-budget halfspace, and the scaled dual is updated.  All
vectors live in solver coordinates (see :class:`fedslice.model.ScaledProblem`)
and are stacked per cell as ``[b_1..b_N, mu_1..mu_N]``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InfeasibleCellError
from .kernels import feasible_start
from .local import LocalProblem, local_prox
from .model import AllocationMatrix, ProblemInstance, ScaledProblem, scale_problem, total_objective
from .trace import SYNC_COLUMNS, RunTrace


@dataclass(frozen=True)
class SyncState:
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray   # scaled dual
    rho: float
    k: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not (len(self.x) == len(self.z) == len(self.lam)):
            raise ValueError("x, z and lam must have the same length")


@dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    objective: float


def halfspace_matrix(instance_or_shape) -> np.ndarray:
    """Row vector selecting every processing-rate coordinate of the stacked vector."""
    if isinstance(instance_or_shape, tuple):
        S, N = instance_or_shape
    else:
        S, N = instance_or_shape.num_cells, instance_or_shape.num_services
    A = np.zeros((1, 2 * S * N))
    for s in range(S):
        A[0, 2 * N * s + N:2 * N * (s + 1)] = 1.0
    return A


def project_halfspace(v: np.ndarray, A: np.ndarray, gamma: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{z : A z <= gamma}``."""
    a = A[0]
    excess = float(a @ v) - gamma
    if excess <= 0:
        return np.array(v, dtype=float, copy=True)
    z = v - a * (excess / float(a @ a))
    # rounding can leave a@z a few ulps above gamma; step the active coordinates down
    # until the point is feasible in floating point, which makes a second projection a no-op
    active = a != 0
    while float(a @ z) > gamma:
        z[active] = np.nextafter(z[active], -np.inf)
    return z


def z_update(state: SyncState, A: np.ndarray, gamma: float) -> np.ndarray:
    return project_halfspace(state.x + state.lam, A, gamma)


def dual_update(state: SyncState) -> np.ndarray:
    return state.lam + (state.x - state.z)


def restore_feasible(sp: ScaledProblem, x: np.ndarray) -> np.ndarray:
    """Map a point that satisfies every per-cell constraint into the full feasible set.

    Bandwidths are kept.  If the processing rates overrun the fog budget they
    are pulled toward the smallest SLA-meeting rates by a common factor, which
    keeps every per-cell constraint satisfied.
    """
    X = np.array(x, dtype=float).reshape(sp.S, 2 * sp.N)
    B, M = X[:, :sp.N], X[:, sp.N:]
    total = M.sum()
    if total <= sp.gamma:
        return X.reshape(-1)
    floor = np.minimum(sp.min_mu_for_sla(B), M)
    spare = (M - floor).sum()
    room = sp.gamma - floor.sum()
    kappa = max(room, 0.0) / spare if spare > 0 else 0.0
    X[:, sp.N:] = floor + kappa * (M - floor)
    return X.reshape(-1)


def _cell_ok(sp: ScaledProblem, x: np.ndarray) -> bool:
    X = x.reshape(sp.S, 2 * sp.N)
    B, M = X[:, :sp.N], X[:, sp.N:]
    U = M - sp.lam
    if np.any(B < sp.lb) or np.any(M < sp.mu_lo) or np.any(U <= 0):
        return False
    if np.any(sp.cb / B + sp.cq / U > sp.sla[None, :]):
        return False
    return bool(np.all(np.sum(sp.a * B, axis=1) <= sp.budget))


def initial_point(sp: ScaledProblem) -> np.ndarray:
    """Per-cell strictly feasible start, pulled into the fog budget."""
    blocks = []
    for s in range(sp.S):
        x = feasible_start(*sp.cell_data(s))
        if x is None:
            raise InfeasibleCellError(f"cell {s}: feasible set is empty", cell=s)
        blocks.append(x)
    return restore_feasible(sp, np.concatenate(blocks))


def local_updates(sp: ScaledProblem, centers: np.ndarray, rho: float,
                  order: Optional[Sequence[int]] = None, t_final: float = 1e-9,
                  clock: Callable[[], float] = time.perf_counter):
    """Solve every cell's prox problem; returns stacked x and the slowest solve time."""
    n2 = 2 * sp.N
    x = np.empty(sp.dim)
    slowest = 0.0
    for s in (range(sp.S) if order is None else order):
        lp = LocalProblem.for_cell(sp, s, rho, centers[s * n2:(s + 1) * n2])
        t0 = clock()
        x[s * n2:(s + 1) * n2] = local_prox(lp, t_final=t_final).x
        slowest = max(slowest, clock() - t0)
    return x, slowest


def iterate(state: SyncState, sp: ScaledProblem, A: Optional[np.ndarray] = None,
            order: Optional[Sequence[int]] = None, t_final: float = 1e-9):
    """One round: local prox solves, halfspace projection, dual update.

    Returns ``(new_state, residuals, slowest_local_seconds)``.
    """
    if A is None:
        A = halfspace_matrix((sp.S, sp.N))
    x, slowest = local_updates(sp, state.z - state.lam, state.rho, order, t_final)
    mid = replace(state, x=x)
    z = z_update(mid, A, sp.gamma)
    lam = dual_update(replace(mid, z=z))
    new = SyncState(x, z, lam, state.rho, state.k + 1)
    res = Residuals(primal=float(np.linalg.norm(x - z)),
                    dual=float(state.rho * np.linalg.norm(z - state.z)),
                    objective=sp.objective(restore_feasible(sp, x)) * sp.ut)
    return new, res, slowest


@dataclass
class SyncResult:
    alloc: AllocationMatrix
    trace: RunTrace
    converged: bool
    iterations: int
    state: SyncState
    objective: float
    states: list = field(default_factory=list)

    def __iter__(self):
        yield self.alloc
        yield self.trace


def default_tolerance(S: int, N: int) -> float:
    return 1e-6 * math.sqrt(2 * S * N)


def final_point(sp: ScaledProblem, state: SyncState) -> np.ndarray:
    """z when it passes every per-cell check, otherwise the restored x."""
    if _cell_ok(sp, state.z):
        return state.z.copy()
    return restore_feasible(sp, state.x)


def run(instance: ProblemInstance, rho: float = 1.0, eps_primal: Optional[float] = None,
        eps_dual: Optional[float] = None, max_iter: int = 500, balance: bool = False,
        x0=None, z0=None, lam0=None, keep_states: bool = False, t_final: float = 1e-9,
        sp: Optional[ScaledProblem] = None,
        callback: Optional[Callable[[SyncState, Residuals], None]] = None) -> SyncResult:
    """Run the synchronous ADMM until both residuals are within tolerance.

    Residuals are measured in solver coordinates.  When ``balance`` is on, rho is
    doubled or halved whenever one residual exceeds the other tenfold.
    """
    sp = sp or scale_problem(instance)
    tol = default_tolerance(sp.S, sp.N)
    eps_primal = tol if eps_primal is None else eps_primal
    eps_dual = tol if eps_dual is None else eps_dual
    A = halfspace_matrix((sp.S, sp.N))
    if x0 is None:
        x0 = initial_point(sp)
    x0 = np.asarray(x0, dtype=float)
    z0 = project_halfspace(x0, A, sp.gamma) if z0 is None else np.asarray(z0, dtype=float)
    lam0 = np.zeros(sp.dim) if lam0 is None else np.asarray(lam0, dtype=float)
    state = SyncState(x0.copy(), z0.copy(), lam0.copy(), float(rho), 0)

    trace = RunTrace(SYNC_COLUMNS, meta={"rho": float(rho)})
    states = [state] if keep_states else []
    converged = False
    start = time.perf_counter()
    while state.k < max_iter:
        state, res, slowest = iterate(state, sp, A, t_final=t_final)
        trace.append(k=state.k, primal=res.primal, dual=res.dual, objective=res.objective,
                     elapsed_local_max=slowest, elapsed_total=time.perf_counter() - start)
        if keep_states:
            states.append(state)
        if callback is not None:
            callback(state, res)
        if res.primal <= eps_primal and res.dual <= eps_dual:
            converged = True
            break
        if balance:
            if res.primal > 10 * res.dual:
                state = replace(state, rho=state.rho * 2, lam=state.lam / 2)
            elif res.dual > 10 * res.primal:
                state = replace(state, rho=state.rho / 2, lam=state.lam * 2)
    trace.converged = converged
    xf = final_point(sp, state)
    alloc = sp.to_alloc(xf)
    return SyncResult(alloc, trace, converged, state.k, state, total_objective(instance, alloc),
                      states)
