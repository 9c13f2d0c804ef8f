"""Reference solvers: centralized interior point, brute-force grid, slicing baselines."""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleProblemError, NonConvergenceError
from .kernels import feasible_start
from .model import AllocationMatrix, ProblemInstance, ScaledProblem, scale_problem


class SlicingMode(str, enum.Enum):
    JOINT = "joint"
    BANDWIDTH_ONLY = "bandwidth_only"
    COMPUTE_ONLY = "compute_only"


@dataclass
class CentralResult:
    alloc: AllocationMatrix
    x: np.ndarray            # stacked, solver coordinates
    objective: float         # seconds
    fog_multiplier: float    # multiplier of sum(mu) <= gamma, solver coordinates
    kkt_residual: float
    iterations: int


# dense barrier machinery ----------------------------------------------------

class _Barrier:
    """Log-barrier model of the full problem in solver coordinates.

    ``free`` masks the variables being optimized; constraints touching only
    fixed variables are dropped (they are checked once up front).
    """

    def __init__(self, sp: ScaledProblem, free: np.ndarray, objective: str = "delay"):
        self.sp = sp
        self.S, self.N = sp.S, sp.N
        self.free = free.reshape(self.S, 2 * self.N)
        fb = self.free[:, :self.N]
        fm = self.free[:, self.N:]
        self.use_s1 = fb
        self.use_s2 = fm
        self.use_s3 = fb | fm
        self.use_s4 = fb.any(axis=1)
        self.use_s5 = bool(fm.any())
        self.objective = objective

    def split(self, x):
        X = x.reshape(self.S, 2 * self.N)
        return X[:, :self.N], X[:, self.N:]

    def slacks(self, x):
        sp = self.sp
        B, M = self.split(x)
        U = M - sp.lam
        s1 = B - sp.lb
        s2 = M - sp.mu_lo
        with np.errstate(divide="ignore", invalid="ignore"):
            s3 = sp.sla[None, :] - sp.cb / B - sp.cq / U
        s4 = sp.budget - np.sum(sp.a * B, axis=1)
        s5 = sp.gamma - M.sum()
        return s1, s2, s3, s4, s5, U

    def feasible(self, x) -> bool:
        s1, s2, s3, s4, s5, U = self.slacks(x)
        ok = np.all(U[self.use_s3] > 0) and np.all(s3[self.use_s3] > 0)
        ok = ok and np.all(s1[self.use_s1] > 0) and np.all(s2[self.use_s2] > 0)
        ok = ok and np.all(s4[self.use_s4] > 0)
        if self.use_s5:
            ok = ok and s5 > 0
        return bool(ok)

    def merit(self, x, t) -> float:
        sp = self.sp
        s1, s2, s3, s4, s5, U = self.slacks(x)
        B, M = self.split(x)
        if self.objective == "delay":
            f = np.sum(sp.cb / B) + np.sum(sp.cq / U)
        else:
            f = M[self.use_s2].sum()
        logs = (np.log(s1[self.use_s1]).sum() + np.log(s2[self.use_s2]).sum()
                + np.log(s3[self.use_s3]).sum() + np.log(s4[self.use_s4]).sum())
        if self.use_s5:
            logs += math.log(s5)
        return float(f - t * logs)

    def derivatives(self, x, t, hessian=True):
        """Full gradient (and Hessian) in stacked coordinates."""
        sp = self.sp
        S, N = self.S, self.N
        B, M = self.split(x)
        s1, s2, s3, s4, s5, U = self.slacks(x)
        pb = sp.cb / B**2
        qu = sp.cq / U**2
        pbb = 2 * sp.cb / B**3
        quu = 2 * sp.cq / U**3

        gb = np.zeros((S, N))
        gm = np.zeros((S, N))
        hbb = np.zeros((S, N))
        hmm = np.zeros((S, N))
        hbm = np.zeros((S, N))
        if self.objective == "delay":
            gb += -pb
            gm += -qu
            hbb += pbb
            hmm += quu
        else:
            gm += self.use_s2.astype(float)
        m1, m2, m3 = self.use_s1, self.use_s2, self.use_s3
        gb -= np.where(m1, t / np.where(m1, s1, 1), 0)
        hbb += np.where(m1, t / np.where(m1, s1, 1) ** 2, 0)
        gm -= np.where(m2, t / np.where(m2, s2, 1), 0)
        hmm += np.where(m2, t / np.where(m2, s2, 1) ** 2, 0)
        s3s = np.where(m3, s3, 1.0)
        k3 = np.where(m3, t / s3s**2, 0)
        gb -= np.where(m3, t * pb / s3s, 0)
        gm -= np.where(m3, t * qu / s3s, 0)
        hbb += k3 * pb**2 + np.where(m3, t * pbb / s3s, 0)
        hmm += k3 * qu**2 + np.where(m3, t * quu / s3s, 0)
        hbm += k3 * pb * qu

        dim = 2 * S * N
        g = np.zeros(dim)
        H = np.zeros((dim, dim)) if hessian else None
        for s in range(S):
            o = 2 * N * s
            ib = np.arange(o, o + N)
            im = ib + N
            g[ib] = gb[s]
            g[im] = gm[s]
            if self.use_s4[s]:
                g[ib] += t * sp.a[s] / s4[s]
            if not hessian:
                continue
            H[ib, ib] += hbb[s]
            H[im, im] += hmm[s]
            H[ib, im] += hbm[s]
            H[im, ib] += hbm[s]
            if self.use_s4[s]:
                H[np.ix_(ib, ib)] += t * np.outer(sp.a[s], sp.a[s]) / s4[s] ** 2
        if self.use_s5:
            mu_idx = np.concatenate([np.arange(2 * N * s + N, 2 * N * (s + 1)) for s in range(S)])
            g[mu_idx] += t / s5
            if hessian:
                H[np.ix_(mu_idx, mu_idx)] += t / s5**2
        return g, H


def _barrier_solve(model: _Barrier, x0, t0=1.0, t_final=1e-10, shrink=0.1, max_newton=2000):
    free = model.free.reshape(-1)
    x = x0.copy()
    t = t0
    iters = 0
    while True:
        phi = model.merit(x, t)
        for _ in range(100):
            g, H = model.derivatives(x, t)
            gf = g[free]
            Hf = H[np.ix_(free, free)]
            d = np.linalg.solve(Hf, -gf)
            lam2 = float(-gf @ d)
            iters += 1
            if lam2 <= 1e-20 or iters >= max_newton:
                break
            dx = np.zeros_like(x)
            dx[free] = d
            step = 1.0
            accepted = False
            for _ls in range(60):
                xn = x + step * dx
                if model.feasible(xn):
                    phin = model.merit(xn, t)
                    slope = float(model.derivatives(xn, t, hessian=False)[0][free] @ d)
                    if slope <= 0.0 or phin <= phi - 0.25 * step * lam2:
                        accepted = True
                        break
                step *= 0.5
            if not accepted:
                break
            x = xn
            phi = phin
        if iters >= max_newton:
            raise NonConvergenceError("central barrier solve hit the Newton cap", best=x)
        if t <= t_final * (1 + 1e-12):
            break
        t = max(t * shrink, t_final)
    g, H = model.derivatives(x, t)
    gf = g[free]
    d = np.linalg.solve(H[np.ix_(free, free)], -gf)
    kkt = max(math.sqrt(max(float(-gf @ d), 0.0)), t)
    return x, t, kkt, iters


# starting points ----------------------------------------------------------------

def _cell_start_b(sp: ScaledProblem) -> np.ndarray:
    B = np.empty((sp.S, sp.N))
    for s in range(sp.S):
        cb, cq, lam, sla, a, budget, lb, mu_lo = sp.cell_data(s)
        x = feasible_start(cb, cq, lam, sla, a, budget, lb, mu_lo)
        if x is None:
            raise InfeasibleProblemError(
                f"cell {s} cannot meet its SLAs within its bandwidth budget",
                certificate={"cell": s, "min_budget_use": float(
                    np.sum(a * np.maximum(lb, cb / sla)))})
        B[s] = x[:sp.N]
    return B


def _stack(B, M):
    return np.concatenate([B, M], axis=1).reshape(-1)


def _strict_start(sp: ScaledProblem, B) -> np.ndarray | None:
    need = sp.min_mu_for_sla(B)
    if not np.all(np.isfinite(need)):
        return None
    left = sp.gamma - need.sum()
    if not left > 0:
        return None
    M = need + 0.5 * left / need.size
    return _stack(B, M)


def _phase0(sp: ScaledProblem) -> np.ndarray:
    """Bandwidths minimizing the total processing rate the SLAs require."""
    B = _cell_start_b(sp)
    M = sp.min_mu_for_sla(B) * (1 + 1e-9) + 1e-9
    free = np.ones(sp.dim, dtype=bool)
    model = _Barrier(sp, free, objective="sum_mu")
    model.use_s5 = False
    x, _, _, _ = _barrier_solve(model, _stack(B, M), t0=1.0, t_final=1e-9)
    B = x.reshape(sp.S, 2 * sp.N)[:, :sp.N]
    return B


# public solvers ---------------------------------------------------------------

def _finish(instance, sp, x, t, kkt, iters) -> CentralResult:
    alloc = sp.to_alloc(x)
    from .model import total_objective

    return CentralResult(alloc=alloc, x=x, objective=total_objective(instance, alloc),
                         fog_multiplier=_fog_multiplier(sp, x, t), kkt_residual=kkt,
                         iterations=iters)


def _fog_multiplier(sp: ScaledProblem, x, t) -> float:
    """Multiplier of the fog budget from processing-rate stationarity.

    ``t / s5`` is ill-conditioned once the budget slack shrinks to roundoff, so
    the multiplier is read off the pair whose SLA is furthest from binding,
    where ``nu = cq/u^2 (1 + t/s3) + t/s2`` involves only well-resolved slacks.
    """
    X = x.reshape(sp.S, 2 * sp.N)
    B, M = X[:, :sp.N], X[:, sp.N:]
    U = M - sp.lam
    s2 = M - sp.mu_lo
    s3 = sp.sla[None, :] - sp.cb / B - sp.cq / U
    qu = sp.cq / U**2
    i = np.unravel_index(np.argmax(s3 / sp.sla[None, :]), s3.shape)
    return float(qu[i] * (1 + t / s3[i]) + t / s2[i])


def centralized_solve(instance: ProblemInstance, t_final: float = 1e-10,
                      sp: ScaledProblem | None = None) -> CentralResult:
    """Interior-point solve of the joint slicing problem."""
    sp = sp or scale_problem(instance)
    B = _cell_start_b(sp)
    x0 = _strict_start(sp, B)
    if x0 is None:
        B = _phase0(sp)
        x0 = _strict_start(sp, B)
        if x0 is None:
            need = float(sp.min_mu_for_sla(B).sum() * sp.umu)
            raise InfeasibleProblemError(
                "SLAs need more processing than the fog budget provides",
                certificate={"min_total_mu": need, "fog_budget": instance.fog_budget_tasks_per_s})
    model = _Barrier(sp, np.ones(sp.dim, dtype=bool))
    x, t, kkt, iters = _barrier_solve(model, x0, t_final=t_final)
    return _finish(instance, sp, x, t, kkt, iters)


def baseline_allocation(instance: ProblemInstance, mode) -> dict:
    """The fixed half of a single-resource slicing baseline.

    ``bandwidth_only`` fixes processing rates proportional to arrival rates;
    ``compute_only`` fixes per-task bandwidth so each slice's share of the cell
    budget is proportional to ``d_n * reserved_sn``.
    """
    mode = SlicingMode(mode)
    if mode is SlicingMode.JOINT:
        raise ValueError("joint mode has no fixed part")
    lam = instance.arrival_rates
    if mode is SlicingMode.BANDWIDTH_ONLY:
        mu = instance.fog_budget_tasks_per_s * lam / lam.sum()
        bad = np.argwhere(mu <= lam + instance.eps)
        if len(bad):
            s, n = map(int, bad[0])
            raise InfeasibleProblemError(
                f"proportional processing rate does not exceed arrivals at cell {s}, service {n}",
                certificate={"cell": s, "service": n})
        return {"mu": mu}
    theta = np.asarray(instance.reserved)
    d = instance.task_sizes
    share = d[None, :] / np.sum(d[None, :] * theta, axis=1, keepdims=True)
    b = instance.budgets[:, None] * share
    bad = np.argwhere(b <= instance.min_bandwidth[:, None] + instance.eps)
    if len(bad):
        s, n = map(int, bad[0])
        raise InfeasibleProblemError(
            f"proportional bandwidth is below the floor at cell {s}, service {n}",
            certificate={"cell": s, "service": n})
    return {"b": b}


def solve_mode(instance: ProblemInstance, mode, t_final: float = 1e-10) -> CentralResult:
    """Centralized solve of the joint problem or of a baseline's free variables."""
    mode = SlicingMode(mode)
    if mode is SlicingMode.JOINT:
        return centralized_solve(instance, t_final=t_final)
    sp = scale_problem(instance)
    fixed = baseline_allocation(instance, mode)
    S, N = sp.S, sp.N
    free = np.zeros((S, 2 * N), dtype=bool)
    if mode is SlicingMode.BANDWIDTH_ONLY:
        M = fixed["mu"] / sp.umu
        free[:, :N] = True
        q = sp.cq / (M - sp.lam)
        room = sp.sla[None, :] - q
        if np.any(room <= 0):
            s, n = map(int, np.argwhere(room <= 0)[0])
            raise InfeasibleProblemError(
                f"fixed processing rate alone breaks the SLA at cell {s}, service {n}",
                certificate={"cell": s, "service": n})
        need = np.maximum(sp.lb, sp.cb / room)
        left = sp.budget - np.sum(sp.a * need, axis=1)
        if np.any(left <= 0):
            s = int(np.argmin(left))
            raise InfeasibleProblemError(f"cell {s} cannot meet its SLAs with fixed processing",
                                         certificate={"cell": s})
        B = need + 0.5 * left[:, None] / (N * sp.a)
    else:
        B = fixed["b"] / sp.ub
        free[:, N:] = True
        need = sp.min_mu_for_sla(B)
        if not np.all(np.isfinite(need)):
            s, n = map(int, np.argwhere(~np.isfinite(need))[0])
            raise InfeasibleProblemError(
                f"fixed bandwidth alone breaks the SLA at cell {s}, service {n}",
                certificate={"cell": s, "service": n})
        left = sp.gamma - need.sum()
        if not left > 0:
            raise InfeasibleProblemError("fixed bandwidth needs more processing than available",
                                         certificate={"min_total_mu": float(need.sum() * sp.umu)})
        M = need + 0.5 * left / need.size
    x0 = _stack(B, M)
    model = _Barrier(sp, free.reshape(-1))
    x, t, kkt, iters = _barrier_solve(model, x0, t_final=t_final)
    res = _finish(instance, sp, x, t, kkt, iters)
    if mode is SlicingMode.BANDWIDTH_ONLY:
        res.fog_multiplier = float("nan")
    return res


# brute force --------------------------------------------------------------------

MAX_GRID_DIM = 5


def grid_dimension(S: int, N: int) -> int:
    return S * (N - 1) + S * N - 1


@dataclass
class GridResult:
    alloc: AllocationMatrix
    objective: float
    history: list


def brute_force_oracle(instance: ProblemInstance, grid_resolution: int = 11,
                       spacing_tol: float = 1e-7, max_refinements: int = 60) -> GridResult:
    """Exhaustive grid search for tiny instances.

    The objective is strictly decreasing in every variable, so both budgets are
    exhausted at the optimum.  Each cell's bandwidth is parametrized by budget
    fractions and the processing rates by fractions of the total spare capacity,
    leaving ``S(N-1) + SN - 1`` free fractions.  The grid is re-centred on the
    incumbent and shrunk until its spacing drops below ``spacing_tol``.
    """
    sp = scale_problem(instance)
    S, N = sp.S, sp.N
    k_b = S * (N - 1)
    dim = grid_dimension(S, N)
    if dim > MAX_GRID_DIM:
        raise ValueError(f"grid oracle refuses {dim} free fractions (max {MAX_GRID_DIM})")
    spare = sp.gamma - sp.lam.sum()

    def evaluate(P):
        # P: (K, dim) fractions
        K = P.shape[0]
        B = np.empty((K, S, N))
        for s in range(S):
            w = P[:, s * (N - 1):(s + 1) * (N - 1)]
            last = 1.0 - w.sum(axis=1, keepdims=True)
            W = np.concatenate([w, last], axis=1)
            B[:, s, :] = W * sp.budget[s] / sp.a[s]
        v = P[:, k_b:]
        last = 1.0 - v.sum(axis=1, keepdims=True)
        Vf = np.concatenate([v, last], axis=1).reshape(K, S, N)
        U = spare * Vf
        M = sp.lam + U
        with np.errstate(divide="ignore", invalid="ignore"):
            T = sp.cb / B + sp.cq / U
            ok = (B > sp.lb) & (M > sp.mu_lo) & (U > 0) & (T <= sp.sla)
            val = np.where(ok.all(axis=(1, 2)), T.sum(axis=(1, 2)), np.inf)
        return val, B, M

    if dim == 0:
        val, B, M = evaluate(np.zeros((1, 0)))
        alloc = AllocationMatrix(B[0] * sp.ub, M[0] * sp.umu)
        return GridResult(alloc, float(val[0] * sp.ut), [float(val[0] * sp.ut)])

    res = grid_resolution
    center = np.full(dim, 0.5)
    half = np.full(dim, 0.5)
    best_val, best_p = np.inf, None
    history = []
    for _ in range(max_refinements + 1):
        axes = [np.linspace(max(c - h, 0.0), min(c + h, 1.0), res) for c, h in zip(center, half)]
        P = np.array(list(itertools.product(*axes)))
        val, _, _ = evaluate(P)
        i = int(np.argmin(val))
        if val[i] < best_val:
            best_val, best_p = float(val[i]), P[i].copy()
        history.append(best_val * sp.ut)
        spacing = np.array([(ax[-1] - ax[0]) / (res - 1) for ax in axes])
        if np.all(spacing <= spacing_tol) or best_p is None and np.all(spacing < 1e-12):
            break
        if best_p is None:
            res = res * 2 - 1
            continue
        center = best_p
        half = 3.0 * spacing
    if best_p is None:
        raise InfeasibleProblemError("grid search found no feasible point")
    _, B, M = evaluate(best_p[None, :])
    alloc = AllocationMatrix(B[0] * sp.ub, M[0] * sp.umu)
    return GridResult(alloc, best_val * sp.ut, history)
