"""Per-base-station prox subproblem shared by both ADMM drivers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DomainError, InfeasibleCellError, NonConvergenceError
from .model import ScaledProblem


@dataclass(frozen=True)
class LocalProblem:
    """One cell's data in solver coordinates plus the prox weight and center.

    Minimizes ``sum_n t_n(b_n, mu_n) + rho/2 ||x - center||^2`` over the cell's
    feasible set, with ``x = [b_1..b_N, mu_1..mu_N]``.
    """

    cb: np.ndarray
    cq: float
    lam: np.ndarray
    sla: np.ndarray
    a: np.ndarray
    budget: float
    lb: np.ndarray
    mu_lo: np.ndarray
    rho: float
    center: np.ndarray
    cell: int = -1

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        n = len(self.cb)
        if len(self.center) != 2 * n:
            raise ValueError(f"center must have length {2 * n}")

    @classmethod
    def for_cell(cls, sp: ScaledProblem, s: int, rho: float, center) -> "LocalProblem":
        cb, cq, lam, sla, a, budget, lb, mu_lo = sp.cell_data(s)
        return cls(cb, cq, lam, sla, a, budget, lb, mu_lo, float(rho),
                   np.asarray(center, dtype=float), cell=s)

    @property
    def N(self) -> int:
        return len(self.cb)

    def with_center(self, center, rho=None) -> "LocalProblem":
        return LocalProblem(self.cb, self.cq, self.lam, self.sla, self.a, self.budget, self.lb,
                            self.mu_lo, self.rho if rho is None else float(rho),
                            np.asarray(center, dtype=float), self.cell)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        N = self.N
        b, u = x[:N], x[N:] - self.lam
        if np.any(b <= 0) or np.any(u <= 0):
            return np.inf
        d = x - self.center
        return float(np.sum(self.cb / b) + np.sum(self.cq / u) + 0.5 * self.rho * d @ d)

    def is_feasible(self, x, slack: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        N = self.N
        b, mu = x[:N], x[N:]
        u = mu - self.lam
        if np.any(b < self.lb - slack) or np.any(mu < self.mu_lo - slack) or np.any(u <= 0):
            return False
        if np.any(self.cb / b + self.cq / u > self.sla + slack):
            return False
        return float(self.a @ b) <= self.budget + slack


@dataclass(frozen=True)
class LocalSolution:
    x: np.ndarray
    kkt_residual: float
    iterations: int


def local_prox(problem: LocalProblem, tol: float = 1e-8, t_final: float = 1e-9,
               max_newton: int = 1000) -> LocalSolution:
    """Minimize the cell's response time plus the prox term over its feasible set.

    Raises :class:`InfeasibleCellError` when the cell cannot meet its SLAs within
    its bandwidth budget, and :class:`NonConvergenceError` (carrying the last
    iterate) when the Newton budget runs out.
    """
    p = problem
    x, kkt, iters, status = kernels.solve_local(
        p.cb, p.cq, p.lam, p.sla, p.a, p.budget, p.lb, p.mu_lo, p.rho, p.center,
        t_final=t_final, tol=tol, max_newton=max_newton)
    if status == kernels.INFEASIBLE:
        raise InfeasibleCellError(f"cell {p.cell}: feasible set is empty", cell=p.cell)
    sol = LocalSolution(x, kkt, iters)
    if status != kernels.OK:
        raise NonConvergenceError(
            f"cell {p.cell}: local solve stopped at KKT residual {kkt:.3g}", best=sol)
    return sol


def merit_history(problem: LocalProblem, t_final: float = 1e-9) -> list[tuple[int, float]]:
    """(barrier stage, merit) after every accepted Newton step, from the reference kernel."""
    p = problem
    record: list[tuple[int, float]] = []
    kernels.reference_solve_local(p.cb, p.cq, p.lam, p.sla, p.a, p.budget, p.lb, p.mu_lo,
                                  p.rho, p.center, t_final=t_final, record=record)
    return record


def local_objective_gradient(problem: LocalProblem, x) -> np.ndarray:
    """Analytic gradient of the cell objective plus prox term."""
    x = np.asarray(x, dtype=float)
    N = problem.N
    b = x[:N]
    u = x[N:] - problem.lam
    if np.any(b <= 0):
        raise DomainError("bandwidth must be positive")
    if np.any(u <= 0):
        raise DomainError("processing rate must exceed the arrival rate")
    g = np.empty(2 * N)
    g[:N] = -problem.cb / b**2
    g[N:] = -problem.cq / u**2
    return g + problem.rho * (x - problem.center)
