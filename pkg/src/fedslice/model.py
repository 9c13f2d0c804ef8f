"""Problem data model for joint bandwidth / fog-compute slicing.

Physical units throughout: bits, Hz, tasks/s, seconds, watts.  Solvers work on a
nondimensionalized copy of the problem (:class:`ScaledProblem`); allocations are
always reported back in physical units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InfeasibleQueueError

DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class ServiceClass:
    id: int
    task_size_bits: float
    latency_sla_s: float
    name: str = ""

    def __post_init__(self):
        if not self.task_size_bits > 0:
            raise ValueError(f"service {self.id}: task_size_bits must be > 0")
        if not self.latency_sla_s > 0:
            raise ValueError(f"service {self.id}: latency_sla_s must be > 0")


@dataclass(frozen=True)
class ChannelStats:
    """Per-(cell, service) traffic and radio parameters."""

    arrival_rate: float
    channel_gain: float
    tx_power: float
    noise: float

    def __post_init__(self):
        if not self.arrival_rate >= 0:
            raise ValueError("arrival_rate must be >= 0")
        if not self.noise > 0:
            raise ValueError("noise must be > 0")
        if not self.channel_gain * self.tx_power / self.noise > 0:
            raise ValueError("SNR term must be > 0")

    @property
    def snr(self) -> float:
        return self.channel_gain * self.tx_power / self.noise


@dataclass(frozen=True)
class CellConfig:
    id: int
    bandwidth_budget_hz: float
    min_slice_bandwidth_hz: float
    per_service: tuple[ChannelStats, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_service", tuple(self.per_service))
        if not self.bandwidth_budget_hz > 0:
            raise ValueError(f"cell {self.id}: bandwidth_budget_hz must be > 0")
        if not 0 < self.min_slice_bandwidth_hz < self.bandwidth_budget_hz:
            raise ValueError(
                f"cell {self.id}: need 0 < min_slice_bandwidth_hz < bandwidth_budget_hz"
            )


@dataclass(frozen=True)
class ProblemInstance:
    """A full slicing problem.

    ``reserved`` holds the per-(cell, service) provisioning counts derived from
    the Poisson quantile at ``confidence``; it is computed once on construction
    and treated as a constant by every solver.
    """

    services: tuple[ServiceClass, ...]
    cells: tuple[CellConfig, ...]
    fog_budget_tasks_per_s: float
    confidence: float
    eps: float = DEFAULT_EPS
    reserved: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "services", tuple(self.services))
        object.__setattr__(self, "cells", tuple(self.cells))
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        n = len(self.services)
        for c in self.cells:
            if len(c.per_service) != n:
                raise ValueError(f"cell {c.id}: expected {n} per_service entries")
        total = float(self.arrival_rates.sum())
        if not self.fog_budget_tasks_per_s > total:
            raise ValueError(
                f"fog budget {self.fog_budget_tasks_per_s} must exceed total arrival rate {total}"
            )
        res = np.array(
            [[max(1, poisson_quantile(self.confidence, ch.arrival_rate)) for ch in c.per_service]
             for c in self.cells],
            dtype=float,
        )
        res.setflags(write=False)
        object.__setattr__(self, "reserved", res)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_services(self) -> int:
        return len(self.services)

    @property
    def arrival_rates(self) -> np.ndarray:
        return np.array([[ch.arrival_rate for ch in c.per_service] for c in self.cells], dtype=float)

    @property
    def spectral_efficiency(self) -> np.ndarray:
        """log2(1 + SNR) per (cell, service)."""
        return np.array([[math.log2(1.0 + ch.snr) for ch in c.per_service] for c in self.cells])

    @property
    def task_sizes(self) -> np.ndarray:
        return np.array([s.task_size_bits for s in self.services], dtype=float)

    @property
    def slas(self) -> np.ndarray:
        return np.array([s.latency_sla_s for s in self.services], dtype=float)

    @property
    def budgets(self) -> np.ndarray:
        return np.array([c.bandwidth_budget_hz for c in self.cells], dtype=float)

    @property
    def min_bandwidth(self) -> np.ndarray:
        return np.array([c.min_slice_bandwidth_hz for c in self.cells], dtype=float)

    def replace(self, **changes) -> "ProblemInstance":
        kw = dict(services=self.services, cells=self.cells,
                  fog_budget_tasks_per_s=self.fog_budget_tasks_per_s,
                  confidence=self.confidence, eps=self.eps)
        kw.update(changes)
        return ProblemInstance(**kw)

    def permuted(self, order: Sequence[int]) -> "ProblemInstance":
        return self.replace(cells=tuple(self.cells[i] for i in order))

    def with_bandwidth(self, beta_hz: float) -> "ProblemInstance":
        cells = tuple(
            CellConfig(c.id, beta_hz, c.min_slice_bandwidth_hz, c.per_service) for c in self.cells
        )
        return self.replace(cells=cells)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "services": [
                {"id": s.id, "name": s.name, "task_size_bits": s.task_size_bits,
                 "latency_sla_s": s.latency_sla_s}
                for s in self.services
            ],
            "cells": [
                {
                    "id": c.id,
                    "bandwidth_budget_hz": c.bandwidth_budget_hz,
                    "min_slice_bandwidth_hz": c.min_slice_bandwidth_hz,
                    "per_service": [
                        {"arrival_rate": ch.arrival_rate, "channel_gain": ch.channel_gain,
                         "tx_power": ch.tx_power, "noise": ch.noise}
                        for ch in c.per_service
                    ],
                }
                for c in self.cells
            ],
            "fog_budget": self.fog_budget_tasks_per_s,
            "confidence": self.confidence,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        services = [
            ServiceClass(int(s["id"]), float(s["task_size_bits"]), float(s["latency_sla_s"]),
                         s.get("name", ""))
            for s in d["services"]
        ]
        cells = [
            CellConfig(
                int(c["id"]), float(c["bandwidth_budget_hz"]), float(c["min_slice_bandwidth_hz"]),
                tuple(ChannelStats(float(p["arrival_rate"]), float(p["channel_gain"]),
                                   float(p["tx_power"]), float(p["noise"]))
                      for p in c["per_service"]),
            )
            for c in d["cells"]
        ]
        return cls(services, cells, float(d["fog_budget"]), float(d["confidence"]),
                   float(d.get("eps", DEFAULT_EPS)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ProblemInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AllocationMatrix:
    """Per-(cell, service) bandwidth per task unit (Hz) and processing rate (tasks/s)."""

    b: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        mu = np.array(self.mu, dtype=float)
        if b.shape != mu.shape or b.ndim != 2:
            raise ValueError("b and mu must be matching S x N matrices")
        b.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "mu", mu)

    def permuted(self, order: Sequence[int]) -> "AllocationMatrix":
        order = list(order)
        return AllocationMatrix(self.b[order], self.mu[order])


# delay model ----------------------------------------------------------------

def communication_delay(d_bits, b_hz, gain, power, noise):
    """Per-task transport time ``d / (b * log2(1 + gain*power/noise))``."""
    if not b_hz > 0:
        raise DomainError(f"bandwidth must be positive, got {b_hz}")
    if not noise > 0:
        raise DomainError(f"noise must be positive, got {noise}")
    snr = gain * power / noise
    if not snr > 0:
        raise DomainError(f"SNR term must be positive, got {snr}")
    return d_bits / (b_hz * math.log2(1.0 + snr))


def queuing_delay(mu, lam):
    """M/M/1 sojourn time ``1 / (mu - lam)``; raises if the queue is unstable."""
    if lam < 0:
        raise DomainError(f"arrival rate must be >= 0, got {lam}")
    if not mu > lam:
        raise InfeasibleQueueError(f"unstable queue: mu={mu} <= lambda={lam}")
    return 1.0 / (mu - lam)


def response_time(instance: ProblemInstance, alloc: AllocationMatrix, s: int, n: int) -> float:
    ch = instance.cells[s].per_service[n]
    p = communication_delay(instance.services[n].task_size_bits, alloc.b[s, n],
                            ch.channel_gain, ch.tx_power, ch.noise)
    return p + queuing_delay(alloc.mu[s, n], ch.arrival_rate)


def response_times(instance: ProblemInstance, alloc: AllocationMatrix) -> np.ndarray:
    """Vectorized ``t_sn`` matrix; ``inf`` where a delay term is undefined."""
    lam = instance.arrival_rates
    with np.errstate(divide="ignore", invalid="ignore"):
        p = instance.task_sizes[None, :] / (alloc.b * instance.spectral_efficiency)
        q = 1.0 / (alloc.mu - lam)
    t = p + q
    bad = (alloc.b <= 0) | (alloc.mu <= lam) | ~np.isfinite(t)
    return np.where(bad, np.inf, t)


def total_objective(instance: ProblemInstance, alloc: AllocationMatrix) -> float:
    total = 0.0
    for s in range(instance.num_cells):
        for n in range(instance.num_services):
            total += response_time(instance, alloc, s, n)
    return total


# demand quantile ------------------------------------------------------------

def poisson_quantile(theta: float, lam: float) -> int:
    """Smallest m with P(Poisson(lam) <= m) >= theta.

    The CDF is accumulated in log space around the mode so large rates neither
    underflow ``exp(-lam)`` nor lose the tail.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        return 0
    if lam < 600:
        pmf = math.exp(-lam)
        cdf = pmf
        m = 0
        while cdf < theta:
            m += 1
            pmf *= lam / m
            cdf += pmf
            if pmf == 0.0 and m > lam:
                break
        return m
    # pmf(k) / pmf(mode), summed from a point far in the lower tail
    mode = int(math.floor(lam))
    log_mode = mode * math.log(lam) - lam - math.lgamma(mode + 1)
    width = int(40 * math.sqrt(lam)) + 10
    lo = max(0, mode - width)
    hi = mode + width
    ks = np.arange(lo, hi + 1)
    logp = ks * math.log(lam) - lam - np.array([math.lgamma(k + 1) for k in ks])
    w = np.exp(logp - log_mode)
    scale = math.exp(log_mode)
    cdf = np.cumsum(w) * scale
    idx = int(np.searchsorted(cdf, theta, side="left"))
    return int(lo + min(idx, len(ks) - 1))


def poisson_cdf_direct(m: int, lam: float) -> float:
    """Direct term-by-term CDF summation; used as an independent check."""
    total = 0.0
    for k in range(m + 1):
        total += math.exp(k * math.log(lam) - lam - math.lgamma(k + 1)) if lam > 0 else float(k == 0)
    return total


# feasibility ----------------------------------------------------------------

@dataclass
class FeasibilityReport:
    min_bandwidth: bool
    queue_stable: bool
    sla: bool
    bandwidth_budget: bool
    fog_budget: bool
    worst_violation: float
    details: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all((self.min_bandwidth, self.queue_stable, self.sla,
                    self.bandwidth_budget, self.fog_budget))


def feasibility_check(instance: ProblemInstance, alloc: AllocationMatrix,
                      tol: float = 1e-9) -> FeasibilityReport:
    """Check every constraint family; violations are relative to each constraint's scale.

    Strict inequalities use the instance's ``eps`` margin, so ``b == b0`` is a
    violation of the minimum-bandwidth family.
    """
    eps = instance.eps
    b0 = instance.min_bandwidth[:, None]
    lam = instance.arrival_rates
    v_b = np.max((b0 + eps - alloc.b) / b0)
    v_mu = np.max((lam + eps - alloc.mu) / np.maximum(lam, 1.0))
    t = response_times(instance, alloc)
    v_t = np.max((t - instance.slas[None, :]) / instance.slas[None, :])
    used = (instance.reserved * alloc.b).sum(axis=1)
    v_bw = np.max((used - instance.budgets) / instance.budgets)
    gamma = instance.fog_budget_tasks_per_s
    v_g = (alloc.mu.sum() - gamma) / gamma
    viol = dict(min_bandwidth=float(v_b), queue_stable=float(v_mu), sla=float(v_t),
                bandwidth_budget=float(v_bw), fog_budget=float(v_g))
    worst = max(0.0, *viol.values())
    if not np.isfinite(worst):
        worst = math.inf
    # the strict families are enforced through the eps margin itself; tol only
    # absorbs roundoff on the closed constraints
    return FeasibilityReport(
        min_bandwidth=bool(np.all(alloc.b >= b0 + eps)),
        queue_stable=bool(np.all(alloc.mu >= lam + eps)),
        sla=bool(v_t <= tol),
        bandwidth_budget=bool(v_bw <= tol),
        fog_budget=bool(v_g <= tol),
        worst_violation=worst,
        details=viol,
    )


# nondimensionalized problem ---------------------------------------------------

@dataclass(frozen=True)
class ScaledProblem:
    """Problem data in solver coordinates.

    ``b = ub * b_scaled``, ``mu = umu * mu_scaled`` and ``t = ut * t_scaled``.
    Bandwidth units are per (cell, service); the processing-rate unit is shared so
    the fog budget stays a plain sum.  Per cell the stacked vector is
    ``[b_1..b_N, mu_1..mu_N]``.
    """

    cb: np.ndarray      # S x N, scaled comm coefficient: p = cb / b
    cq: float           # scaled queue coefficient: q = cq / (mu - lam)
    lam: np.ndarray     # S x N
    sla: np.ndarray     # N
    a: np.ndarray       # S x N, budget row weights
    budget: np.ndarray  # S
    lb: np.ndarray      # S x N, lower bound on b
    mu_lo: np.ndarray   # S x N, lower bound on mu
    gamma: float
    ub: np.ndarray
    umu: float
    ut: float

    @property
    def S(self) -> int:
        return self.cb.shape[0]

    @property
    def N(self) -> int:
        return self.cb.shape[1]

    @property
    def dim(self) -> int:
        return 2 * self.S * self.N

    def cell_data(self, s: int):
        return (self.cb[s], self.cq, self.lam[s], self.sla, self.a[s], float(self.budget[s]),
                self.lb[s], self.mu_lo[s])

    def to_stacked(self, alloc: AllocationMatrix) -> np.ndarray:
        b = alloc.b / self.ub
        mu = alloc.mu / self.umu
        return np.concatenate([b, mu], axis=1).reshape(-1)

    def to_alloc(self, x: np.ndarray) -> AllocationMatrix:
        blocks = np.asarray(x, dtype=float).reshape(self.S, 2 * self.N)
        return AllocationMatrix(blocks[:, :self.N] * self.ub, blocks[:, self.N:] * self.umu)

    def objective(self, x: np.ndarray) -> float:
        """Scaled total objective; ``inf`` outside the delay domain."""
        blocks = np.asarray(x, dtype=float).reshape(self.S, 2 * self.N)
        b = blocks[:, :self.N]
        u = blocks[:, self.N:] - self.lam
        if np.any(b <= 0) or np.any(u <= 0):
            return math.inf
        return float(np.sum(self.cb / b) + np.sum(self.cq / u))

    def min_mu_for_sla(self, b: np.ndarray) -> np.ndarray:
        """Smallest mu meeting the SLA for bandwidth ``b`` (S x N); inf where impossible."""
        room = self.sla[None, :] - self.cb / b
        with np.errstate(divide="ignore"):
            need = np.where(room > 0, self.cq / np.where(room > 0, room, 1.0), np.inf)
        return np.maximum(self.lam + need, self.mu_lo)


def scale_problem(instance: ProblemInstance) -> ScaledProblem:
    S, N = instance.num_cells, instance.num_services
    theta = np.asarray(instance.reserved)
    beta = instance.budgets
    lam = instance.arrival_rates
    gamma = instance.fog_budget_tasks_per_s
    eps = instance.eps
    r = instance.spectral_efficiency
    d = instance.task_sizes

    ub = beta[:, None] / theta.sum(axis=1, keepdims=True) * np.ones((S, N))
    umu = (gamma - lam.sum()) / (S * N)
    # time unit: mean response time at the equal-share reference point
    p_ref = d[None, :] / (ub * r)
    ut = float(np.mean(p_ref + 1.0 / umu))

    return ScaledProblem(
        cb=p_ref / ut,
        cq=1.0 / (umu * ut),
        lam=lam / umu,
        sla=instance.slas / ut,
        a=theta * ub / beta[:, None],
        budget=np.ones(S),
        lb=(instance.min_bandwidth[:, None] + eps) / ub,
        mu_lo=(lam + eps) / umu,
        gamma=gamma / umu,
        ub=ub,
        umu=float(umu),
        ut=ut,
    )
