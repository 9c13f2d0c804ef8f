"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line to the terminal
(even under output capture) and then asserts.  Run this file alone with
``pytest tests/test_acceptance.py -v``.
"""

import filecmp
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedslice import admm_async as aa
from fedslice import admm_sync as ad
from fedslice import cli
from fedslice.fedsim import TimingModel, simulate_async, simulate_naive_async, simulate_sync
from fedslice.local import LocalProblem, local_objective_gradient
from fedslice.model import poisson_quantile, scale_problem
from fedslice.oracle import (MAX_GRID_DIM, brute_force_oracle, centralized_solve,
                             grid_dimension)
from fedslice.scenario import (random_instance, run_naive_demo, run_race, run_sweep,
                               shipped_sweeps, stress_instance, stress_timing)
from fedslice import kernels

REL = 1e-3


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def oracle_instances():
    """20 random feasible instances: ten with S = 2 and ten with S = 5, N = 2."""
    out = []
    for i in range(20):
        inst = random_instance(100 + i, S=2 if i < 10 else 5, N=2)
        out.append((inst, centralized_solve(inst).objective))
    return out


@pytest.fixture(scope="module")
def lyapunov_fixtures():
    from fedslice.scenario import ScenarioSpec, generate_scenario
    insts = [random_instance(s, S=2, N=2) for s in range(3)]
    insts += [random_instance(7, S=5, N=2), generate_scenario(ScenarioSpec())]
    out = []
    for inst in insts:
        sp = scale_problem(inst)
        c = centralized_solve(inst, t_final=1e-12, sp=sp)
        r = ad.run(inst, rho=1.0, max_iter=200, keep_states=True, t_final=1e-12,
                   eps_primal=0.0, eps_dual=0.0, sp=sp)
        out.append((sp, c, r))
    return out


@pytest.fixture(scope="module")
def default_sweeps(base_scenario):
    return [run_sweep(base_scenario, spec) for spec in shipped_sweeps()]


# 1 -------------------------------------------------------------------------------------

def test_c1_sync_oracle_equivalence(oracle_instances, report):
    worst_c = worst_g = 0.0
    worst_iter = worst_time = 0
    ok = True
    for inst, ref in oracle_instances:
        t0 = time.perf_counter()
        r = ad.run(inst, max_iter=500)
        elapsed = time.perf_counter() - t0
        ok &= r.converged and r.iterations <= 500 and elapsed <= 10.0
        worst_c = max(worst_c, abs(r.objective - ref) / ref)
        if grid_dimension(inst.num_cells, inst.num_services) <= MAX_GRID_DIM:
            g = brute_force_oracle(inst).objective
            worst_g = max(worst_g, abs(r.objective - g) / g)
        worst_iter, worst_time = max(worst_iter, r.iterations), max(worst_time, elapsed)
    ok &= worst_c <= REL and worst_g <= REL
    report(1, ok, f"max rel err vs central {worst_c:.2e}, vs grid {worst_g:.2e}, "
                  f"max iterations {worst_iter}, max time {worst_time:.2f} s")
    assert ok


# 2 -------------------------------------------------------------------------------------

def test_c2_async_oracle_equivalence(oracle_instances, report):
    fails, worst = [], 0.0
    for i, (inst, ref) in enumerate(oracle_instances):
        sp = scale_problem(inst)
        for tau in (0, 5):
            hits = 0
            for seed in range(10):
                a = aa.run_async(inst, alpha=0.5, tau=tau, staleness="uniform", seed=seed,
                                 sp=sp)
                err = abs(a.objective - ref) / ref
                worst = max(worst, err)
                hits += a.converged and err <= REL
            if hits < 10:
                fails.append((i, tau, hits))
    ok = not fails
    report(2, ok, f"40 (instance, tau) pairs at 10/10 seeds; max rel err {worst:.2e}; "
                  f"short pairs {fails}")
    assert ok


# 3 -------------------------------------------------------------------------------------

def test_c3_lyapunov_monotone(lyapunov_fixtures, report):
    worst = -math.inf
    for sp, c, r in lyapunov_fixtures:
        rho = r.state.rho
        lam_star = (c.fog_multiplier / rho) * ad.halfspace_matrix((sp.S, sp.N))[0]
        # scaled dual: (1/rho)|y - y*|^2 = rho |lam - lam*|^2
        I = np.array([rho * (np.sum((s.lam - lam_star) ** 2) + np.sum((s.z - c.x) ** 2))
                      for s in r.states[:201]])
        worst = max(worst, float(np.max(np.diff(I))))
    ok = worst <= 1e-9
    report(3, ok, f"largest increase of I^k over {len(lyapunov_fixtures)} fixtures: {worst:.2e}")
    assert ok


# 4 -------------------------------------------------------------------------------------

def test_c4_objective_error_times_k_bounded(lyapunov_fixtures, report):
    ok, rows = True, []
    for sp, c, r in lyapunov_fixtures:
        f = r.trace.column("objective")
        k = np.arange(1, len(f) + 1)
        ke = k * np.abs(f - c.objective) / c.objective
        head = float(ke[9:100].max())
        tail = float(ke[99:200].max()) if len(f) >= 100 else 0.0
        final = abs(f[-1] - c.objective) / c.objective
        ok &= tail <= head and final <= REL
        rows.append(f"{head:.1e}/{tail:.1e}")
    report(4, ok, "max k*err on [10,100] / [100,200]: " + ", ".join(rows))
    assert ok


# 5 -------------------------------------------------------------------------------------

def test_c5_naive_async_diverges(report):
    inst = stress_instance()
    sp = scale_problem(inst)
    grew, async_ok = 0, 0
    for seed in range(10):
        d = run_naive_demo(inst, stress_timing(seed), seed=seed, sp=sp)
        assert d.naive.event_log[0].time >= 0
        grew += d.residual_grew
        async_ok += d.async_.converged
    ok = grew >= 8 and async_ok == 10
    report(5, ok, f"naive residual grew in {grew}/10 seeds, async converged in {async_ok}/10")
    assert ok


# 6 -------------------------------------------------------------------------------------

def test_c6_slicing_dominance(default_sweeps, report):
    worst, n = -math.inf, 0
    ok = True
    for res in default_sweeps:
        ok &= res.all_converged
        j = res.objectives("joint")
        best = np.minimum(res.objectives("bandwidth_only"), res.objectives("compute_only"))
        worst = max(worst, float(np.max(j - best)))
        n += len(j)
    ok &= worst <= 1e-6
    report(6, ok, f"{n} sweep points, max joint - best baseline {worst:.3g} s")
    assert ok


# 7 -------------------------------------------------------------------------------------

def test_c7_trends_and_crossover(default_sweeps, report):
    by_axis = {r.spec.axis: r for r in default_sweeps}
    dj = {a: np.diff(r.objectives("joint")) for a, r in by_axis.items()}
    sizes = {a: len(r.spec.points) for a, r in by_axis.items()}
    cross = by_axis["bandwidth"].crossover()
    ok = (all(n >= 6 for n in sizes.values()) and np.all(dj["bandwidth"] <= 0)
          and np.all(dj["fog_power"] <= 0) and np.all(dj["confidence"] >= 0)
          and cross is not None)
    report(7, ok, f"grid sizes {sizes}, bandwidth crossover at "
                  f"{cross / 1e6 if cross else None} MHz")
    assert ok


# 8 -------------------------------------------------------------------------------------

def test_c8_async_speedup(base_scenario, report):
    sp = scale_problem(base_scenario)
    ref = centralized_solve(base_scenario, sp=sp).objective
    st_, at_, idle_ok = [], [], True
    for seed in range(10):
        r = run_race(base_scenario, TimingModel.with_stragglers(10, slow=(0,), factor=10.0, seed=seed),
                     reference=ref, sp=sp)
        assert r.converged
        st_.append(r.sync_time)
        at_.append(r.async_time)
        idle_ok &= bool(np.all(r.sync.idle_time[1:] > 0) and np.all(r.async_.idle_time == 0))
    ms, ma = float(np.mean(st_)), float(np.mean(at_))
    ok = ma < ms and idle_ok
    report(8, ok, f"mean simulated time to 1e-3: sync {ms:.2f}, async {ma:.2f} over 10 seeds; "
                  f"idle conditions hold: {idle_ok}")
    assert ok


# 9 -------------------------------------------------------------------------------------

def _direct_quantile(theta, lam):
    cdf, k = 0.0, 0
    while True:
        cdf += math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))
        if cdf >= theta:
            return k
        k += 1


_projection_checks = {"n": 0, "bad": 0}


@given(arrays(float, 8, elements=st.floats(-1e3, 1e3)), st.floats(-100.0, 100.0))
def _projection_property(v, gamma):
    A = ad.halfspace_matrix((2, 2))
    z = ad.project_halfspace(v, A, gamma)
    _projection_checks["n"] += 1
    if not (float(A[0] @ z) <= gamma + 1e-9
            and np.array_equal(ad.project_halfspace(z, A, gamma), z)):
        _projection_checks["bad"] += 1


def test_c9_numerical_kernels(report):
    sp = scale_problem(random_instance(3, S=3, N=2))
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(100):
        lp = LocalProblem.for_cell(sp, i % sp.S, float(rng.uniform(0.1, 10)),
                                   rng.uniform(0.5, 2.0, 2 * sp.N))
        x0 = np.asarray(kernels.feasible_start(lp.cb, lp.cq, lp.lam, lp.sla, lp.a, lp.budget,
                                               lp.lb, lp.mu_lo))
        x = x0 * rng.uniform(0.9, 1.1, size=x0.shape)
        while not lp.is_feasible(x):
            x = x0 * rng.uniform(0.9, 1.1, size=x0.shape)
        g = local_objective_gradient(lp, x)
        fd = np.empty_like(x)
        for j in range(len(x)):
            e = np.zeros_like(x)
            e[j] = 1e-6 * abs(x[j])
            fd[j] = (lp.objective(x + e) - lp.objective(x - e)) / (2 * e[j])
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1e-12))))

    lams = np.concatenate([np.geomspace(0.05, 1000.0, 19), [1000.0]])
    thetas = (0.05, 0.2, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999, 0.9999)
    mismatches = sum(poisson_quantile(t, lam) != _direct_quantile(t, lam)
                     for lam in lams for t in thetas)

    _projection_property()
    ok = worst <= 1e-5 and mismatches == 0 and _projection_checks["bad"] == 0
    report(9, ok, f"max gradient rel err {worst:.2e} on 100 points; quantile mismatches "
                  f"{mismatches}/200; projection failures {_projection_checks['bad']}/"
                  f"{_projection_checks['n']}")
    assert ok


# 10 ------------------------------------------------------------------------------------

def _run_all(inst, seed):
    sp = scale_problem(inst)
    tm = TimingModel.with_stragglers(inst.num_cells, slow=(0,), factor=5.0, seed=seed)
    c = centralized_solve(inst, sp=sp)
    s = ad.run(inst, sp=sp)
    a = aa.run_async(inst, tau=3, seed=seed, sp=sp)
    ss = simulate_sync(inst, tm, sp=sp)
    sa = simulate_async(inst, tm, tau=2, sp=sp)
    sn = simulate_naive_async(inst, tm, max_updates=100, sp=sp)
    return [c.x.tobytes(), s.trace.deterministic_rows(), s.alloc.b.tobytes(),
            a.trace.rows, a.alloc.mu.tobytes(),
            ss.trace.rows, ss.event_log, sa.trace.rows, sa.event_log, sn.trace.rows,
            sn.event_log, sn.alloc.b.tobytes()]


def test_c10_determinism(tmp_path, report):
    inst = random_instance(11, S=3, N=2)
    same_runs = _run_all(inst, 5) == _run_all(inst, 5)

    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"scenario": {"num_cells": 3}, "race": {"seeds": [0, 1]}}')
    codes = []
    for d in ("a", "b"):
        codes.append(cli.main(["race", str(cfg), "--seed", "4", "--out-dir", str(tmp_path / d)]))
    left, right = tmp_path / "a" / "race", tmp_path / "b" / "race"
    files = sorted(p.name for p in left.glob("*.csv"))
    match, mismatch, errors = filecmp.cmpfiles(left, right, files, shallow=False)
    same_cli = codes == [0, 0] and not mismatch and not errors and len(match) == len(files) > 0
    ok = same_runs and same_cli
    report(10, ok, f"solver/simulator outputs identical: {same_runs}; CLI race CSVs identical: "
                   f"{len(match)}/{len(files)}")
    assert ok
