import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedslice import admm_sync as ad
from fedslice.errors import InfeasibleCellError
from fedslice.model import CellConfig, feasibility_check, scale_problem
from fedslice.oracle import brute_force_oracle, centralized_solve
from fedslice.trace import SYNC_COLUMNS


def test_halfspace_matrix_examples():
    assert ad.halfspace_matrix((1, 1)).tolist() == [[0.0, 1.0]]
    A = ad.halfspace_matrix((2, 1))
    x = np.array([5.0, 2.0, 7.0, 3.0])  # [b11, mu11, b21, mu21]
    assert (A @ x).item() == 5.0
    for S, N in [(1, 1), (2, 2), (3, 2), (10, 2)]:
        A = ad.halfspace_matrix((S, N))
        assert (A @ A.T).item() == S * N


def test_z_update_examples():
    A = ad.halfspace_matrix((1, 1))
    gamma = 10.0
    st_in = ad.SyncState(np.array([1.0, 3.0]), np.zeros(2), np.zeros(2), 1.0)
    assert np.array_equal(ad.z_update(st_in, A, gamma), [1.0, 3.0])
    st_out = ad.SyncState(np.array([4.0, gamma + 2.0]), np.zeros(2), np.zeros(2), 1.0)
    z = ad.z_update(st_out, A, gamma)
    assert z[1] == pytest.approx(gamma) and z[0] == 4.0


@given(arrays(float, 8, elements=st.floats(-1e3, 1e3)), st.floats(-100, 100))
def test_projection_idempotent_and_feasible(v, gamma):
    A = ad.halfspace_matrix((2, 2))
    z = ad.project_halfspace(v, A, gamma)
    assert (A @ z).item() <= gamma
    assert np.array_equal(ad.project_halfspace(z, A, gamma), z)
    assert np.array_equal(z[[0, 1, 4, 5]], v[[0, 1, 4, 5]])


def test_dual_update_examples():
    rng = np.random.default_rng(0)
    x, lam = rng.normal(size=6), rng.normal(size=6)
    assert np.array_equal(ad.dual_update(ad.SyncState(x, x.copy(), lam, 1.0)), lam)
    z = rng.normal(size=6)
    assert np.array_equal(ad.dual_update(ad.SyncState(x, z, np.zeros(6), 1.0)), x - z)
    got = ad.dual_update(ad.SyncState(x, z, lam, 1.0))
    assert all(got[i] == lam[i] + x[i] - z[i] for i in range(6))


def test_state_invariants():
    with pytest.raises(ValueError):
        ad.SyncState(np.zeros(2), np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        ad.SyncState(np.zeros(2), np.zeros(3), np.zeros(2), 1.0)


def test_iterate_order_independent(fixture_2x2):
    sp = scale_problem(fixture_2x2)
    x0 = ad.initial_point(sp)
    s0 = ad.SyncState(x0, x0.copy(), np.zeros(sp.dim), 1.0)
    a, ra, _ = ad.iterate(s0, sp, order=[0, 1])
    b, rb, _ = ad.iterate(s0, sp, order=[1, 0])
    assert np.array_equal(a.x, b.x) and np.array_equal(a.z, b.z) and np.array_equal(a.lam, b.lam)
    assert (ra.primal, ra.dual) == (rb.primal, rb.dual)


def test_iterate_from_saddle_point(fixture_2x2_solved):
    inst, sp, c = fixture_2x2_solved
    A = ad.halfspace_matrix((sp.S, sp.N))
    lam = (c.fog_multiplier / 1.0) * A[0]
    s0 = ad.SyncState(c.x.copy(), c.x.copy(), lam, 1.0)
    _, res, _ = ad.iterate(s0, sp, A, t_final=1e-12)
    assert res.primal <= 1e-6 and res.dual <= 1e-6


def test_infeasible_cell_propagates_with_id(fixture_2x2):
    cells = list(fixture_2x2.cells)
    c = cells[1]
    cells[1] = CellConfig(c.id, 5e3, c.min_slice_bandwidth_hz, c.per_service)
    with pytest.raises(InfeasibleCellError) as err:
        ad.run(fixture_2x2.replace(cells=tuple(cells)))
    assert err.value.cell == 1


def test_primal_residual_trend(fixture_2x2):
    tr = ad.run(fixture_2x2, max_iter=50).trace.column("primal")
    assert tr[-1] < tr[0]


def test_run_matches_grid_oracle_on_2x2(fixture_2x2):
    r = ad.run(fixture_2x2, eps_primal=1e-6, eps_dual=1e-6)
    assert r.converged
    g = brute_force_oracle(fixture_2x2)
    assert r.objective == pytest.approx(g.objective, rel=1e-3)


def test_run_default_scenario_converges(base_scenario):
    r = ad.run(base_scenario)
    assert r.converged and r.iterations <= 500
    assert feasibility_check(base_scenario, r.alloc).feasible
    A = ad.halfspace_matrix(base_scenario)
    assert (A @ r.state.z).item() <= scale_problem(base_scenario).gamma + 1e-9


def test_infinite_tolerance_stops_after_one_iteration(fixture_2x2):
    r = ad.run(fixture_2x2, eps_primal=math.inf, eps_dual=math.inf)
    assert r.iterations == 1 and r.converged


def test_iteration_cap_flags_non_convergence(fixture_2x2):
    r = ad.run(fixture_2x2, max_iter=3)
    assert not r.converged and r.iterations == 3 and len(r.trace) == 3
    assert feasibility_check(fixture_2x2, r.alloc).feasible


def test_trace_columns_and_determinism(fixture_2x2):
    a, b = ad.run(fixture_2x2), ad.run(fixture_2x2)
    assert a.trace.columns == SYNC_COLUMNS
    assert a.trace.deterministic_rows() == b.trace.deterministic_rows()
    alloc, trace = a
    assert alloc is a.alloc and trace is a.trace


def test_summability_bound(fixture_2x2_solved):
    inst, sp, c = fixture_2x2_solved
    rho = 1.0
    A = ad.halfspace_matrix((sp.S, sp.N))
    lam_star = (c.fog_multiplier / rho) * A[0]
    r = ad.run(inst, rho=rho, max_iter=200, keep_states=True, t_final=1e-12,
               eps_primal=0.0, eps_dual=0.0)
    st0 = r.states[0]
    I0 = (1 / rho) * np.sum((rho * (st0.lam - lam_star)) ** 2) + rho * np.sum((st0.z - c.x) ** 2)
    total = sum(np.sum((b.x - b.z) ** 2) + np.sum((b.z - a.z) ** 2)
                for a, b in zip(r.states, r.states[1:]))
    assert total <= I0 / rho + 1e-9


def test_balancer_rescales_dual(fixture_2x2):
    seen = []
    r = ad.run(fixture_2x2, balance=True, callback=lambda s, res: seen.append(s.rho))
    assert r.converged
    assert len(set(seen)) >= 1


@given(st.integers(0, 30))
def test_restore_feasible_lands_in_feasible_set(seed):
    from fedslice.scenario import random_instance
    inst = random_instance(seed % 5, S=2, N=2)
    sp = scale_problem(inst)
    rng = np.random.default_rng(seed)
    x = ad.initial_point(sp)
    X = x.reshape(sp.S, 2 * sp.N)
    X[:, sp.N:] *= rng.uniform(1.0, 3.0, size=(sp.S, sp.N))  # overrun the fog budget
    y = ad.restore_feasible(sp, X.reshape(-1))
    assert (ad.halfspace_matrix((sp.S, sp.N)) @ y).item() <= sp.gamma * (1 + 1e-12)
    assert feasibility_check(inst, sp.to_alloc(y)).feasible
