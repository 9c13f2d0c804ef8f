import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedslice import admm_async as aa
from fedslice import admm_sync as ad
from fedslice.local import LocalProblem, local_prox
from fedslice.model import feasibility_check, scale_problem
from fedslice.oracle import centralized_solve
from fedslice.scenario import random_instance
from fedslice.trace import ASYNC_COLUMNS


@pytest.fixture(scope="module")
def saddle(fixture_2x2_solved):
    inst, sp, c = fixture_2x2_solved
    return inst, sp, c, aa.oracle_fixed_point(sp, c.x, c.fog_multiplier, 1.0)


# closed-form z block -------------------------------------------------------------

def test_z_block_zero_input():
    A = ad.halfspace_matrix((2, 2))
    for s in range(2):
        assert np.array_equal(aa.z_block_closed_form(np.zeros(8), A, 5.0, 1.0, s), np.zeros(4))


@pytest.mark.parametrize("rho", [0.5, 1.0, 3.0])
def test_z_and_lambda_blocks_hand_kkt(rho):
    A = ad.halfspace_matrix((1, 1))
    gamma = 2.5
    v = np.array([0.0, -rho * (gamma + 1)])
    z = aa.z_block_closed_form(v, A, gamma, rho, 0)
    assert z[1] == pytest.approx(gamma) and z[0] == 0.0
    lig = aa.lambda_ig_block(v, z, rho)
    assert lig[1] == pytest.approx(-rho) and lig[0] == 0.0


@given(arrays(float, 12, elements=st.floats(-50, 50)), st.floats(0.1, 10), st.floats(-20, 20))
def test_z_blocks_assemble_to_projection(v, rho, gamma):
    A = ad.halfspace_matrix((3, 2))
    z = np.concatenate([aa.z_block_closed_form(v, A, gamma, rho, s) for s in range(3)])
    assert (A @ z).item() <= gamma + 1e-9 * max(1.0, float(np.abs(v).sum()) / rho)
    assert np.allclose(z, ad.project_halfspace(-v / rho, A, gamma), rtol=1e-12, atol=1e-12)


def test_lambda_inactive_cancels():
    A = ad.halfspace_matrix((2, 2))
    v = np.full(8, 0.3)
    for s in range(2):
        z = aa.z_block_closed_form(v, A, 10.0, 2.0, s)
        assert np.allclose(aa.lambda_ig_block(v[4 * s:4 * s + 4], z, 2.0), 0.0, atol=1e-15)


@given(arrays(float, 4, elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(-5, 5)),
       arrays(float, 4, elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(-5, 5)),
       st.floats(-3, 3))
def test_lambda_block_affine(v1, z1, v2, z2, t):
    got = aa.lambda_ig_block(t * v1 + v2, t * z1 + z2, 1.7)
    want = t * aa.lambda_ig_block(v1, z1, 1.7) + aa.lambda_ig_block(v2, z2, 1.7)
    assert np.allclose(got, want, rtol=1e-12, atol=1e-10)


# x block ------------------------------------------------------------------------------

def test_x_block_completes_the_square(saddle):
    inst, sp, c, Vs = saddle
    rho = 1.3
    v = Vs[:4] * 1.01
    lig = np.array([0.0, 0.0, -0.2, -0.2])
    x, lf = aa.x_block_solve(sp, v, lig, rho, 0)
    w = 2 * lig - v
    lp = LocalProblem.for_cell(sp, 0, rho, w / rho)
    assert np.array_equal(x, local_prox(lp).x)
    rng = np.random.default_rng(0)
    f = lambda y: lp.objective(y) - 0.5 * rho * np.sum((y - w / rho) ** 2)
    diffs = []
    for _ in range(20):
        y = x * rng.uniform(0.9, 1.1, 4)
        linear_form = f(y) - w @ y + 0.5 * rho * y @ y
        diffs.append(lp.objective(y) - linear_form)
    assert np.ptp(diffs) <= 1e-9 * max(1.0, abs(diffs[0]))
    assert np.allclose(lf, 2 * lig - v - rho * x, rtol=0, atol=0)


# block updates --------------------------------------------------------------------

def test_apply_zero_delta_advances_counter():
    st0 = aa.AsyncState(np.arange(8.0), np.zeros(2), 0.5, 1.0)
    aa.apply_block_update(st0, aa.BlockUpdate(1, np.zeros(4), np.zeros(2)))
    assert np.array_equal(st0.V, np.arange(8.0)) and st0.k == 1 and st0.version.tolist() == [0, 1]


def test_disjoint_updates_commute_and_stay_local():
    rng = np.random.default_rng(1)
    u0 = aa.BlockUpdate(0, rng.normal(size=4), np.zeros(2))
    u1 = aa.BlockUpdate(1, rng.normal(size=4), np.zeros(2))
    a = aa.AsyncState(np.ones(8), np.zeros(2), 0.5, 1.0)
    b = a.copy()
    aa.apply_block_update(aa.apply_block_update(a, u0), u1)
    aa.apply_block_update(aa.apply_block_update(b, u1), u0)
    assert np.array_equal(a.V, b.V)
    c = aa.AsyncState(np.ones(8), np.zeros(2), 0.5, 1.0)
    aa.apply_block_update(c, u1)
    assert np.array_equal(c.V[:4], np.ones(4))


def test_non_finite_delta_rejected():
    st0 = aa.AsyncState(np.ones(4), np.zeros(1), 0.5, 1.0)
    with pytest.raises(ValueError):
        aa.apply_block_update(st0, aa.BlockUpdate(0, np.array([np.nan, 0, 0, 0]), np.zeros(1)))


def test_state_invariants():
    with pytest.raises(ValueError):
        aa.AsyncState(np.ones(4), np.zeros(1), 0.0, 1.0)
    with pytest.raises(ValueError):
        aa.AsyncState(np.ones(4), np.zeros(1), 1.5, 1.0)
    with pytest.raises(ValueError):
        aa.AsyncState(np.ones(4), np.zeros(1), 0.5, -1.0)


def _hand_drs(sp, V, rho):
    A = ad.halfspace_matrix((sp.S, sp.N))
    z = ad.project_halfspace(-V / rho, A, sp.gamma)
    lig = V + rho * z
    x = local_prox(LocalProblem.for_cell(sp, 0, rho, (2 * lig - V) / rho)).x
    lf = 2 * lig - V - rho * x
    return V - (lig - lf)


def test_single_block_fresh_unit_step_is_drs():
    inst = random_instance(7, S=1, N=2)
    sp = scale_problem(inst)
    r = aa.run_async(inst, alpha=1.0, tau=0, staleness="fresh", max_updates=25, sp=sp,
                     keep_memory=True, tol=0.0)
    V = r.memory[0]
    for got in r.memory[1:]:
        V = _hand_drs(sp, V, 1.0)
        assert np.allclose(got, V, rtol=1e-12, atol=1e-12)


# fixed point and recovery --------------------------------------------------------------

def test_fixed_point_residual_at_oracle(saddle):
    inst, sp, c, Vs = saddle
    assert aa.fixed_point_residual(sp, Vs, 1.0) <= 1e-6


def test_recover_primal_at_oracle(saddle):
    inst, sp, c, Vs = saddle
    x1 = aa.recover_primal(sp, Vs, 1.0)
    x2 = aa.recover_primal(sp, Vs, 1.0)
    assert np.array_equal(x1, x2)
    alloc = sp.to_alloc(x1)
    assert feasibility_check(inst, alloc).feasible
    assert sp.objective(x1) * sp.ut == pytest.approx(c.objective, rel=1e-3)


def test_drs_operator_nonexpansive(saddle):
    inst, sp, c, Vs = saddle
    rng = np.random.default_rng(2)
    for _ in range(15):
        V1 = Vs * rng.uniform(0.8, 1.2, Vs.shape)
        V2 = Vs * rng.uniform(0.8, 1.2, Vs.shape)
        d_out = np.linalg.norm(aa.drs_operator(sp, V1, 1.0) - aa.drs_operator(sp, V2, 1.0))
        assert d_out <= np.linalg.norm(V1 - V2) + 1e-9


# driver ------------------------------------------------------------------------------------

@pytest.mark.parametrize("tau", [0, 5])
@pytest.mark.parametrize("seed", range(3))
def test_run_async_reaches_oracle(fixture_2x2_solved, tau, seed):
    inst, sp, c = fixture_2x2_solved
    r = aa.run_async(inst, alpha=0.5, tau=tau, seed=seed, sp=sp)
    assert r.converged
    assert r.objective == pytest.approx(c.objective, rel=1e-3)
    assert r.trace.columns == ASYNC_COLUMNS
    assert np.nanmax(r.trace.column("staleness_age")) <= tau


def test_run_async_seed_determinism(fixture_2x2):
    a = aa.run_async(fixture_2x2, tau=5, seed=11, max_updates=300)
    b = aa.run_async(fixture_2x2, tau=5, seed=11, max_updates=300)
    assert a.trace.deterministic_rows() == b.trace.deterministic_rows()
    assert np.array_equal(a.state.V, b.state.V)


def test_non_convergence_flagged_with_best_iterate(fixture_2x2):
    r = aa.run_async(fixture_2x2, max_updates=6, tol=1e-30)
    assert not r.converged and r.updates == 6
    assert feasibility_check(fixture_2x2, r.alloc).feasible


def test_mean_distance_to_fixed_point_decreases_by_window(saddle):
    inst, sp, c, Vs = saddle
    S, n = sp.S, 120
    dist = np.zeros(n + 1)
    seeds = range(10)
    for seed in seeds:
        r = aa.run_async(inst, tau=5, seed=seed, max_updates=n, tol=0.0, sp=sp,
                         keep_memory=True)
        dist += np.array([np.linalg.norm(V - Vs) for V in r.memory])
    dist /= len(seeds)
    windows = dist[1:].reshape(-1, S).mean(axis=1)
    assert np.all(np.diff(windows) <= 1e-9)


@pytest.mark.parametrize("model", ["uniform", "geometric"])
def test_stale_reads_respect_tau(model):
    rng = np.random.default_rng(3)
    V = np.zeros(8)
    hist = aa.SnapshotHistory(V, np.zeros(2), tau=3)
    for k in range(10):
        V = V + 1.0
        hist.push(V, np.array([k + 1, k + 1]))
        r = hist.read(rng, model, 2, 2)
        assert np.all(r.age <= 3) and np.all(r.age >= 0)
        for s in range(2):
            assert np.all(r.v_hat[4 * s:4 * s + 4] == V[0] - r.age[s])


def test_unknown_staleness_model_rejected(fixture_2x2):
    with pytest.raises(ValueError):
        aa.run_async(fixture_2x2, staleness="bogus")


def test_conservative_alpha():
    assert aa.conservative_alpha(4, 0) == 1.0
    assert aa.conservative_alpha(4, 5) == pytest.approx(1 / 11)
    assert aa.conservative_alpha(4, 5, p_min=0.1) == pytest.approx(0.4 / 11)


# naive mode helpers ------------------------------------------------------------------------

def test_naive_saddle_start_is_sync_fixed_point(fixture_2x2_solved):
    inst, sp, c = fixture_2x2_solved
    st0 = aa.naive_saddle_start(sp, c.x, c.fog_multiplier, 1.0)
    s = ad.SyncState(st0.x, st0.z, st0.lam, 1.0)
    _, res, _ = ad.iterate(s, sp, t_final=1e-12)
    assert res.primal <= 1e-6 and res.dual <= 1e-6


def test_naive_equivalent_memory_reproduces_sync_x_update(fixture_2x2):
    sp = scale_problem(fixture_2x2)
    A = ad.halfspace_matrix((sp.S, sp.N))
    x0 = ad.initial_point(sp)
    s = ad.SyncState(x0, x0.copy(), np.zeros(sp.dim), 1.0)
    for _ in range(3):
        s, _, _ = ad.iterate(s, sp, A)
    st0 = aa.NaiveState(s.x, s.z, s.lam, 1.0)
    sw = aa.fresh_sweep(sp, aa.naive_equivalent_memory(st0), 1.0, A)
    x_next, _ = ad.local_updates(sp, s.z - s.lam, 1.0)
    assert np.allclose(sw.z, s.z, rtol=1e-12, atol=1e-12)
    assert np.allclose(sw.x, x_next, rtol=1e-9, atol=1e-12)
