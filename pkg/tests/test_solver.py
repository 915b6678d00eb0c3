import numpy as np
import pytest

from cdec.errors import DivergenceError, InvalidArgument
from cdec.ops import block_shrink, theta_schedule
from cdec.sensing import gaussian_measurement_matrix, synthetic_sparse_dataset
from cdec.solver import (
    SensingProblem,
    SolverConfig,
    feasibility_gap,
    iterate,
    objective,
    solve,
    solver_init,
    solver_step,
    write_trace,
)

from .oracles import conic_grid_optimum, naive_matvec, toy_conic_instance


def small_problem(rng, n=6, m=3, N=9, eps=0.05):
    A = rng.standard_normal((m, n)) / np.sqrt(m)
    y = rng.standard_normal(m)
    return SensingProblem(A, y, eps, A.T @ y), rng.standard_normal((N, n)) * 0.4


def test_init(rng):
    problem, W = small_problem(rng)
    state = solver_init(problem, W)
    assert state.theta == 1.0
    np.testing.assert_array_equal(state.u1, state.z1)
    np.testing.assert_array_equal(state.u2, state.z2)
    assert not state.z1.any() and not state.z2.any()
    assert state.z1.shape == (9,) and state.z2.shape == (3,)


def test_init_rejects_empty_and_mismatched():
    with pytest.raises(InvalidArgument):
        SensingProblem(np.zeros((0, 3)), np.zeros(0), 0.0, np.zeros(3))
    problem = SensingProblem(np.ones((2, 3)), np.ones(2), 0.0, np.zeros(3))
    with pytest.raises(InvalidArgument):
        solver_init(problem, np.ones((4, 5)))


def test_first_step_returns_x0(rng):
    problem, W = small_problem(rng)
    config = SolverConfig().resolved(W, problem.A)
    state = solver_step(solver_init(problem, W), problem, W, config)
    np.testing.assert_array_equal(state.x, problem.x0)
    assert state.theta == theta_schedule(2)[1]


def test_zero_operator_with_slack_constraint_stays_at_x0(rng):
    problem, _ = small_problem(rng, eps=1e6)
    W = np.zeros((9, 6))
    result = solve(problem, W, SolverConfig(max_iters=200))
    np.testing.assert_array_equal(result.x, problem.x0)


@pytest.mark.parametrize("prox", ["conic", "listing"])
def test_dual_bounds_hold_every_iteration(rng, prox):
    problem, W = small_problem(rng)
    config = SolverConfig(prox=prox, max_iters=30).resolved(W, problem.A)
    state = solver_init(problem, W)
    for _ in range(30):
        theta = state.theta
        state = solver_step(state, problem, W, config)
        bound = 1.0 if prox == "conic" else config.t1 / theta
        assert np.max(np.abs(state.z1)) <= bound


def test_dual_constraint_update_is_nonexpansive(rng):
    for _ in range(100):
        a, b = rng.standard_normal(5), rng.standard_normal(5)
        tau = rng.uniform(0, 2)
        assert np.linalg.norm(block_shrink(a, tau) - block_shrink(b, tau)) <= np.linalg.norm(a - b) + 1e-15


def test_toy_problem_matches_grid_search():
    rng = np.random.default_rng(7)
    for _ in range(3):
        W, A, y, eps, x0 = toy_conic_instance(rng)
        problem = SensingProblem(A, y, eps, x0)
        result = solve(problem, W, SolverConfig(max_iters=20000))
        best, _ = conic_grid_optimum(W, A, y, eps, x0, 1.0)
        assert feasibility_gap(result.x, A, y, eps) <= 1e-8
        assert abs(objective(result.x, W, 1.0, x0) - best) <= 1e-3


def test_noiseless_sparse_recovery():
    n, m, s = 64, 32, 4
    A = gaussian_measurement_matrix(m, n, 11)
    data = synthetic_sparse_dataset(n, s, 1, seed=12, A=A)
    problem = SensingProblem(A, data.y[0], 0.0, data.x0[0])
    result = solve(problem, np.eye(n), SolverConfig(mu=1.0, max_iters=3000))
    err = np.linalg.norm(result.x - data.x[0]) / np.linalg.norm(data.x[0])
    assert err <= 5e-2


def test_iteration_count_and_trace(rng, tmp_path):
    problem, W = small_problem(rng)
    result = solve(problem, W, SolverConfig(max_iters=17, rel_tol=0.0))
    assert result.state.k == 17
    assert len(result.trace) == 17
    assert [r.iter for r in result.trace] == list(range(1, 18))
    write_trace(tmp_path / "t.csv", result.trace)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,objective,feasibility_gap,rel_change"
    assert len(lines) == 18


def test_rel_tol_stops_early(rng):
    problem, W = small_problem(rng)
    result = solve(problem, W, SolverConfig(max_iters=5000, rel_tol=1e-6))
    assert len(result.trace) < 5000
    assert result.trace[-1].rel_change < 1e-6


def test_solve_is_deterministic(rng):
    problem, W = small_problem(rng)
    a = solve(problem, W, SolverConfig(max_iters=100))
    b = solve(problem, W, SolverConfig(max_iters=100))
    np.testing.assert_array_equal(a.x, b.x)
    assert [r.objective for r in a.trace] == [r.objective for r in b.trace]


def test_objective_and_gap_against_naive_loops(rng):
    W = rng.standard_normal((5, 3))
    A = rng.standard_normal((2, 3))
    x, x0, y = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(2)
    mu, eps = 0.7, 0.3
    naive_obj = sum(abs(v) for v in naive_matvec(W, x)) + mu / 2 * sum((a - b) ** 2 for a, b in zip(x, x0))
    assert objective(x, W, mu, x0) == pytest.approx(naive_obj, abs=1e-12)
    r = y - naive_matvec(A, x)
    naive_gap = max(0.0, sum(v * v for v in r) ** 0.5 - eps)
    assert feasibility_gap(x, A, y, eps) == pytest.approx(naive_gap, abs=1e-12)
    assert objective(x0, np.zeros((5, 3)), mu, x0) == 0.0
    assert feasibility_gap(x, A, A @ x, 0.0) == 0.0
    with pytest.raises(InvalidArgument):
        objective(x, W, mu, np.zeros(4))


def test_literal_listing_update_diverges_on_long_runs():
    rng = np.random.default_rng(0)
    W, A, y, eps, x0 = toy_conic_instance(rng)
    problem = SensingProblem(A, y, eps, x0)
    with pytest.raises(DivergenceError) as info:
        with np.errstate(all="ignore"):
            solve(problem, W, SolverConfig(max_iters=20000, prox="listing"), with_trace=False)
    assert info.value.index is not None


def test_config_validation():
    for kwargs in ({"mu": 0}, {"max_iters": 0}, {"t1": -1.0}, {"prox": "other"}, {"rel_tol": -1}):
        with pytest.raises(InvalidArgument):
            SolverConfig(**kwargs)


def test_batched_iterate_matches_rowwise(rng):
    A = rng.standard_normal((3, 5))
    W = rng.standard_normal((7, 5))
    Y = rng.standard_normal((4, 3))
    X0 = Y @ A
    eps = rng.uniform(0.01, 0.2, 4)
    batch = solver_init(SensingProblem(A, Y, 0.0, X0), W)
    rows = [solver_init(SensingProblem(A, Y[i], eps[i], X0[i]), W) for i in range(4)]
    for _ in range(6):
        batch = iterate(batch, W, A, Y, eps, X0, 0.1, 0.1, 1.0)
        rows = [iterate(s, W, A, Y[i], eps[i], X0[i], 0.1, 0.1, 1.0) for i, s in enumerate(rows)]
    np.testing.assert_allclose(batch.x, np.stack([s.x for s in rows]), rtol=1e-12, atol=1e-12)
