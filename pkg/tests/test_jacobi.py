from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import TABLE_10T, desk_row
from windfarm_dmpc.controller import JacobiDMPC
from windfarm_dmpc.jacobi import (JacobiConfig, estimate_parallel_time, jacobi_iterate,
                                  make_subproblems, solve_local)
from windfarm_dmpc.plant import WakePlant
from windfarm_dmpc.qp import solve_qp
from windfarm_dmpc.topology import build_layout, compute_delays, interaction_sets


def step_problem(seed=0, n=3, H=10, layout=None, offset=0.3):
    """A realistic step problem: plant snapshot, measured powers, random reference."""
    rng = np.random.default_rng(seed)
    layout = layout if layout is not None else desk_row(n, gap_samples=4)
    ctrl = JacobiDMPC(horizon=H).fit(layout)
    plant = WakePlant(layout)
    s = plant.warm_start(rng.uniform(0.2, 0.8, layout.n_turbines))
    for _ in range(3):
        s, _ = plant.step(s, rng.uniform(0.1, 0.85, layout.n_turbines))
    out = plant.measure(s)
    y_ref = out.power.sum() * (1 + rng.uniform(-offset, offset, H))
    problem, _ = ctrl.build_problem(s, out.power, y_ref)
    return ctrl, problem


def central_optimum(problem):
    G, H = problem.n_turbines, problem.horizon
    res = solve_qp(problem.qp(range(G), np.zeros((G, H))))
    return res.x.reshape(G, H)


def test_config_validation():
    for kw in (dict(max_iterations=0), dict(tol=0), dict(init_scale=1.0)):
        with pytest.raises(ValueError):
            JacobiConfig(**kw)
    with pytest.raises(ValueError):
        JacobiConfig(weights=(0.5, 0.6)).resolve_weights(2)
    with pytest.raises(ValueError):
        JacobiConfig(weights=(1.0, 0.0)).resolve_weights(2)
    with pytest.raises(ValueError):
        JacobiConfig(weights=(0.5, 0.5)).resolve_weights(3)
    np.testing.assert_allclose(JacobiConfig().resolve_weights(4), 0.25)


def test_free_sets():
    lay = build_layout(TABLE_10T)
    d = compute_delays(lay)
    specs = make_subproblems(lay, interaction_sets(lay, d, 100), 100)
    assert len(specs) == lay.n_turbines
    assert specs[4].free == (4,)  # most downwind of the first row
    assert specs[0].free == (0, 1)
    full = make_subproblems(lay, interaction_sets(lay, d, d.max_row_delay()))
    assert full[0].free == (0, 1, 2, 3, 4) and full[5].free == (5, 6, 7, 8, 9)
    with pytest.raises(ValueError):
        make_subproblems(lay, interaction_sets(lay, d, 100), 60)


def test_eight_turbine_row_free_set():
    lay = desk_row(8, gap_samples=84)
    sets = interaction_sets(lay, compute_delays(lay), 200)
    assert make_subproblems(lay, sets)[3].free == (3, 4, 5)


def test_evaluation_set_covers_influenced_turbines():
    lay = desk_row(5, gap_samples=4)
    sets = interaction_sets(lay, compute_delays(lay), 9)
    for spec in make_subproblems(lay, sets):
        for l in spec.free:
            assert set(sets.downstream_h[l]) <= set(spec.evaluation)


@given(N=st.integers(2, 12), M=st.integers(1, 3))
def test_free_set_size_independent_of_farm_size(N, M):
    lay = build_layout(dict(M=M, N=N, dx_r=630, D_r=90, V_inf=7.5, h=21))
    sets = interaction_sets(lay, compute_delays(lay), 9)  # two gaps of 4 fit
    for spec in make_subproblems(lay, sets):
        assert len(spec.free) <= 3
        comp = spec.complement(lay.n_turbines)
        assert sorted(spec.free + comp) == list(range(lay.n_turbines))
        assert not set(spec.free) & set(comp)


def test_local_solve_keeps_complement_and_does_not_raise_cost():
    ctrl, problem = step_problem(1)
    dU = np.zeros((3, 10))
    y = problem.predictions(dU)
    base = problem.cost(dU, y)
    for spec in ctrl.subproblems_:
        new = solve_local(spec, dU, y, problem)
        comp = list(spec.complement(3))
        np.testing.assert_array_equal(new[comp], dU[comp])
        assert problem.cost(new) <= base + 1e-12


def test_single_turbine_local_solve_is_central(layout_single):
    ctrl, problem = step_problem(2, layout=layout_single)
    dU = np.zeros((1, 10))
    local = solve_local(ctrl.subproblems_[0], dU, problem.predictions(dU), problem)
    np.testing.assert_allclose(local, central_optimum(problem), atol=1e-12)


def test_reference_at_free_response_converges_immediately():
    ctrl, problem = step_problem(3)
    problem.y_ref = problem.predictions(np.zeros((3, 10))).sum(0)
    res = jacobi_iterate(problem, ctrl.subproblems_, ctrl.jacobi_config_)
    assert res.iterations == 1 and res.converged
    np.testing.assert_allclose(res.dU, 0.0, atol=1e-12)


@given(seed=st.integers(0, 2 ** 16))
def test_descent_and_feasibility(seed):
    ctrl, problem = step_problem(seed, offset=0.6)
    res = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(max_iterations=60, tol=1e-6))
    assert np.all(np.diff(res.cost_history) <= 1e-9)
    assert problem.feasible(res.dU)


def test_fixed_point_matches_central_solution():
    ctrl, problem = step_problem(5)
    star = central_optimum(problem)
    res = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(max_iterations=5000, tol=1e-9))
    assert res.converged
    np.testing.assert_allclose(res.dU, star, atol=1e-4)
    assert res.cost_history[-1] <= problem.cost(star) * (1 + 1e-3)
    one_more = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(max_iterations=1),
                              dU0=star)
    np.testing.assert_allclose(one_more.dU, star, atol=1e-10)


def test_converged_iterate_independent_of_weights():
    ctrl, problem = step_problem(6)
    cfg = dict(max_iterations=5000, tol=1e-10)
    a = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(**cfg))
    b = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(weights=(0.5, 0.3, 0.2), **cfg))
    assert a.converged and b.converged
    np.testing.assert_allclose(a.dU, b.dU, atol=1e-6)


def test_workers_give_identical_iterates():
    ctrl, problem = step_problem(7, layout=build_layout(dict(TABLE_10T, h=21)))
    cfg = JacobiConfig(max_iterations=30, tol=1e-6)
    serial = jacobi_iterate(problem, ctrl.subproblems_, cfg)
    with ThreadPoolExecutor(max_workers=3) as pool:
        threaded = jacobi_iterate(problem, ctrl.subproblems_, cfg, executor=pool)
    np.testing.assert_array_equal(serial.dU, threaded.dU)
    assert serial.cost_history == threaded.cost_history


def test_iteration_cap_returns_last_iterate():
    ctrl, problem = step_problem(8, offset=0.6)
    res = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(max_iterations=1, tol=1e-12))
    assert not res.converged
    # the loop runs while p <= p_max
    assert res.iterations == 2
    assert problem.feasible(res.dU)


def test_residual_is_euclidean_step_length():
    ctrl, problem = step_problem(9)
    res = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(max_iterations=1, tol=1e-12))
    first = jacobi_iterate(problem, ctrl.subproblems_, JacobiConfig(max_iterations=1, tol=1e9))
    np.testing.assert_allclose(res.residual_history[0], np.linalg.norm(first.dU, axis=1))


def test_trace_records():
    ctrl, problem = step_problem(10)
    res = jacobi_iterate(problem, ctrl.subproblems_, ctrl.jacobi_config_)
    trace = res.trace()
    assert len(trace) == res.iterations
    assert [t["iteration"] for t in trace] == list(range(1, res.iterations + 1))
    assert all(len(t["subproblem_durations"]) == 3 for t in trace)
    assert res.parallel_time <= res.wall_time + 1e-9


def test_parallel_time_estimate():
    assert estimate_parallel_time([[0.1, 0.3], [0.2, 0.1]], [0.01, 0.02],
                                  [[0.05, 0.04], [0.01, 0.03]], 0.5) == pytest.approx(
        0.5 + 0.3 + 0.01 + 0.05 + 0.2 + 0.02 + 0.03)
    assert estimate_parallel_time([], [], [], 0.25) == 0.25


def test_single_subproblem_estimate_close_to_wall_time(layout_single):
    ctrl, problem = step_problem(11, layout=layout_single)
    res = jacobi_iterate(problem, ctrl.subproblems_, ctrl.jacobi_config_)
    # with one subproblem nothing runs in parallel; only bookkeeping is excluded
    assert res.parallel_time == pytest.approx(res.wall_time, rel=0.5)


def test_identical_subproblems_estimate_divides_serial_time():
    durations = [[0.01] * 8 for _ in range(5)]
    serial = sum(map(sum, durations))
    est = estimate_parallel_time(durations, [0.0] * 5, [[0.0]] * 5, 0.002)
    assert est == pytest.approx(serial / 8 + 0.002)
