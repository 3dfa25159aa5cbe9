import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import row_setup
from oracles import sample_box_qp_minimum
from windfarm_dmpc.prediction import CondensedPredictor
from windfarm_dmpc.qp import (DenseQP, InfeasibleError, NonConvergenceError, build_cost,
                              cumulative_bounds, solve_qp)

CT_MIN, CT_MAX = 0.01, 8 / 9


def problem(H=8, seed=0):
    rng = np.random.default_rng(seed)
    vm, sets = row_setup(n=2, g=3, H=H)
    pred = CondensedPredictor(vm, sets, H)
    x = [rng.normal(scale=0.1, size=m.nx) for m in vm]
    y_ref = rng.uniform(1.0, 2.0, H)
    ct_prev = rng.uniform(0.3, 0.7, 2)
    return pred, x, y_ref, ct_prev, rng


def direct_cost(pred, x, y_ref, q, r, dU):
    e = pred.predict_all(x, dU).sum(0) - y_ref
    return q * q * e @ e + r * r * np.sum(dU * dU)


def random_qp(n_blocks, H, rng):
    n = n_blocks * H
    A = rng.normal(size=(n, n))
    P = A @ A.T + 0.1 * np.eye(n)
    q = rng.normal(size=n) * 3
    ct = rng.uniform(0.2, 0.7, n_blocks)
    lower, upper = cumulative_bounds(ct, H, 0.1, 0.8)
    return DenseQP(P, q, lower, upper, H)


def test_cumulative_bounds_layout():
    lo, hi = cumulative_bounds([0.3, 0.5], 3, 0.1, 0.8)
    np.testing.assert_allclose(lo, [-0.2] * 3 + [-0.4] * 3)
    np.testing.assert_allclose(hi, [0.5] * 3 + [0.3] * 3)


def test_cost_expansion_matches_direct_evaluation():
    pred, x, y_ref, ct_prev, rng = problem()
    dU = rng.normal(scale=0.02, size=(2, 8))
    for free in ([0], [1], [0, 1]):
        qp = build_cost(pred, x, y_ref, 1.0, 0.4, free, dU, ct_prev, CT_MIN, CT_MAX)
        for _ in range(20):
            v = rng.normal(scale=0.05, size=len(free) * 8)
            full = dU.copy()
            full[free] = v.reshape(len(free), 8)
            assert qp.value(v) == pytest.approx(direct_cost(pred, x, y_ref, 1.0, 0.4, full),
                                                rel=1e-8)


def test_hessian_is_spd():
    pred, x, y_ref, ct_prev, rng = problem()
    qp = build_cost(pred, x, y_ref, 1.0, 0.4, [0, 1], np.zeros((2, 8)), ct_prev, CT_MIN, CT_MAX)
    np.testing.assert_allclose(qp.P, qp.P.T)
    assert np.linalg.eigvalsh(qp.P).min() >= 2 * 0.4 ** 2 * (1 - 1e-9)


@pytest.mark.parametrize("q,r", [(0.0, 0.4), (1.0, 0.0), (-1.0, 0.4)])
def test_weights_must_be_positive(q, r):
    pred, x, y_ref, ct_prev, _ = problem()
    with pytest.raises(ValueError):
        build_cost(pred, x, y_ref, q, r, [0], np.zeros((2, 8)), ct_prev, CT_MIN, CT_MAX)


def test_heavy_input_penalty_keeps_increments_at_zero():
    pred, x, _, ct_prev, _ = problem()
    y_ref = pred.predict_all(x, np.zeros((2, 8))).sum(0)
    qp = build_cost(pred, x, y_ref, 1.0, 1e3, [0, 1], np.zeros((2, 8)), ct_prev, CT_MIN, CT_MAX)
    np.testing.assert_allclose(solve_qp(qp).x, 0.0, atol=1e-12)


def test_interior_optimum_matches_closed_form():
    pred, x, y_ref, ct_prev, _ = problem()
    y_ref = pred.predict_all(x, np.zeros((2, 8))).sum(0) + 0.01
    qp = build_cost(pred, x, y_ref, 1.0, 0.4, [0, 1], np.zeros((2, 8)), ct_prev, CT_MIN, CT_MAX)
    res = solve_qp(qp)
    assert not res.active_lower.any() and not res.active_upper.any()
    np.testing.assert_allclose(res.x, np.linalg.solve(qp.P, -qp.q), rtol=1e-8, atol=1e-12)


def test_upper_bound_pins_when_at_betz_point():
    pred, x, y_ref, _, _ = problem()
    ct_prev = np.array([CT_MAX, CT_MAX])
    y_ref = y_ref + 10.0  # far more power than reachable
    qp = build_cost(pred, x, y_ref, 1.0, 0.4, [0, 1], np.zeros((2, 8)), ct_prev, CT_MIN, CT_MAX)
    res = solve_qp(qp)
    cum = np.cumsum(res.x.reshape(2, 8), axis=1)
    assert np.all(cum <= 1e-10)
    assert res.active_upper.reshape(2, 8)[:, 0].all()


def test_out_of_bounds_previous_thrust_is_infeasible():
    pred, x, y_ref, _, _ = problem()
    for ct_prev in ([0.95, 0.5], [0.5, 0.0]):
        with pytest.raises(InfeasibleError):
            solve_qp(build_cost(pred, x, y_ref, 1.0, 0.4, [0, 1], np.zeros((2, 8)),
                                np.array(ct_prev), CT_MIN, CT_MAX))


def test_iteration_cap_reports_residuals():
    rng = np.random.default_rng(4)
    n = 12
    qp = DenseQP(np.eye(n), rng.normal(size=n) * 10, -0.01 * np.ones(n), 0.01 * np.ones(n), 6)
    with pytest.raises(NonConvergenceError) as err:
        solve_qp(qp, max_iter=0)
    assert "stationarity" in err.value.residuals


def test_dense_qp_shape_checks():
    with pytest.raises(ValueError):
        DenseQP(np.eye(3), np.zeros(4), np.zeros(4), np.ones(4), 2)
    with pytest.raises(ValueError):
        DenseQP(np.eye(3), np.zeros(3), np.zeros(3), np.ones(3), 2)


@given(seed=st.integers(0, 2 ** 16), blocks=st.integers(1, 3), H=st.integers(1, 4))
def test_solution_beats_random_feasible_points(seed, blocks, H):
    rng = np.random.default_rng(seed)
    qp = random_qp(blocks, H, rng)
    res = solve_qp(qp)
    best = sample_box_qp_minimum(qp.P, qp.q, qp.lower, qp.upper, H, 1000, rng)
    assert res.objective - qp.const <= best + 1e-9 * (1 + abs(best))


@given(seed=st.integers(0, 2 ** 16), blocks=st.integers(1, 3), H=st.integers(1, 5))
def test_kkt_and_feasibility(seed, blocks, H):
    rng = np.random.default_rng(seed)
    qp = random_qp(blocks, H, rng)
    res = solve_qp(qp)
    z = qp.cumulative(res.x)
    assert np.all(z >= qp.lower - 1e-10) and np.all(z <= qp.upper + 1e-10)
    r = res.residuals
    assert r["stationarity"] < 1e-8 and r["dual"] < 1e-8
    assert r["complementarity"] < 1e-8 and r["primal"] <= 1e-10


@given(seed=st.integers(0, 2 ** 16))
def test_deterministic_and_start_independent(seed):
    rng = np.random.default_rng(seed)
    qp = random_qp(2, 4, rng)
    a = solve_qp(qp)
    b = solve_qp(qp)
    np.testing.assert_array_equal(a.x, b.x)
    c = solve_qp(qp, x0=rng.normal(size=qp.n))
    np.testing.assert_allclose(c.x, a.x, atol=1e-8)


def test_translation_consistency():
    """Subtracting the free response from the reference is the same problem."""
    pred, x, y_ref, ct_prev, rng = problem()
    dU = rng.normal(scale=0.01, size=(2, 8))
    qp1 = build_cost(pred, x, y_ref, 1.0, 0.4, [0], dU, ct_prev, CT_MIN, CT_MAX)
    free_resp = sum(pred.free_response(i, x) for i in range(2))
    zero_x = [np.zeros_like(v) for v in x]
    qp2 = build_cost(pred, zero_x, y_ref - free_resp, 1.0, 0.4, [0], dU, ct_prev, CT_MIN,
                     CT_MAX)
    np.testing.assert_allclose(qp1.P, qp2.P)
    np.testing.assert_allclose(qp1.q, qp2.q, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(solve_qp(qp1).x, solve_qp(qp2).x, atol=1e-8)


def test_precomputed_predictions_give_same_qp():
    pred, x, y_ref, ct_prev, rng = problem()
    dU = rng.normal(scale=0.01, size=(2, 8))
    y = pred.predict_all(x, dU)
    a = build_cost(pred, x, y_ref, 1.0, 0.4, [1], dU, ct_prev, CT_MIN, CT_MAX)
    b = build_cost(pred, x, y_ref, 1.0, 0.4, [1], dU, ct_prev, CT_MIN, CT_MAX, y_current=y)
    c = build_cost(pred, x, y_ref, 1.0, 0.4, [1], dU, ct_prev, CT_MIN, CT_MAX, y_total=y.sum(0))
    for other in (b, c):
        np.testing.assert_allclose(other.q, a.q, rtol=1e-12)
        assert other.const == pytest.approx(a.const, rel=1e-12)
