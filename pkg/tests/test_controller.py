import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import TABLE_10T, desk_row
from windfarm_dmpc import CentralizedMPC, ConvergenceWarning, JacobiDMPC
from windfarm_dmpc.plant import PlantParams, WakePlant, greedy_power, steady_state
from windfarm_dmpc.topology import build_layout


def closed_loop(ctrl, layout, target, steps, plant_params=None, ct0=0.5):
    plant = WakePlant(layout, plant_params)
    s = plant.warm_start(ct0)
    ctrl.fit(layout)
    H = ctrl.horizon
    powers, cts = [], []
    for _ in range(steps):
        out = plant.measure(s)
        ct = ctrl.predict(s, out.power, np.full(H, target))
        s, _ = plant.step(s, ct)
        powers.append(out.power.sum())
        cts.append(ct)
    return np.array(powers), np.array(cts)


def test_sklearn_parameter_protocol():
    ctrl = JacobiDMPC(horizon=12, r=0.3, n_workers=2)
    params = ctrl.get_params()
    assert params["horizon"] == 12 and params["r"] == 0.3 and params["n_workers"] == 2
    twin = clone(ctrl)
    assert twin.get_params() == params
    ctrl.set_params(q=2.0)
    assert ctrl.q == 2.0
    assert CentralizedMPC(max_size=50).get_params()["max_size"] == 50


def test_predict_before_fit():
    lay = desk_row(2)
    plant = WakePlant(lay)
    with pytest.raises(NotFittedError):
        JacobiDMPC().predict(plant.warm_start(), np.zeros(2), np.zeros(60))


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(horizon=2.5), dict(q=0), dict(r=-1),
                                dict(ct_min=0.5, ct_max=0.4), dict(ct_operating=0.95),
                                dict(max_iterations=0), dict(n_workers=0),
                                dict(weights=(0.5, 0.5))])
def test_invalid_parameters(kw):
    with pytest.raises(ValueError):
        JacobiDMPC(**kw).fit(desk_row(3))


def test_fit_rejects_non_layout():
    with pytest.raises(TypeError):
        JacobiDMPC().fit({"M": 1})


def test_fitted_attributes():
    lay = build_layout(TABLE_10T)
    ctrl = JacobiDMPC(horizon=60).fit(lay)
    assert ctrl.n_turbines_ == 10 and len(ctrl.subproblems_) == 10
    assert ctrl.sets_.horizon == 60
    assert ctrl.last_info_ is None


def test_short_reference_window():
    lay = desk_row(2)
    ctrl = JacobiDMPC(horizon=10).fit(lay)
    s = WakePlant(lay).warm_start(0.5)
    with pytest.raises(ValueError, match="horizon"):
        ctrl.predict(s, np.ones(2), np.ones(9))
    with pytest.raises(ValueError):
        ctrl.predict(s, np.ones(3), np.ones(10))


def test_centralized_size_cap():
    lay = build_layout(TABLE_10T)
    with pytest.raises(ValueError, match="cap"):
        CentralizedMPC(horizon=60, max_size=500).fit(lay)
    CentralizedMPC(horizon=50, max_size=500).fit(lay)


def test_settled_target_holds_thrust():
    lay = desk_row(3)
    settled = steady_state(lay, PlantParams(), 0.5).power.sum()
    powers, cts = closed_loop(JacobiDMPC(horizon=10), lay, settled, 5)
    np.testing.assert_allclose(cts, 0.5, atol=1e-9)
    np.testing.assert_allclose(powers, settled, rtol=1e-12)


def test_zero_error_start_gives_zero_increments_in_both_controllers():
    lay = desk_row(3)
    settled = steady_state(lay, PlantParams(), 0.5).power.sum()
    plant = WakePlant(lay)
    s = plant.warm_start(0.5)
    out = plant.measure(s)
    for cls in (JacobiDMPC, CentralizedMPC):
        ctrl = cls(horizon=10).fit(lay)
        ct = ctrl.predict(s, out.power, np.full(10, settled))
        np.testing.assert_allclose(ct, 0.5, atol=1e-12)
        np.testing.assert_allclose(ctrl.last_info_.dU, 0.0, atol=1e-12)


def test_single_turbine_controllers_agree(layout_single):
    target = 0.8 * greedy_power(layout_single)
    a, ca = closed_loop(JacobiDMPC(horizon=20), layout_single, target, 30)
    b, cb = closed_loop(CentralizedMPC(horizon=20), layout_single, target, 30)
    np.testing.assert_allclose(ca, cb, atol=1e-10)


def test_constant_reference_is_tracked():
    lay = desk_row(3)
    target = steady_state(lay, PlantParams(), 0.62).power.sum()
    powers, cts = closed_loop(JacobiDMPC(horizon=12, tol=1e-4), lay, target, 60)
    err = np.abs(powers - target) / target
    assert err[-10:].max() < 1e-4
    assert err[-10:].max() < err[:10].max()
    assert np.all(cts >= 0.01) and np.all(cts <= 8 / 9)


def test_offset_free_with_wake_mismatch():
    lay = desk_row(3)
    plant_params = PlantParams(wake_constant=0.68 * 1.1)
    target = 0.8 * greedy_power(lay, plant_params)
    powers, _ = closed_loop(JacobiDMPC(horizon=12, tol=1e-4), lay, target, 80, plant_params)
    assert np.max(np.abs(powers[-15:] - target)) / target < 1e-3


def test_warm_start_flag_seeds_from_shifted_solution():
    lay = desk_row(3)
    target = 0.85 * greedy_power(lay)
    ctrl = JacobiDMPC(horizon=10, warm_start=True)
    closed_loop(ctrl, lay, target, 3)
    seed = ctrl._initial_iterate()
    np.testing.assert_array_equal(seed[:, :-1], ctrl.previous_solution_[:, 1:])
    assert np.all(seed[:, -1] == 0)
    ctrl.reset()
    assert ctrl._initial_iterate() is None and ctrl.steps_ == 0


def test_iteration_cap_warns():
    lay = desk_row(3)
    ctrl = JacobiDMPC(horizon=10, max_iterations=1, tol=1e-12).fit(lay)
    plant = WakePlant(lay)
    s = plant.warm_start(0.3)
    out = plant.measure(s)
    with pytest.warns(ConvergenceWarning):
        ct = ctrl.predict(s, out.power, np.full(10, 1.3 * out.power.sum()))
    assert np.all(ct >= 0.01) and np.all(ct <= 8 / 9)


def test_worker_count_does_not_change_commands():
    lay = build_layout(dict(TABLE_10T, h=21))
    target = 0.9 * greedy_power(lay)
    _, a = closed_loop(JacobiDMPC(horizon=10), lay, target, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        _, b = closed_loop(JacobiDMPC(horizon=10, n_workers=3), lay, target, 5)
    np.testing.assert_array_equal(a, b)
