"""Receding-horizon power-tracking controllers with an estimator interface.

``fit(layout)`` linearises the wake model and builds every prediction
structure; ``predict(plant_state, powers, y_ref)`` runs one control step
and returns the thrust commands to apply. The controller is stateful
between calls (it differences consecutive state measurements), so use
:meth:`reset` before a new run.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (check_ct_bounds, check_integer, check_layout, check_positive,
                          check_reference_window, check_vector)
from .jacobi import JacobiConfig, StepProblem, jacobi_iterate, make_subproblems
from .linear_model import (TuningConstants, linearization_point, measure_states,
                           realize_state_space, to_velocity_form)
from .plant import PlantParams
from .prediction import CondensedPredictor
from .qp import solve_qp
from .topology import compute_delays, interaction_sets

__all__ = ["JacobiDMPC", "CentralizedMPC", "StepInfo", "ConvergenceWarning"]

# roundoff allowed on a combined iterate before it counts as a violation
_BOUND_SLACK = 1e-12


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class StepInfo:
    k: int
    iterations: int
    converged: bool
    cost: float
    dU: np.ndarray = field(repr=False)
    cost_history: list = field(default_factory=list, repr=False)
    residual_history: list = field(default_factory=list, repr=False)
    subproblem_times: list = field(default_factory=list, repr=False)
    combine_times: list = field(default_factory=list, repr=False)
    prediction_times: list = field(default_factory=list, repr=False)
    serial_time: float = 0.0
    wall_time: float = 0.0


class JacobiDMPC(BaseEstimator):
    """Distributed MPC solved by a weighted Jacobi iteration.

    Parameters
    ----------
    horizon : int
        Prediction horizon ``H`` in samples.
    q, r : float
        Tracking and increment weights.
    ct_min, ct_max : float
        Thrust bounds.
    max_iterations, tol, init_scale : int, float, float
        Jacobi iteration cap, per-turbine residual tolerance and the factor
        seeding the initial residuals.
    weights : sequence of float or None
        Combination weights per subproblem; uniform when ``None``.
    wake_constant, filter_time_constant : float
        Model parameters used for linearisation.
    c_vv, c_vct, c_va, c_pv, c_pct : float
        Tuning constants of the linear model.
    ct_operating : float
        Uniform thrust of the linearisation point.
    power_unit : float
        Watts per controller power unit; the cost is posed in this unit.
    n_workers : int
        Threads for the subproblem solves. Results do not depend on it.
    warm_start : bool
        Seed each step with the previous solution shifted by one sample
        instead of zero increments.
    """

    def __init__(self, horizon=60, q=1.0, r=0.4, ct_min=0.01, ct_max=8 / 9,
                 max_iterations=200, tol=1e-2, init_scale=2.0, weights=None,
                 wake_constant=0.68, filter_time_constant=5.0, c_vv=1.0, c_vct=1.0,
                 c_va=0.9, c_pv=1.0, c_pct=1.1, ct_operating=0.6, power_unit=1e6,
                 n_workers=1, warm_start=False):
        self.horizon = horizon
        self.q = q
        self.r = r
        self.ct_min = ct_min
        self.ct_max = ct_max
        self.max_iterations = max_iterations
        self.tol = tol
        self.init_scale = init_scale
        self.weights = weights
        self.wake_constant = wake_constant
        self.filter_time_constant = filter_time_constant
        self.c_vv = c_vv
        self.c_vct = c_vct
        self.c_va = c_va
        self.c_pv = c_pv
        self.c_pct = c_pct
        self.ct_operating = ct_operating
        self.power_unit = power_unit
        self.n_workers = n_workers
        self.warm_start = warm_start

    # -- construction -------------------------------------------------------
    def _validate_params(self):
        check_integer("horizon", self.horizon)
        check_positive("q", self.q)
        check_positive("r", self.r)
        check_ct_bounds(self.ct_min, self.ct_max)
        check_integer("max_iterations", self.max_iterations)
        check_positive("power_unit", self.power_unit)
        check_integer("n_workers", self.n_workers)
        if not self.ct_min < self.ct_operating < self.ct_max:
            raise ValueError("ct_operating must lie strictly inside the thrust bounds")

    @property
    def tuning(self):
        return TuningConstants(self.c_vv, self.c_vct, self.c_va, self.c_pv, self.c_pct)

    def fit(self, layout, y=None):
        """Linearise the model for ``layout`` and build the prediction maps."""
        self._validate_params()
        layout = check_layout(layout)
        self.layout_ = layout
        self.model_params_ = PlantParams(wake_constant=self.wake_constant,
                                         filter_time_constant=self.filter_time_constant,
                                         ct_min=self.ct_min, ct_max=self.ct_max)
        self.jacobi_config_ = JacobiConfig(self.max_iterations, self.tol, self.init_scale,
                                           None if self.weights is None else tuple(self.weights))
        self.delays_ = compute_delays(layout)
        self.sets_ = interaction_sets(layout, self.delays_, self.horizon)
        self.point_ = linearization_point(layout, self.model_params_, self.ct_operating)
        self.models_ = realize_state_space(layout, self.delays_, self.point_, self.tuning,
                                           c_w=self.wake_constant, tau=self.filter_time_constant,
                                           power_unit=self.power_unit)
        self.vmodels_ = [to_velocity_form(m) for m in self.models_]
        self.predictor_ = CondensedPredictor(self.vmodels_, self.sets_, self.horizon)
        self.subproblems_ = make_subproblems(layout, self.sets_, self.horizon)
        self.jacobi_config_.resolve_weights(len(self.subproblems_))
        self.n_turbines_ = layout.n_turbines
        self.reset()
        return self

    def reset(self):
        """Forget the previous measurement and solution."""
        self.previous_states_ = None
        self.previous_solution_ = None
        self.steps_ = 0
        self.last_info_ = None
        return self

    # -- one control step ---------------------------------------------------
    def build_problem(self, plant_state, powers, y_ref):
        """Velocity-form step problem from a plant snapshot at sample ``k``.

        ``powers`` are the measured turbine powers at ``k`` in watts and
        ``y_ref`` the farm reference for ``k+1 .. k+H`` in watts.
        """
        check_is_fitted(self, "predictor_")
        G, H = self.n_turbines_, self.horizon
        powers = check_vector("powers", powers, G)
        y_ref = check_reference_window(y_ref, H)
        ct_prev = check_vector("ct_prev", plant_state.ct_applied, G)
        x = measure_states(self.models_, plant_state)
        prev = self.previous_states_ if self.previous_states_ is not None else x
        states = [np.concatenate([[p / self.power_unit], xi - xp])
                  for p, xi, xp in zip(powers, x, prev)]
        problem = StepProblem(self.predictor_, states, y_ref / self.power_unit, self.q, self.r,
                              ct_prev, self.ct_min, self.ct_max)
        return problem, x

    def _initial_iterate(self):
        if not self.warm_start or self.previous_solution_ is None:
            return None
        dU = np.zeros_like(self.previous_solution_)
        dU[:, :-1] = self.previous_solution_[:, 1:]
        return dU

    def _solve(self, problem):
        if self.n_workers > 1:
            with ThreadPoolExecutor(max_workers=self.n_workers) as pool:
                res = jacobi_iterate(problem, self.subproblems_, self.jacobi_config_,
                                     self._initial_iterate(), executor=pool)
        else:
            res = jacobi_iterate(problem, self.subproblems_, self.jacobi_config_,
                                 self._initial_iterate())
        return StepInfo(self.steps_, res.iterations, res.converged, res.cost_history[-1],
                        res.dU, res.cost_history, res.residual_history, res.subproblem_times,
                        res.combine_times, res.prediction_times,
                        res.serial_time + res.initial_prediction_time, res.wall_time)

    def predict(self, plant_state, powers, y_ref):
        """Thrust commands for sample ``k``; only the first increment is applied."""
        problem, x = self.build_problem(plant_state, powers, y_ref)
        info = self._solve(problem)
        if not info.converged:
            warnings.warn(f"step {self.steps_}: iteration cap reached with residuals above "
                          "tolerance; applying the last iterate", ConvergenceWarning,
                          stacklevel=2)
        ct = problem.ct_prev + info.dU[:, 0]
        excess = max(float(np.max(self.ct_min - ct)), float(np.max(ct - self.ct_max)))
        if excess > _BOUND_SLACK:
            raise RuntimeError(f"step {self.steps_}: solution leaves the thrust bounds by "
                               f"{excess:.3e}")
        ct = np.clip(ct, self.ct_min, self.ct_max)
        self.previous_states_ = x
        self.previous_solution_ = info.dU
        self.last_info_ = info
        self.steps_ += 1
        return ct


class CentralizedMPC(JacobiDMPC):
    """Same controller with one QP over all turbines per step (small farms only).

    Parameters are those of :class:`JacobiDMPC` plus ``max_size``, the cap
    on ``G * H`` decision variables.
    """

    def __init__(self, horizon=60, q=1.0, r=0.4, ct_min=0.01, ct_max=8 / 9,
                 max_iterations=200, tol=1e-2, init_scale=2.0, weights=None,
                 wake_constant=0.68, filter_time_constant=5.0, c_vv=1.0, c_vct=1.0,
                 c_va=0.9, c_pv=1.0, c_pct=1.1, ct_operating=0.6, power_unit=1e6,
                 n_workers=1, warm_start=False, max_size=2000):
        super().__init__(horizon, q, r, ct_min, ct_max, max_iterations, tol, init_scale,
                         weights, wake_constant, filter_time_constant, c_vv, c_vct, c_va,
                         c_pv, c_pct, ct_operating, power_unit, n_workers, warm_start)
        self.max_size = max_size

    def fit(self, layout, y=None):
        check_layout(layout)
        size = layout.n_turbines * int(self.horizon)
        if size > self.max_size:
            raise ValueError(f"centralised QP would have {size} variables, above the cap of "
                             f"{self.max_size}; use JacobiDMPC or raise max_size")
        return super().fit(layout, y)

    def _solve(self, problem):
        t0 = time.perf_counter()
        G = problem.n_turbines
        dU0 = self._initial_iterate()
        dU = np.zeros((G, problem.horizon)) if dU0 is None else dU0
        qp = problem.qp(range(G), dU)
        res = solve_qp(qp, x0=dU.ravel())
        dU = res.x.reshape(G, -1)
        wall = time.perf_counter() - t0
        cost = problem.cost(dU)
        return StepInfo(self.steps_, 1, True, cost, dU, [cost], [], [], [], [], wall, wall)
