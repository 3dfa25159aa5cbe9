"""Weighted Jacobi iteration over overlapping turbine groups.

One subproblem per turbine ``i`` optimises the increments of ``i`` and of
every turbine its wake reaches within the horizon, with all other
increments frozen at the previous iterate. The local optima are combined
convexly; since the cost is convex and every local solution is feasible,
the combined iterate is feasible and never costs more than the previous
one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .qp import QPError, build_cost, solve_qp

__all__ = [
    "JacobiConfig",
    "SubproblemSpec",
    "StepProblem",
    "JacobiResult",
    "make_subproblems",
    "solve_local",
    "jacobi_iterate",
    "estimate_parallel_time",
]


@dataclass(frozen=True)
class JacobiConfig:
    max_iterations: int = 200
    tol: float = 1e-2
    init_scale: float = 2.0
    weights: tuple | None = None

    def __post_init__(self):
        if not self.max_iterations > 0:
            raise ValueError("max_iterations must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.init_scale > 1:
            raise ValueError("init_scale must exceed 1")

    def resolve_weights(self, n):
        if self.weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"expected {n} weights, got {w.shape}")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to one")
        return w


@dataclass(frozen=True)
class SubproblemSpec:
    """Free turbines of one local problem and the outputs they can move."""

    index: int
    turbine: int
    free: tuple
    evaluation: tuple

    def complement(self, n_turbines):
        s = set(self.free)
        return tuple(j for j in range(n_turbines) if j not in s)


def make_subproblems(layout, sets, horizon=None):
    """One subproblem per turbine: the turbine plus its horizon-downstream set."""
    if horizon is not None and horizon != sets.horizon:
        raise ValueError(f"interaction sets were built for horizon {sets.horizon}, not {horizon}")
    specs = []
    for i in range(layout.n_turbines):
        free = (i,) + tuple(sets.downstream_h[i])
        ev = set(free)
        for j in free:
            ev.update(sets.downstream_h[j])
        specs.append(SubproblemSpec(i, i, free, tuple(sorted(ev))))
    return specs


@dataclass
class StepProblem:
    """Data of one receding-horizon optimisation.

    ``states`` are velocity-form states at ``k``; ``ct_prev`` the thrusts
    applied at ``k - 1``; ``y_ref`` the farm reference for ``k+1 .. k+H`` in
    the predictor's power unit.
    """

    predictor: object
    states: list
    y_ref: np.ndarray
    q: float
    r: float
    ct_prev: np.ndarray
    ct_min: float
    ct_max: float

    @property
    def n_turbines(self):
        return len(self.states)

    @property
    def horizon(self):
        return self.predictor.horizon

    def predictions(self, dU):
        return self.predictor.predict_all(self.states, dU)

    def cost(self, dU, y=None):
        y = self.predictions(dU) if y is None else y
        e = np.sum(y, axis=0) - self.y_ref
        return float(self.q ** 2 * e @ e + self.r ** 2 * np.sum(np.asarray(dU) ** 2))

    def qp(self, free, dU, y=None):
        return build_cost(self.predictor, self.states, self.y_ref, self.q, self.r, free, dU,
                          self.ct_prev, self.ct_min, self.ct_max, y_current=y)

    def feasible(self, dU, tol=1e-9):
        c = self.ct_prev[:, None] + np.cumsum(dU, axis=1)
        return bool(np.all(c >= self.ct_min - tol) and np.all(c <= self.ct_max + tol))


def _solve_block(spec: SubproblemSpec, dU, y_total, problem: StepProblem):
    """Local optimum of the free block, shape ``(len(spec.free), H)``."""
    qp = build_cost(problem.predictor, problem.states, problem.y_ref, problem.q, problem.r,
                    spec.free, dU, problem.ct_prev, problem.ct_min, problem.ct_max,
                    y_total=y_total)
    x0 = np.concatenate([dU[l] for l in spec.free])
    try:
        res = solve_qp(qp, x0=x0)
    except QPError as exc:
        raise type(exc)(f"subproblem {spec.index}: {exc}") from exc
    return res.x.reshape(len(spec.free), -1)


def solve_local(spec: SubproblemSpec, dU, y, problem: StepProblem):
    """Optimise the free block of ``spec`` with everything else frozen.

    ``y`` are the shared per-turbine predictions at ``dU``. Returns the full
    ``(G, H)`` increment array: the previous iterate outside the free set,
    the local optimum inside.
    """
    block = _solve_block(spec, np.asarray(dU, dtype=float), np.sum(y, axis=0), problem)
    out = np.array(dU, dtype=float, copy=True)
    out[list(spec.free)] = block
    return out


@dataclass
class JacobiResult:
    dU: np.ndarray
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    cost_history: list = field(default_factory=list)
    subproblem_times: list = field(default_factory=list)
    combine_times: list = field(default_factory=list)
    prediction_times: list = field(default_factory=list)
    serial_time: float = 0.0
    wall_time: float = 0.0
    initial_prediction_time: float = 0.0
    parallel_time: float = 0.0

    def trace(self):
        """One record per iteration: index, cost, largest residual, solve durations."""
        return [{"iteration": p + 1, "cost": self.cost_history[p + 1],
                 "max_residual": float(np.max(self.residual_history[p])),
                 "subproblem_durations": list(self.subproblem_times[p])}
                for p in range(self.iterations)]


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def _membership(subproblems, weights, n_turbines):
    """For each turbine: the ``(z, row)`` pairs holding it and the weight left over."""
    holders = [[] for _ in range(n_turbines)]
    for z, spec in enumerate(subproblems):
        for row, l in enumerate(spec.free):
            holders[l].append((z, row))
    rest = np.array([1.0 - sum(weights[z] for z, _ in h) for h in holders])
    return holders, rest


def _combine_turbine(i, dU_i, blocks, holders_i, rest_i, weights):
    new = rest_i * dU_i
    for z, row in holders_i:
        new = new + weights[z] * blocks[z][row]
    return new, float(np.linalg.norm(new - dU_i))


def jacobi_iterate(problem: StepProblem, subproblems, config: JacobiConfig, dU0=None,
                   executor=None):
    """Run the weighted Jacobi iteration to convergence or the iteration cap.

    ``executor`` (anything with an order-preserving ``map``) runs the local
    solves and the prediction updates; every task reads the same frozen
    snapshot, so the iterates do not depend on how many workers it has.

    The combination is done turbine by turbine: the new sequence of
    turbine ``i`` mixes the local solutions of the subproblems that free
    ``i`` with its previous sequence, weighted by the remaining subproblems.
    This equals the full weighted sum and lets each turbine combine its own
    part, so the recorded combine time is the slowest turbine's.
    """
    t_start = time.perf_counter()
    G, H = problem.n_turbines, problem.horizon
    w = config.resolve_weights(len(subproblems))
    holders, rest = _membership(subproblems, w, G)
    mapper = executor.map if executor is not None else map
    predict = problem.predictor.predict

    def predict_all(dU):
        return list(mapper(lambda i: _timed(predict, i, problem.states, dU), range(G)))

    dU = np.zeros((G, H)) if dU0 is None else np.array(dU0, dtype=float, copy=True)
    pred = predict_all(dU)
    y = np.array([v for v, _ in pred])
    initial = max(t for _, t in pred)
    measured = sum(t for _, t in pred)
    eps = np.full(G, config.init_scale * config.tol)
    result = JacobiResult(dU, 0, False)
    t0 = time.perf_counter()
    result.cost_history.append(problem.cost(dU, y))
    instrumentation = time.perf_counter() - t0
    p = 0
    while np.any(eps > config.tol) and p <= config.max_iterations:
        snap_dU, snap_total = dU, np.sum(y, axis=0)
        timed = list(mapper(lambda s: _timed(_solve_block, s, snap_dU, snap_total, problem),
                            subproblems))
        blocks = [b for b, _ in timed]
        combined = [_timed(_combine_turbine, i, dU[i], blocks, holders[i], rest[i], w)
                    for i in range(G)]
        new = np.array([c[0][0] for c in combined])
        eps = np.array([c[0][1] for c in combined])
        pred = predict_all(new)
        dU = new
        y = np.array([v for v, _ in pred])
        p += 1
        sub_t = [t for _, t in timed]
        comb_t = [t for _, t in combined]
        pred_t = [t for _, t in pred]
        measured += sum(sub_t) + sum(comb_t) + sum(pred_t)
        t0 = time.perf_counter()
        result.residual_history.append(eps.copy())
        result.cost_history.append(problem.cost(dU, y))
        result.subproblem_times.append(sub_t)
        result.combine_times.append(max(comb_t))
        result.prediction_times.append(pred_t)
        instrumentation += time.perf_counter() - t0
    result.dU = dU
    result.iterations = p
    result.converged = not np.any(eps > config.tol)
    result.wall_time = time.perf_counter() - t_start
    # everything not inside a parallel section or the trace bookkeeping
    result.serial_time = max(result.wall_time - measured - instrumentation, 0.0)
    result.initial_prediction_time = initial
    result.parallel_time = estimate_parallel_time(
        result.subproblem_times, result.combine_times, result.prediction_times,
        result.serial_time + initial)
    return result


def estimate_parallel_time(subproblem_times, combine_times, prediction_times, serial=0.0):
    """Per-step time if every subproblem and prediction had its own core.

    Each iteration costs its slowest local solve, the combine, and its
    slowest prediction update; ``serial`` covers everything else.
    """
    total = float(serial)
    for sub, comb, pred in zip(subproblem_times, combine_times, prediction_times):
        total += (max(sub) if len(sub) else 0.0) + comb + (max(pred) if len(pred) else 0.0)
    return total
