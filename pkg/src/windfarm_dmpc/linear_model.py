"""Linearised controller model and its neighbour-coupled state-space form.

State layout of subsystem ``i`` (column ``n`` of its row, gap delay ``g``
to its upwind neighbour)::

    x_i = [ ct_f,                      filtered thrust of i
            e[k-1], ..., e[k-g],       total deficit that left i-1
            s[k-1], ..., s[k-g] ]      delayed thrust sum behind i-1

The most upwind turbine of a row only carries ``ct_f``. The oldest slot of
each line is what arrives at ``i`` now, so the deficit seen by ``i`` and
the wake-area thrust sum behind it are read off the end of the lines; the
neighbour writes slot 0 through ``A_up``. This realises the fused linear
model exactly when every in-row delay is a multiple of the gap delay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .plant import PlantParams, steady_state
from .topology import DelayTable, FarmLayout

__all__ = [
    "TuningConstants",
    "LinearizationPoint",
    "SubsystemModel",
    "VelocityFormModel",
    "ModelStructureError",
    "StateBudgetError",
    "linearization_point",
    "deficit_partials",
    "power_partials",
    "assemble_bias_terms",
    "realize_state_space",
    "to_velocity_form",
    "operating_states",
    "measure_states",
    "simulate_interconnection",
]


class ModelStructureError(ValueError):
    pass


class StateBudgetError(ModelStructureError):
    def __init__(self, index, required, budget):
        super().__init__(f"subsystem {index} needs {required} states, budget is {budget}")
        self.index = index
        self.required = required
        self.budget = budget


@dataclass(frozen=True)
class TuningConstants:
    c_vv: float = 1.0
    c_vct: float = 1.0
    c_va: float = 1.0
    c_pv: float = 1.0
    c_pct: float = 1.0

    def __post_init__(self):
        for name in ("c_vv", "c_vct", "c_va", "c_pv", "c_pct"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class LinearizationPoint:
    """Per-turbine operating values; ``area`` is the wake area behind each turbine."""

    free_stream: float
    wind: np.ndarray
    ct: np.ndarray
    induction: np.ndarray
    area: np.ndarray
    deficit: np.ndarray
    power: np.ndarray
    emitted: np.ndarray
    ct_sum: np.ndarray

    def to_dict(self):
        out = {"free_stream": self.free_stream}
        for name in ("wind", "ct", "induction", "area", "deficit", "power", "emitted", "ct_sum"):
            out[name] = np.asarray(getattr(self, name)).tolist()
        return out


def linearization_point(layout: FarmLayout, params: PlantParams, ct=0.6) -> LinearizationPoint:
    """Steady state of the nonlinear model at thrust ``ct``."""
    G = layout.n_turbines
    ct = np.broadcast_to(np.asarray(ct, dtype=float), (G,))
    if np.any(ct <= params.ct_min) or np.any(ct >= params.ct_max):
        raise ValueError("linearisation thrust must lie strictly inside the thrust bounds")
    ss = steady_state(layout, params, ct)
    return LinearizationPoint(layout.free_stream, ss.wind, ss.ct, ss.induction, ss.area,
                              ss.deficit, ss.power, ss.emitted, ss.ct_sum)


def deficit_partials(point: LinearizationPoint, c_w, rotor_area, j):
    """Partials of the deficit of ``j`` w.r.t. its wind, thrust and wake area."""
    if not 0.0 < c_w < 1.0:
        raise ValueError(f"wake constant must lie in (0, 1), got {c_w!r}")
    kappa = c_w / (1.0 - c_w)
    v0, c0, a0 = point.wind[j], point.ct[j], point.area[j]
    if a0 == 0:
        raise ZeroDivisionError(f"zero wake area at linearisation point of turbine {j}")
    bracket = v0 - kappa * (point.free_stream - v0)
    d_v = 0.5 * (rotor_area / a0) * c0 * (1.0 + kappa)
    d_ct = 0.5 * (rotor_area / a0) * bracket
    d_area = -0.5 * (rotor_area / a0 ** 2) * c0 * bracket
    return d_v, d_ct, d_area


def power_partials(point: LinearizationPoint, rho, rotor_area, i):
    """Partials of turbine power w.r.t. wind and thrust, induction frozen."""
    v0, c0, a0 = point.wind[i], point.ct[i], point.induction[i]
    d_v = 1.5 * rho * v0 ** 2 * rotor_area * c0 * (1.0 - a0)
    d_ct = 0.5 * rho * v0 ** 3 * rotor_area * (1.0 - a0)
    return d_v, d_ct


def assemble_bias_terms(point: LinearizationPoint, constants: TuningConstants,
                        deficit_parts, power_parts, rotor_area):
    """Constant offsets making the tuned model pass through the operating point.

    ``deficit_parts``/``power_parts`` are per-turbine sequences of the
    tuples returned by :func:`deficit_partials` and :func:`power_partials`.
    Returns ``(deficit_bias, power_bias)`` arrays.
    """
    dp = np.asarray(deficit_parts, dtype=float).reshape(-1, 3)
    pp = np.asarray(power_parts, dtype=float).reshape(-1, 2)
    k = constants
    c_dv = (point.deficit - k.c_vv * dp[:, 0] * point.wind - k.c_vct * dp[:, 1] * point.ct
            + k.c_va * (dp[:, 2] * rotor_area - dp[:, 2] * point.area))
    c_p = point.power - k.c_pv * pp[:, 0] * point.wind - k.c_pct * pp[:, 1] * point.ct
    return c_dv, c_p


@dataclass(frozen=True)
class SubsystemModel:
    """``x+ = A x + B u + A_up x_up + c_x``, ``P = C x + c_out``.

    ``c_out`` is the complete output offset (it folds the free-stream wind
    into ``power_bias``). ``deficit_out``/``ctsum_out`` are ``(row, const)``
    pairs giving the signals this subsystem passes downstream.
    """

    index: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    c_x: np.ndarray
    c_out: float
    A_up: np.ndarray | None
    upstream: int | None
    gap: int
    power_bias: float
    deficit_bias: float
    deficit_out: tuple = field(repr=False, default=None)
    ctsum_out: tuple = field(repr=False, default=None)

    @property
    def nx(self):
        return self.A.shape[0]

    def layout(self):
        g = self.gap
        return {"ct_filtered": slice(0, 1), "deficit_line": slice(1, 1 + g),
                "ctsum_line": slice(1 + g, 1 + 2 * g)}


def realize_state_space(layout: FarmLayout, delays: DelayTable, point: LinearizationPoint,
                        constants: TuningConstants | None = None, c_w=0.68, tau=5.0,
                        max_states=20000, power_unit=1.0):
    """Assemble one :class:`SubsystemModel` per turbine.

    Outputs are expressed in ``power_unit`` watts (``1e6`` for MW); states
    keep physical units.
    """
    constants = constants if constants is not None else TuningConstants()
    k = constants
    A_R = layout.rotor_area
    kappa = c_w / (1.0 - c_w)
    alpha = math.exp(-layout.sample_time / tau)
    v_inf = layout.free_stream
    N = layout.cols
    g = delays.by_gap[1] if N > 1 else 0
    if N > 1:
        if g < 1:
            raise ModelStructureError("wake must take at least one sample between neighbours; "
                                      f"gap delay is {g}")
        if not delays.is_additive():
            raise ModelStructureError(f"in-row delays {delays.by_gap} are not multiples of the "
                                      "gap delay; the neighbour-coupled realisation needs "
                                      "additive delays")
    dparts = [deficit_partials(point, c_w, A_R, j) for j in range(layout.n_turbines)]
    pparts = [power_partials(point, layout.air_density, A_R, i) for i in range(layout.n_turbines)]
    c_dv, c_p = assemble_bias_terms(point, k, dparts, pparts, A_R)

    models = []
    for i in range(layout.n_turbines):
        n = layout.col_of(i)
        gi = g if n > 0 else 0
        nx = 1 + 2 * gi
        if nx > max_states:
            raise StateBudgetError(i, nx, max_states)
        dv_v, dv_c, dv_a = dparts[i]
        p_v, p_c = pparts[i]

        # affine signals of x_i as (row, const)
        arrived = np.zeros(nx)
        ctsum = np.zeros(nx)
        ctsum[0] = 1.0
        if gi:
            arrived[gi] = 1.0          # oldest deficit slot
            ctsum[2 * gi] = 1.0        # oldest thrust-sum slot
        wind = (-arrived, v_inf)
        a_coef = k.c_va * dv_a * 0.5 * A_R * kappa
        deficit_row = k.c_vv * dv_v * wind[0] + a_coef * ctsum
        deficit_row[0] += k.c_vct * dv_c
        deficit_const = k.c_vv * dv_v * wind[1] + c_dv[i]
        power_row = k.c_pv * p_v * wind[0]
        power_row[0] += k.c_pct * p_c
        power_const = k.c_pv * p_v * wind[1] + c_p[i]
        power_row = power_row / power_unit
        power_const = power_const / power_unit
        emitted = (arrived + deficit_row, deficit_const)

        A = np.zeros((nx, nx))
        A[0, 0] = alpha
        B = np.zeros((nx, 1))
        B[0, 0] = 1.0 - alpha
        c_x = np.zeros(nx)
        A_up = None
        upstream = None
        if gi:
            for m in range(1, gi):
                A[1 + m, m] = 1.0
                A[1 + gi + m, gi + m] = 1.0
            up = models[i - 1]
            upstream = i - 1
            A_up = np.zeros((nx, up.nx))
            A_up[1] = up.deficit_out[0]
            c_x[1] = up.deficit_out[1]
            A_up[1 + gi] = up.ctsum_out[0]
        models.append(SubsystemModel(
            index=i, A=A, B=B, C=power_row.reshape(1, -1), c_x=c_x, c_out=float(power_const),
            A_up=A_up, upstream=upstream, gap=gi, power_bias=float(c_p[i] / power_unit),
            deficit_bias=float(c_dv[i]), deficit_out=emitted, ctsum_out=(ctsum, 0.0)))
    return models


@dataclass(frozen=True)
class VelocityFormModel:
    """Augmented model on ``[P; dx]`` driven by thrust increments."""

    index: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    A_up: np.ndarray | None
    upstream: int | None

    @property
    def nx(self):
        return self.A.shape[0]


def to_velocity_form(sub: SubsystemModel) -> VelocityFormModel:
    nx = sub.nx
    A = np.zeros((nx + 1, nx + 1))
    A[0, 0] = 1.0
    A[0, 1:] = (sub.C @ sub.A).ravel()
    A[1:, 1:] = sub.A
    B = np.vstack([sub.C @ sub.B, sub.B])
    C = np.zeros((1, nx + 1))
    C[0, 0] = 1.0
    A_up = None
    if sub.A_up is not None:
        A_up = np.zeros((nx + 1, sub.A_up.shape[1] + 1))
        A_up[0, 1:] = (sub.C @ sub.A_up).ravel()
        A_up[1:, 1:] = sub.A_up
    return VelocityFormModel(sub.index, A, B, C, A_up, sub.upstream)


def operating_states(models, point: LinearizationPoint):
    """Subsystem states at the linearisation point."""
    out = []
    for sub in models:
        x = np.zeros(sub.nx)
        x[0] = point.ct[sub.index]
        if sub.gap:
            x[1:1 + sub.gap] = point.emitted[sub.upstream]
            x[1 + sub.gap:] = point.ct_sum[sub.upstream]
        out.append(x)
    return out


def measure_states(models, plant_state):
    """Subsystem states read from the plant's filtered thrust and wake histories."""
    out = []
    for sub in models:
        x = np.empty(sub.nx)
        x[0] = plant_state.ct_filtered[sub.index]
        g = sub.gap
        for m in range(g):
            x[1 + m] = plant_state.lagged("emitted", m + 1)[sub.upstream]
            x[1 + g + m] = plant_state.lagged("ct_sum", m + 1)[sub.upstream]
        out.append(x)
    return out


def simulate_interconnection(models, x0, inputs):
    """Run the coupled subsystems.

    ``inputs`` has shape ``(T, G)``. Returns ``(powers, states)`` with
    ``powers[t]`` the outputs at sample ``t`` (before input ``t``) and
    ``states`` the final state list.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    x = [np.asarray(v, dtype=float).copy() for v in x0]
    powers = np.empty(inputs.shape)
    for t, u in enumerate(inputs):
        powers[t] = [float((m.C @ xi)[0]) + m.c_out for m, xi in zip(models, x)]
        x = [m.A @ x[m.index] + m.B[:, 0] * u[m.index] + m.c_x
             + (m.A_up @ x[m.upstream] if m.A_up is not None else 0.0) for m in models]
    return powers, x
