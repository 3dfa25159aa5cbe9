"""Nonlinear wake/turbine model used as the simulated wind farm.

Each row is an independent chain of actuator disks. The wind at a turbine
is the free stream minus the delayed velocity deficits of every upwind
turbine in its row; the deficit of a turbine depends on its own wind, its
filtered thrust coefficient and the cross-sectional wake area, which grows
with the (delayed) thrust of everything upstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .topology import FarmLayout, compute_delays

__all__ = [
    "BETZ_CT",
    "PlantParams",
    "PlantState",
    "WakePlant",
    "PlantError",
    "NotWarmError",
    "induction_factor",
    "wake_area",
    "wake_deficit",
    "turbine_power",
    "ct_filter_step",
    "steady_state",
    "greedy_power",
]

BETZ_CT = 8.0 / 9.0


class PlantError(RuntimeError):
    pass


class NotWarmError(PlantError):
    """The plant state has no history yet; call ``warm_start`` first."""


def induction_factor(ct):
    """Axial induction from thrust, ``a = (1 - sqrt(1 - C_T)) / 2``."""
    ct = np.clip(ct, 0.0, 1.0)
    return 0.5 * (1.0 - np.sqrt(1.0 - ct))


def _wake_ratio(c_w):
    if not 0.0 < c_w < 1.0:
        raise ValueError(f"wake constant must lie in (0, 1), got {c_w!r}")
    return c_w / (1.0 - c_w)


def wake_area(delayed_cts, rotor_area, c_w):
    """Wake cross-section in front of the next turbine.

    ``delayed_cts`` are the thrust coefficients of the emitting turbine and
    everything upwind of it, each already delayed to the emitting turbine.
    The sum runs over the last axis.
    """
    total = np.sum(np.asarray(delayed_cts, dtype=float), axis=-1)
    return rotor_area * (1.0 + 0.5 * _wake_ratio(c_w) * total)


def wake_deficit(v, ct, area, v_inf, c_w, rotor_area):
    """Velocity deficit shed by a turbine with inflow ``v`` and thrust ``ct``."""
    kappa = _wake_ratio(c_w)
    return 0.5 * (rotor_area / area) * ct * (v - kappa * (v_inf - v))


def turbine_power(v, ct, a, rho, rotor_area):
    return 0.5 * rho * np.power(v, 3) * rotor_area * ct * (1.0 - a)


def ct_filter_step(ct_filtered, ct, tau, h):
    """Zero-order-hold discretisation of ``tau * dC/dt + C = C_T``."""
    if tau <= 0 or h <= 0:
        raise ValueError("tau and h must be positive")
    alpha = math.exp(-h / tau)
    return alpha * ct_filtered + (1.0 - alpha) * ct


@dataclass(frozen=True)
class PlantParams:
    wake_constant: float = 0.68
    filter_time_constant: float = 5.0
    induction: Callable = induction_factor
    ct_min: float = 0.01
    ct_max: float = BETZ_CT

    def __post_init__(self):
        _wake_ratio(self.wake_constant)
        if not self.filter_time_constant > 0:
            raise ValueError("filter_time_constant must be positive")
        if not 0.0 <= self.ct_min < self.ct_max:
            raise ValueError("need 0 <= ct_min < ct_max")


@dataclass
class PlantState:
    """Snapshot of the plant at sample ``k``.

    Histories are ring buffers indexed by ``t % depth`` and hold values
    for samples ``k - depth .. k - 1``. ``emitted`` is the total deficit
    leaving a turbine (arrived deficit plus its own), ``ct_sum`` the
    delayed thrust sum that sets the wake area behind it.
    """

    k: int
    ct_filtered: np.ndarray
    ct_applied: np.ndarray
    deficit: np.ndarray
    ct_history: np.ndarray
    emitted: np.ndarray
    ct_sum: np.ndarray
    clamp_count: int = 0

    @property
    def depth(self):
        return self.deficit.shape[0]

    def copy(self):
        return replace(self, **{f: getattr(self, f).copy() for f in
                                ("ct_filtered", "ct_applied", "deficit", "ct_history",
                                 "emitted", "ct_sum")})

    def lagged(self, name, lag):
        """Row ``k - lag`` of history ``name`` (``1 <= lag <= depth``)."""
        if not 1 <= lag <= self.depth:
            raise IndexError(f"lag {lag} outside history depth {self.depth}")
        return getattr(self, name)[(self.k - lag) % self.depth]


@dataclass(frozen=True)
class Outputs:
    power: np.ndarray
    wind: np.ndarray
    deficit: np.ndarray
    area: np.ndarray
    emitted: np.ndarray
    ct_sum: np.ndarray


class WakePlant:
    """Discrete-time nonlinear wind farm.

    Parameters
    ----------
    layout : FarmLayout
    params : PlantParams
    history : int, optional
        Extra ring-buffer depth beyond the longest in-row delay. Consumers
        that read lagged signals (the controller's state reconstruction)
        need at least one gap delay of history.
    """

    def __init__(self, layout: FarmLayout, params: PlantParams | None = None, history=0):
        self.layout = layout
        self.params = params if params is not None else PlantParams()
        self.delays = compute_delays(layout)
        self.depth = self.delays.max_row_delay() + 1 + int(history)
        self._alpha = math.exp(-layout.sample_time / self.params.filter_time_constant)

    # -- state construction -------------------------------------------------
    def warm_start(self, ct=None):
        """State settled at the steady flow for thrust ``ct`` (scalar or per turbine)."""
        G = self.layout.n_turbines
        ct = np.broadcast_to(np.asarray(0.6 if ct is None else ct, dtype=float), (G,)).copy()
        ct = np.clip(ct, self.params.ct_min, self.params.ct_max)
        ss = steady_state(self.layout, self.params, ct)

        def fill(v):
            return np.tile(v, (self.depth, 1))

        return PlantState(
            k=0,
            ct_filtered=ct.copy(),
            ct_applied=ct.copy(),
            deficit=fill(ss.deficit),
            ct_history=fill(ct),
            emitted=fill(ss.emitted),
            ct_sum=fill(ss.ct_sum),
        )

    # -- dynamics -----------------------------------------------------------
    def measure(self, state: PlantState) -> Outputs:
        """Outputs at sample ``k`` (they do not depend on the input at ``k``)."""
        if state is None or state.deficit.size == 0:
            raise NotWarmError("plant state is uninitialised; call warm_start()")
        lay, p = self.layout, self.params
        M, N = lay.rows, lay.cols
        v_inf, A_R = lay.free_stream, lay.rotor_area
        kappa = _wake_ratio(p.wake_constant)
        d = self.delays.by_gap

        ctf = state.ct_filtered.reshape(M, N)
        hist_dv = state.deficit.reshape(state.depth, M, N)
        hist_ct = state.ct_history.reshape(state.depth, M, N)
        wind = np.empty((M, N))
        dv = np.empty((M, N))
        area = np.empty((M, N))
        emitted = np.empty((M, N))
        ct_sum = np.empty((M, N))
        for n in range(N):
            arrived = np.zeros(M)
            ctsum = ctf[:, n].copy()
            for j in range(n):
                lag = d[n - j]
                if lag == 0:
                    arrived += dv[:, j]
                else:
                    arrived += hist_dv[(state.k - lag) % state.depth, :, j]
            # area behind turbine n: thrust of each upwind l delayed to n
            for l in range(n):
                lag = d[n - l]
                ctsum += ctf[:, l] if lag == 0 else hist_ct[(state.k - lag) % state.depth, :, l]
            v = np.clip(v_inf - arrived, 0.0, v_inf)
            wind[:, n] = v
            ct_sum[:, n] = ctsum
            area[:, n] = A_R * (1.0 + 0.5 * kappa * ctsum)
            dv[:, n] = wake_deficit(v, ctf[:, n], area[:, n], v_inf, p.wake_constant, A_R)
            emitted[:, n] = arrived + dv[:, n]
        ctf_flat = state.ct_filtered
        power = turbine_power(wind.ravel(), ctf_flat, p.induction(ctf_flat),
                              lay.air_density, A_R)
        return Outputs(power=power, wind=wind.ravel(), deficit=dv.ravel(),
                       area=area.ravel(), emitted=emitted.ravel(), ct_sum=ct_sum.ravel())

    def step(self, state: PlantState, inputs):
        """Advance one sample with thrust commands ``inputs``.

        Returns ``(new_state, outputs_at_k)``. Commands outside the thrust
        bounds are clamped and counted in ``clamp_count``.
        """
        out = self.measure(state)
        G = self.layout.n_turbines
        u = np.asarray(inputs, dtype=float)
        if u.shape != (G,):
            raise ValueError(f"expected {G} thrust commands, got shape {u.shape}")
        clipped = np.clip(u, self.params.ct_min, self.params.ct_max)
        n_clamped = int(np.count_nonzero(clipped != u))
        new = state.copy()
        slot = state.k % state.depth
        new.deficit[slot] = out.deficit
        new.ct_history[slot] = state.ct_filtered
        new.emitted[slot] = out.emitted
        new.ct_sum[slot] = out.ct_sum
        new.ct_filtered = self._alpha * state.ct_filtered + (1.0 - self._alpha) * clipped
        new.ct_applied = clipped
        new.k = state.k + 1
        new.clamp_count = state.clamp_count + n_clamped
        return new, out


@dataclass(frozen=True)
class SteadyState:
    ct: np.ndarray
    wind: np.ndarray
    deficit: np.ndarray
    area: np.ndarray
    power: np.ndarray
    induction: np.ndarray
    emitted: np.ndarray
    ct_sum: np.ndarray


def steady_state(layout: FarmLayout, params: PlantParams, ct) -> SteadyState:
    """Settled flow for constant thrust, solved column by column.

    With every delayed quantity constant the delay structure drops out, so
    each row is a forward recursion from the free stream.
    """
    M, N = layout.rows, layout.cols
    ct = np.broadcast_to(np.asarray(ct, dtype=float), (M * N,)).reshape(M, N)
    v_inf, A_R = layout.free_stream, layout.rotor_area
    kappa = _wake_ratio(params.wake_constant)
    wind = np.empty((M, N))
    dv = np.empty((M, N))
    area = np.empty((M, N))
    arrived = np.zeros(M)
    ctsum = np.zeros(M)
    for n in range(N):
        v = np.clip(v_inf - arrived, 0.0, v_inf)
        ctsum = ctsum + ct[:, n]
        wind[:, n] = v
        area[:, n] = A_R * (1.0 + 0.5 * kappa * ctsum)
        dv[:, n] = wake_deficit(v, ct[:, n], area[:, n], v_inf, params.wake_constant, A_R)
        arrived = arrived + dv[:, n]
    emitted = np.cumsum(dv, axis=1)
    ct_flat = ct.ravel().copy()
    a = params.induction(ct_flat)
    power = turbine_power(wind.ravel(), ct_flat, a, layout.air_density, A_R)
    return SteadyState(ct=ct_flat, wind=wind.ravel(), deficit=dv.ravel(), area=area.ravel(),
                       power=power, induction=np.asarray(a, dtype=float),
                       emitted=emitted.ravel(), ct_sum=np.cumsum(ct, axis=1).ravel())


def greedy_power(layout: FarmLayout, params: PlantParams | None = None, initial_ct=None,
                 rtol=1e-9):
    """Settled farm power with every turbine at the Betz point.

    Computed twice: by the direct steady-state recursion and by running the
    plant from ``initial_ct`` until the total power stops changing. The two
    must agree to ``1e-6`` relative; otherwise, or if the simulation fails
    to settle, ``PlantError`` is raised.
    """
    params = params if params is not None else PlantParams()
    ct_g = min(BETZ_CT, params.ct_max)
    direct = float(steady_state(layout, params, ct_g).power.sum())

    plant = WakePlant(layout, params)
    state = plant.warm_start(params.ct_min if initial_ct is None else initial_ct)
    max_delay = plant.delays.max_row_delay()
    filter_settle = int(math.ceil(40.0 * params.filter_time_constant / layout.sample_time))
    cap = 10 * max(max_delay, 1) + filter_settle
    command = np.full(layout.n_turbines, ct_g)
    previous = None
    quiet = 0
    for _ in range(cap):
        state, out = plant.step(state, command)
        total = float(out.power.sum())
        if previous is not None and abs(total - previous) < rtol * max(abs(total), 1e-300):
            quiet += 1
            # a constant stretch shorter than the longest delay can be a
            # wake still in transit
            if quiet > max_delay:
                break
        else:
            quiet = 0
        previous = total
    else:
        raise PlantError(f"greedy power did not settle within {cap} samples")
    if abs(total - direct) > 1e-6 * abs(direct):
        raise PlantError(f"simulated greedy power {total} disagrees with steady state {direct}")
    return direct
