"""Closed-loop runs of the controllers against the nonlinear wake plant."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .config import SimulationConfig
from .controller import CentralizedMPC, ConvergenceWarning, JacobiDMPC
from .jacobi import estimate_parallel_time
from .metrics import report_metrics
from .plant import WakePlant, greedy_power, steady_state
from .reference import load_or_generate_reference

__all__ = ["SimulationError", "SimulationReport", "run_closed_loop", "run_centralized_oracle",
           "matching_thrust", "write_report", "read_traces"]


class SimulationError(RuntimeError):
    def __init__(self, k, module, exc):
        super().__init__(f"sample {k}, {module}: {type(exc).__name__}: {exc}")
        self.k = k
        self.module = module


@dataclass
class SimulationReport:
    traces: dict
    metrics: dict
    parallel_times: np.ndarray
    wall_times: np.ndarray
    config: dict
    p_greedy: float
    step_infos: list = field(default_factory=list, repr=False)

    @property
    def rmse(self):
        return self.metrics["rmse"]


def matching_thrust(layout, params, target):
    """Uniform thrust whose settled farm power equals ``target``.

    Clipped to the thrust bounds when the target is out of reach.
    """
    def excess(ct):
        return float(steady_state(layout, params, np.full(layout.n_turbines, ct)).power.sum()
                     - target)

    lo, hi = params.ct_min, params.ct_max
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo >= 0:
        return lo
    if f_hi <= 0:
        return hi
    return brentq(excess, lo, hi, xtol=1e-12)


def _run(config: SimulationConfig, controller, keep_steps=False):
    layout = config.layout
    G = layout.n_turbines
    H = controller.horizon
    p_greedy = greedy_power(layout, config.plant)
    ref = load_or_generate_reference(config.reference.get("source", "synthetic"),
                                     config.reference["gamma"], p_greedy,
                                     config.n_samples + H, config.reference.get("seed", 0),
                                     config.reference.get("base", 0.8), layout.sample_time)
    try:
        controller.fit(layout)
    except Exception as exc:
        raise SimulationError(0, "controller.fit", exc) from exc
    plant = WakePlant(layout, config.plant)
    init = config.initial_ct
    ct0 = matching_thrust(layout, config.plant, ref.samples[0]) if init == "match" else init
    state = plant.warm_start(ct0)

    N = config.n_samples
    cols = {"k": np.arange(N), "P_ref": ref.samples[:N], "P_total": np.empty(N)}
    P = np.empty((N, G))
    CT = np.empty((N, G))
    V = np.empty((N, G))
    iters = np.empty(N, dtype=int)
    conv = np.empty(N, dtype=int)
    cost = np.empty(N)
    par, wall, infos = np.empty(N), np.empty(N), []
    for k in range(N):
        try:
            out = plant.measure(state)
        except Exception as exc:
            raise SimulationError(k, "plant.measure", exc) from exc
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                ct = controller.predict(state, out.power, ref.window(k, H))
        except Exception as exc:
            raise SimulationError(k, "controller", exc) from exc
        info = controller.last_info_
        try:
            state, _ = plant.step(state, ct)
        except Exception as exc:
            raise SimulationError(k, "plant.step", exc) from exc
        P[k], V[k], CT[k] = out.power, out.wind, ct
        iters[k], conv[k], cost[k] = info.iterations, int(info.converged), info.cost
        if info.subproblem_times:
            par[k] = estimate_parallel_time(info.subproblem_times, info.combine_times,
                                            info.prediction_times, info.serial_time)
        else:
            par[k] = info.wall_time
        wall[k] = info.wall_time
        if keep_steps:
            infos.append(info)
    cols["P_total"] = P.sum(axis=1)
    for i in range(G):
        cols[f"P_{i}"] = P[:, i]
    for i in range(G):
        cols[f"CT_{i}"] = CT[:, i]
    for i in range(G):
        cols[f"V_{i}"] = V[:, i]
    cols["iterations"] = iters
    cols["converged"] = conv
    cols["cost"] = cost
    metrics = report_metrics(cols, p_greedy, par)
    metrics["clamp_count"] = int(state.clamp_count)
    metrics["initial_ct"] = float(np.atleast_1d(ct0)[0])
    return SimulationReport(cols, metrics, par, wall, config.to_dict(), p_greedy, infos)


def _controller_kwargs(config):
    kw = dict(config.controller)
    kw.setdefault("ct_min", config.plant.ct_min)
    kw.setdefault("ct_max", config.plant.ct_max)
    return kw


def run_closed_loop(config: SimulationConfig, keep_steps=False):
    """Distributed controller against the plant for ``config.n_samples`` samples."""
    ctrl = JacobiDMPC(**_controller_kwargs(config), n_workers=config.workers)
    return _run(config, ctrl, keep_steps)


def run_centralized_oracle(config: SimulationConfig, keep_steps=False):
    """Same loop with one full QP per step; refused above ``config.centralized_cap``."""
    kw = _controller_kwargs(config)
    kw.pop("weights", None)
    ctrl = CentralizedMPC(**kw, max_size=config.centralized_cap)
    return _run(config, ctrl, keep_steps)


def write_report(report: SimulationReport, out_dir, stem="run"):
    """Write ``<stem>_traces.csv``, ``<stem>_timing.csv`` and ``<stem>_meta.json``.

    The trace file holds only deterministic quantities so repeated runs can
    be compared byte for byte; wall-clock timings go to the timing file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(report.traces)
    n = len(report.traces["k"])
    trace_path = out / f"{stem}_traces.csv"
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(n):
            w.writerow([_fmt(report.traces[c][k]) for c in names])
    with open(out / f"{stem}_timing.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "parallel_time_s", "wall_time_s"])
        for k in range(n):
            w.writerow([k, repr(float(report.parallel_times[k])),
                        repr(float(report.wall_times[k]))])
    meta = {"config": report.config, "metrics": report.metrics, "p_greedy": report.p_greedy,
            "trace_file": trace_path.name}
    (out / f"{stem}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True,
                                                      default=_json_default))
    return trace_path


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_traces(path):
    """Columns of a trace CSV as float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float) if body else np.empty((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}
