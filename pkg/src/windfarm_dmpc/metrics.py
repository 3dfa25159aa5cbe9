"""Tracking and timing summaries of closed-loop traces."""
from __future__ import annotations

import numpy as np

__all__ = ["rmse", "report_metrics", "format_summary"]


def rmse(reference, power):
    """Root mean square of ``reference - power`` over all samples."""
    e = np.asarray(reference, dtype=float) - np.asarray(power, dtype=float)
    if e.size == 0:
        raise ValueError("empty trace")
    return float(np.sqrt(np.sum(e * e) / e.size))


def report_metrics(traces, p_greedy=None, parallel_times=None):
    """Summary statistics of a trace table.

    Parameters
    ----------
    traces : mapping
        Columns ``P_ref``, ``P_total`` and, optionally, ``iterations``,
        ``converged`` and ``CT_<i>``.
    p_greedy : float, optional
        Normalises the RMSE values when given.
    parallel_times : sequence of float, optional
        Per-step parallel-time estimates.
    """
    ref = np.asarray(traces["P_ref"], dtype=float)
    p = np.asarray(traces["P_total"], dtype=float)
    n = ref.size
    out = {"n_samples": int(n), "rmse": rmse(ref, p)}
    q = n - max(n // 4, 1)
    out["rmse_final_quarter"] = rmse(ref[q:], p[q:])
    if p_greedy:
        out["p_greedy"] = float(p_greedy)
        out["rmse_rel"] = out["rmse"] / p_greedy
        out["rmse_final_quarter_rel"] = out["rmse_final_quarter"] / p_greedy
    if "iterations" in traces:
        it = np.asarray(traces["iterations"], dtype=float)
        out["iterations_mean"] = float(it.mean())
        out["iterations_max"] = int(it.max())
    if "converged" in traces:
        out["nonconverged_steps"] = int(np.sum(np.asarray(traces["converged"]) == 0))
    cts = [np.asarray(v, dtype=float) for k, v in traces.items() if k.startswith("CT_")]
    if cts:
        out["ct_min_seen"] = float(min(c.min() for c in cts))
        out["ct_max_seen"] = float(max(c.max() for c in cts))
    if parallel_times is not None and len(parallel_times):
        t = np.asarray(parallel_times, dtype=float)
        out["parallel_time_mean"] = float(t.mean())
        out["parallel_time_max"] = float(t.max())
    return out


def format_summary(metrics):
    lines = []
    for key, value in metrics.items():
        if isinstance(value, float):
            lines.append(f"{key:>24s}: {value:.6g}")
        else:
            lines.append(f"{key:>24s}: {value}")
    return "\n".join(lines)
