"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 a step hit
the iteration cap while ``--strict`` was given.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PRESETS, ConfigError, load_config
from .linear_model import ModelStructureError, linearization_point, realize_state_space
from .linear_model import TuningConstants, to_velocity_form
from .metrics import format_summary, report_metrics
from .plant import greedy_power
from .reference import ReferenceError, load_or_generate_reference
from .simulate import (SimulationError, read_traces, run_centralized_oracle, run_closed_loop,
                       write_report)
from .topology import LayoutError, compute_delays

log = logging.getLogger("windfarm_dmpc")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_NONCONVERGED = 0, 1, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="wfdmpc", description="Distributed MPC for wind-farm "
                                "power tracking against a nonlinear wake model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", default="10T",
                        help=f"INI file or preset name ({', '.join(PRESETS)}); default 10T")
        sp.add_argument("--seed", type=int, help="reference seed")
        sp.add_argument("--gamma", type=float, help="reference amplitude")
        sp.add_argument("--horizon", type=int, help="prediction horizon in samples")
        sp.add_argument("--samples", type=int, help="simulation length N_s")
        if out:
            sp.add_argument("--out", default="runs", help="output directory")

    s = sub.add_parser("simulate", help="closed loop with the distributed controller")
    common(s)
    s.add_argument("--workers", type=int, help="threads for the local solves")
    s.add_argument("--strict", action="store_true",
                   help="exit with code 3 if any step stopped at the iteration cap")
    o = sub.add_parser("oracle", help="closed loop with one centralised QP per step")
    common(o)
    o.add_argument("--strict", action="store_true", help=argparse.SUPPRESS)
    lin = sub.add_parser("linearize", help="write the controller model matrices")
    common(lin)
    r = sub.add_parser("reference", help="generate or inspect the normalised signal")
    common(r)
    r.add_argument("--source", help="read this file instead of generating")
    rep = sub.add_parser("report", help="recompute metrics from a trace CSV")
    rep.add_argument("traces", help="path to a *_traces.csv file")
    rep.add_argument("--p-greedy", type=float, help="normalise by this greedy power (W)")
    return p


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(horizon=args.horizon, gamma=args.gamma, seed=args.seed,
                              workers=getattr(args, "workers", None), n_samples=args.samples)


def _simulate(args, oracle=False):
    cfg = _config(args)
    log.info("%s: %dx%d farm, H=%s, %d samples", args.command, cfg.layout.rows,
             cfg.layout.cols, cfg.controller.get("horizon"), cfg.n_samples)
    run = run_centralized_oracle if oracle else run_closed_loop
    report = run(cfg)
    stem = "oracle" if oracle else "simulate"
    path = write_report(report, args.out, stem)
    print(format_summary(report.metrics))
    print(f"traces written to {path}")
    if args.strict and report.metrics.get("nonconverged_steps", 0):
        print(f"{report.metrics['nonconverged_steps']} steps stopped at the iteration cap",
              file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _linearize(args):
    cfg = _config(args)
    c = cfg.controller
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    point = linearization_point(cfg.layout, cfg.plant, c.get("ct_operating", 0.6))
    tuning = TuningConstants(*(c.get(k, 1.0) for k in ("c_vv", "c_vct", "c_va", "c_pv",
                                                       "c_pct")))
    models = realize_state_space(cfg.layout, compute_delays(cfg.layout), point, tuning,
                                 c_w=c.get("wake_constant", 0.68),
                                 tau=c.get("filter_time_constant", 5.0), power_unit=1e6)
    arrays = {}
    for m in models:
        v = to_velocity_form(m)
        arrays.update({f"A_{m.index}": m.A, f"B_{m.index}": m.B, f"C_{m.index}": m.C,
                       f"cx_{m.index}": m.c_x, f"AI_{m.index}": v.A, f"BI_{m.index}": v.B})
        if m.A_up is not None:
            arrays[f"Aup_{m.index}"] = m.A_up
            arrays[f"AIup_{m.index}"] = v.A_up
    np.savez(out / "model.npz", **arrays)
    meta = {"point": point.to_dict(),
            "states": [m.nx for m in models],
            "output_offsets_MW": [m.c_out for m in models]}
    (out / "model.json").write_text(json.dumps(meta, indent=2))
    print(f"{len(models)} subsystems, {sum(m.nx for m in models)} states; "
          f"written to {out / 'model.npz'}")
    return EXIT_OK


def _reference(args):
    cfg = _config(args)
    ref_cfg = cfg.reference
    source = args.source or ref_cfg.get("source", "synthetic")
    p_greedy = greedy_power(cfg.layout, cfg.plant)
    ref = load_or_generate_reference(source, ref_cfg["gamma"], p_greedy, cfg.n_samples,
                                     ref_cfg.get("seed", 0), ref_cfg.get("base", 0.8),
                                     cfg.layout.sample_time)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "delta.txt", ref.delta, fmt="%.17g")
    above = np.flatnonzero(ref.samples > p_greedy)
    print(f"source: {ref.source}")
    print(f"samples: {len(ref)}, delta range [{ref.delta.min():.4f}, {ref.delta.max():.4f}]")
    print(f"P_greedy: {p_greedy / 1e6:.6f} MW, P_ref range [{ref.samples.min() / 1e6:.4f}, "
          f"{ref.samples.max() / 1e6:.4f}] MW")
    if above.size:
        print(f"reference exceeds P_greedy on {above.size} samples, first at k={above[0]}")
    print(f"written to {out / 'delta.txt'}")
    return EXIT_OK


def _report(args):
    traces = read_traces(args.traces)
    p_greedy = args.p_greedy
    timing = None
    path = Path(args.traces)
    meta = path.with_name(path.name.replace("_traces.csv", "_meta.json"))
    if p_greedy is None and meta.exists():
        p_greedy = json.loads(meta.read_text()).get("p_greedy")
    tfile = path.with_name(path.name.replace("_traces.csv", "_timing.csv"))
    if tfile.exists():
        timing = read_traces(tfile)["parallel_time_s"]
    print(format_summary(report_metrics(traces, p_greedy, timing)))
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": _simulate, "oracle": lambda a: _simulate(a, oracle=True),
                "linearize": _linearize, "reference": _reference, "report": _report}
    try:
        return handlers[args.command](args)
    except (ConfigError, LayoutError, ReferenceError, ModelStructureError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, SimulationError) and isinstance(exc.__cause__, ValueError):
            return EXIT_INVALID
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
