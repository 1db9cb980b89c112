"""Command-line driver: ``prfmpc run | fig1 | trace | probe | show-config``.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 too many solver failures.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .safety import nominal_level
from .sim import (inclusion_probe, legacy_condition_study, run_trial, run_trials,
                  aggregate)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4
SOLVER_FAILURE_LIMIT = 0.001

TRIAL_COLUMNS = ["trial_index", "variant", "initially_feasible", "rf_ok", "cost", "d_min"]
TIMING_COLUMNS = ["trial_index", "variant", "max_solve_time"]
FIG1_COLUMNS = ["T", "satisfaction_rate", "nominal_rf_rate", "prf_rf_rate"]
TRACE_COLUMNS = [
    "tau", "t", "feasible",
    "ego_p1", "ego_p2", "ego_v1", "ego_v2",
    "ov_p1", "ov_p2",
    "ref_p1", "ref_p2",
    "plan_p1", "plan_p2", "plan_v1", "plan_v2",
    "mu1", "mu2", "sigma11", "sigma12", "sigma22",
    "m1", "m2", "offset", "margin", "level",
]


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def fmt(value) -> str:
    """17 significant digits so floats round-trip exactly."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format(float(value), ".17g")


def write_csv(path: Path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _variants(choice):
    return ["nominal", "prf"] if choice == "both" else [choice]


def _default_parallel():
    try:
        return max(1, int(os.environ.get("PRFMPC_THREADS", "")))
    except ValueError:
        return None


def _load(args, extra=None):
    overrides = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    parallel = getattr(args, "parallel", None) or _default_parallel()
    if parallel is not None:
        overrides["parallel"] = parallel
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    try:
        return load_config(args.config, overrides)
    except OSError as exc:
        raise CommandError(EXIT_CONFIG, f"cannot read config: {exc}") from exc


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot create {out}: {exc}") from exc
    return out


def cmd_run(args) -> int:
    sc = _load(args)
    out = _outdir(sc.output_dir)
    trial_rows, timing_rows, summary = [], [], {}
    failures = 0
    for variant in _variants(args.variant):
        results = run_trials(sc.trial, sc.trials, variant, sc.parallel)
        metrics = aggregate(results, variant, sc.trial.safe_radius)
        failures += metrics.n_solver_failures
        summary[variant] = asdict(metrics)
        for r in results:
            trial_rows.append([r.trial_index, variant, r.initially_feasible, r.rf_ok,
                               r.closed_loop_cost, r.d_min])
            timing_rows.append([r.trial_index, variant, r.max_solve_time])
    doc = {
        "code_version": __version__,
        "config": sc.document,
        "denominators": {
            "rf_rate": "initially feasible trials",
            "rf_rate_all": "all trials",
            "mean_cost": "trials feasible at every step",
            "mean_cost_all": "initially feasible trials",
            "mean_d_min": "initially feasible trials",
            "collision_rate": "initially feasible trials",
        },
        "metrics": summary,
    }
    try:
        write_csv(out / "trials.csv", TRIAL_COLUMNS, trial_rows)
        write_csv(out / "timings.csv", TIMING_COLUMNS, timing_rows)
        with open(out / "summary.json", "w") as fh:
            json.dump(_json_safe(doc), fh, indent=2)
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from exc
    for variant, m in summary.items():
        print(f"{variant:8s} rf_rate={m['rf_rate']:.3f} cost={m['mean_cost']:.3f} "
              f"d_min={m['mean_d_min']:.3f} time={m['mean_max_solve_time']:.4f}s")
    total = sc.trials * len(summary)
    if failures > SOLVER_FAILURE_LIMIT * total:
        print(f"{failures} solver failures out of {total} trials", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def parse_horizons(text: str):
    if ".." in text:
        lo, hi = text.split("..")
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(v) for v in text.split(",") if v.strip()]
    if not values or min(values) < 2:
        raise argparse.ArgumentTypeError("horizons must be integers >= 2, e.g. 2..9 or 2,5,9")
    return values


def cmd_fig1(args) -> int:
    sc = _load(args)
    out = _outdir(sc.output_dir)
    rows = legacy_condition_study(sc.trial, args.horizons, sc.trials, sc.parallel)
    try:
        write_csv(out / "fig1.csv", FIG1_COLUMNS,
                  [[r.horizon, r.satisfaction_rate, r.nominal_rf_rate, r.prf_rf_rate]
                   for r in rows])
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from exc
    for r in rows:
        print(f"T={r.horizon} satisfaction={r.satisfaction_rate:.3f} "
              f"nominal_rf={r.nominal_rf_rate:.3f} prf_rf={r.prf_rf_rate:.3f}")
    return EXIT_OK


def trace_rows(result):
    rows = []
    for step in result.trace:
        x, o = step.ego_state, step.ov_position
        plan, problem = step.plan, step.problem
        for k, h in enumerate(problem.halfspaces):
            planned = plan.x_seq[k] if plan.feasible else np.full(4, np.nan)
            level = nominal_level(h, planned) + h.margin if plan.feasible else math.nan
            ref = problem.reference[h.t]
            rows.append([
                step.tau, h.t, plan.feasible, *x, *o, ref[0], ref[1], *planned,
                *h.mu, h.sigma[0, 0], h.sigma[0, 1], h.sigma[1, 1],
                *h.m, h.offset, h.margin, level,
            ])
    return rows


def cmd_trace(args) -> int:
    sc = _load(args)
    out = _outdir(sc.output_dir)
    try:
        for variant in ("nominal", "prf"):
            # --seed selects the base seed; the trace is trial 0 of that batch
            result = run_trial(sc.trial, variant, 0, record_trace=True)
            write_csv(out / f"trace_{variant}.csv", TRACE_COLUMNS, trace_rows(result))
            print(f"{variant:8s} initially_feasible={result.initially_feasible} "
                  f"rf_ok={result.rf_ok} failed_step={result.failed_step}")
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from exc
    return EXIT_OK


def cmd_probe(args) -> int:
    sc = _load(args)
    out = _outdir(sc.output_dir)
    probe = inclusion_probe(sc.trial, args.samples)
    rows = [[t, tau, probe.pair_frequency[t, tau]] for t, tau in probe.pairs()]
    try:
        write_csv(out / "probe.csv", ["t", "tau", "frequency"], rows)
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from exc
    worst = min(r[2] for r in rows)
    print(f"min pair frequency {worst:.5f} (target {1 - probe.gamma_bar:.5f}), "
          f"joint {probe.joint_frequency:.4f} (target {1 - probe.gamma:.2f})")
    return EXIT_OK


def cmd_show_config(args) -> int:
    sc = _load(args)
    print(json.dumps(sc.document, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prfmpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, trials=True, parallel=True):
        p.add_argument("config", nargs="?", default=None,
                       help="scenario JSON (defaults to the embedded scenario)")
        p.add_argument("--out", default=None, help="output directory")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        if trials:
            p.add_argument("--trials", type=int, default=None)
        if parallel:
            p.add_argument("--parallel", type=int, default=None,
                           help="worker processes (default: PRFMPC_THREADS or config)")

    p = sub.add_parser("run", help="Monte Carlo batch, writes trials.csv and summary.json")
    common(p)
    p.add_argument("--variant", choices=["nominal", "prf", "both"], default="both")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fig1", help="legacy-condition satisfaction and RF rate per horizon")
    common(p)
    p.add_argument("--horizons", type=parse_horizons, default=list(range(2, 10)))
    p.set_defaults(func=cmd_fig1)

    p = sub.add_parser("trace", help="per-step trace of one trial per variant")
    common(p, trials=False, parallel=False)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("probe", help="Monte Carlo check of the one-step inclusion event")
    common(p, trials=False, parallel=False)
    p.add_argument("--samples", type=int, default=100_000)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("show-config", help="print the fully resolved scenario")
    common(p, trials=False, parallel=False)
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
