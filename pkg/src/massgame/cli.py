"""Command-line entry point: ``massgame <subcommand> --scenario FILE [flags]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 budget or domain error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .density import DomainOverflowError, save_density
from .fields import ConfigurationError, Schedule
from .game import BudgetError, Trajectory, constant_strategy, rollout, solve_lower_value
from .scenario import load_scenario
from . import verify

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3

COMMANDS = (
    "flow-check",
    "transport",
    "rollout",
    "lower-value",
    "dpp-check",
    "residual",
    "verify-example1",
    "verify-example2",
    "invariants",
)
STRATEGIES = ("max-right", "max-left", "track-window", "custom-constant")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def emit_report(report: dict, out_dir) -> Path:
    """Write ``report.json`` with sorted keys so reruns are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return path


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per knot; the last row has no controls or stage cost."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "y", "a", "b", "stage_cost"])
        for k, (t, y) in enumerate(zip(traj.times, traj.positions)):
            last = k == traj.steps
            a = "" if last else repr(float(np.asarray(traj.controls_a[k]).reshape(-1)[0]))
            b = "" if last else traj.b_labels[k]
            stage = "" if last or not traj.stage_costs else repr(float(traj.stage_costs[k]))
            w.writerow([k, repr(float(t)), repr(float(np.asarray(y).reshape(-1)[0])), a, b, stage])


def write_rows_csv(rows, path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="massgame", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="scenario TOML file")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--steps", type=int, help="override the number of time steps")
    p.add_argument("--grid-cells", type=int, help="override the cells per grid axis")
    p.add_argument("--substep", type=float, help="override the RK4 substep")
    p.add_argument("--budget", type=int, default=10**7, help="node budget for the lower value")
    p.add_argument("--strategy", choices=STRATEGIES, default="max-right", help="rollout strategy")
    p.add_argument("--control", type=float, help="player control for custom-constant")
    p.add_argument("--field", type=int, default=0, help="mass dictionary index for transport and rollout")
    return p


def _rollout(sc, args):
    c = sc.dynamics.c
    if args.strategy == "track-window":
        r = getattr(sc.cost.terminal, "r", None)
        if r is None:
            raise ConfigurationError("track-window needs a window-mass terminal cost")
        sched, _ = verify.track_window_schedule(sc, r)
        return rollout(sc, constant_strategy(c), sched)
    if not 0 <= args.field < len(sc.dictB):
        raise ConfigurationError(f"--field {args.field} is not a dictB index")
    sched = Schedule.constant(sc.dictB[args.field], 0.0, sc.T)
    if args.strategy == "custom-constant":
        if args.control is None:
            raise ConfigurationError("custom-constant needs --control")
        a = args.control
    else:
        a = c if args.strategy == "max-right" else -c
    return rollout(sc, constant_strategy(a), sched)


def run(args) -> tuple[dict, int]:
    loaded = load_scenario(args.scenario, steps=args.steps, grid_cells=args.grid_cells, substep=args.substep)
    sc = loaded.scenario
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results, checks = {}, []
    cmd = args.command
    t0 = time.perf_counter()
    if cmd == "flow-check":
        results, checks = verify.flow_checks(sc)
    elif cmd == "transport":
        if not 0 <= args.field < len(sc.dictB):
            raise ConfigurationError(f"--field {args.field} is not a dictB index")
        results, checks, m1 = verify.transport_checks(sc, args.field)
        save_density(m1, out / "density_final.csv")
    elif cmd == "rollout":
        traj = _rollout(sc, args)
        write_trajectory_csv(traj, out / "trajectory.csv")
        results = {"strategy": args.strategy, "J": traj.J, "final_position": traj.positions[-1]}
    elif cmd == "lower-value":
        lv = solve_lower_value(sc, budget=args.budget)
        results = {"V0": lv.value, "argmax_b_path": lv.b_path, "argmin_a_path": lv.a_path, "node_count": lv.node_count}
    elif cmd == "dpp-check":
        results, checks = verify.dpp_checks(sc, args.budget)
    elif cmd == "residual":
        results, checks, rows = verify.residual_sweep(sc)
        write_rows_csv(rows, out / "residual_sweep.csv")
    elif cmd == "verify-example1":
        results, checks, traj = verify.example1_pipeline(sc)
        write_trajectory_csv(traj, out / "trajectory.csv")
    elif cmd == "verify-example2":
        results, checks, traj, rows = verify.example2_pipeline(sc, args.budget)
        write_trajectory_csv(traj, out / "trajectory.csv")
        write_rows_csv(rows, out / "residual_sweep.csv")
    elif cmd == "invariants":
        results, checks = verify.invariant_checks(sc, args.budget)
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks)
    report = {
        "command": cmd,
        "scenario": {"path": loaded.path, "name": sc.name, "sha256": loaded.digest},
        "overrides": {"steps": args.steps, "grid_cells": args.grid_cells, "substep": args.substep},
        "notes": loaded.notes,
        "admissibility": loaded.verdicts,
        "results": results,
        "checks": [c.to_dict() for c in checks],
        "passed": ok,
        "timing": {"seconds": elapsed},
    }
    emit_report(report, out)
    return report, EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report, code = run(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetError, DomainOverflowError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    status = "PASS" if code == EXIT_OK else "FAIL"
    print(f"{args.command}: {status} ({sum(c['passed'] for c in report['checks'])}/{len(report['checks'])} checks)")
    for c in report["checks"]:
        mark = "ok  " if c["passed"] else "FAIL"
        print(f"  {mark} {c['name']}: {c['measured']:.6g} {c['relation']} {c['bound']:.6g}")
    return code


if __name__ == "__main__":
    sys.exit(main())
