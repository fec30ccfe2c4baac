"""Command-line interface.

Subcommands:
  plan        run the planner on a scenario and write the result bundle
  evaluate    detection series for an explicit waypoint file
  budget      per-source error budget of sigma_pd at a snapshot time
  montecarlo  ensemble validation of the detection-probability dispersion
  validate    parse a scenario and check its invariants

Exit codes: 0 success, 2 configuration error, 3 infeasible, 4 numerical
failure.  Exports are CSV by default (JSON with --format json); dimensional
columns carry a unit suffix and all values are SI.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, InfeasibleError, NumericalError
from .lincov import NoiseSourceSet, error_budget, sigma_pd_series
from .montecarlo import coverage_check, run_ensemble
from .planner import check_validity, evaluate_candidate, plan
from .scenario import load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--out", default=".", metavar="DIR",
        help="output directory (created if missing; default: current dir)",
    )
    common.add_argument(
        "--format", choices=("csv", "json"), default="csv",
        help="numeric table format (default: csv)",
    )
    common.add_argument(
        "--dt", type=float, default=None, metavar="SEC",
        help="override the scenario sample period, s",
    )
    common.add_argument(
        "--quiet", action="store_true", help="suppress progress output"
    )
    parser = argparse.ArgumentParser(
        prog="pdvg",
        description="Detection-aware path planning with covariance analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common],
                       help="plan a path through the scenario's radar field")
    p.add_argument("scenario", help="scenario YAML file")

    p = sub.add_parser("evaluate", parents=[common],
                       help="detection series for an explicit waypoint path")
    p.add_argument("scenario", help="scenario YAML file")
    p.add_argument("waypoints",
                   help="CSV of waypoints: north_m,east_m per row")

    p = sub.add_parser("budget", parents=[common],
                       help="error budget of sigma_pd at a snapshot time")
    p.add_argument("scenario", help="scenario YAML file")
    p.add_argument("--at", type=float, required=True, metavar="SEC",
                   help="snapshot time along the trajectory, s")

    p = sub.add_parser("montecarlo", parents=[common],
                       help="Monte Carlo validation ensemble")
    p.add_argument("scenario", help="scenario YAML file")
    p.add_argument("-n", "--runs", type=int, default=500,
                   help="ensemble size (default: 500)")
    p.add_argument("--seed", type=int, default=0, help="ensemble seed")

    p = sub.add_parser("validate", parents=[common],
                       help="parse a scenario and check its invariants")
    p.add_argument("scenario", help="scenario YAML file")
    return parser


def _say(args, message: str):
    if not args.quiet:
        print(message)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(path_base: Path, fmt: str, header: list[str], rows):
    """Write rows either as CSV with a header or as a JSON list of objects."""
    rows = [[_jsonable(v) for v in row] for row in rows]
    if fmt == "csv":
        path = path_base.with_suffix(".csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    else:
        path = path_base.with_suffix(".json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([dict(zip(header, row)) for row in rows], fh, indent=1)
    return path


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _detection_rows(series, radar_ids):
    rows = []
    for i, rid in enumerate(radar_ids):
        for k, t in enumerate(series.t):
            rows.append(
                [t, rid, series.pd_nominal[i, k], series.sigma_pd[i, k]]
            )
    return rows


def _load_waypoints(path) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as err:
        raise ConfigError(f"cannot read waypoint file {path}: {err}") from err
    rows = []
    for ln in lines:
        parts = [p.strip() for p in ln.split(",")]
        try:
            rows.append([float(parts[0]), float(parts[1])])
        except (ValueError, IndexError):
            if not rows:  # tolerate one header line
                continue
            raise ConfigError(
                f"waypoint file {path}: expected 'north_m,east_m' rows"
            ) from None
    if len(rows) < 2:
        raise ConfigError(f"waypoint file {path}: need at least two waypoints")
    return np.asarray(rows)


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    _say(args, f"scenario '{scenario.name}' is valid: "
               f"{len(scenario.radars)} radar(s), imu grade "
               f"{scenario.imu_grade}, dt {scenario.dt} s")
    return EXIT_OK


def _cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.dt is not None:
        scenario.dt = args.dt
    result = plan(scenario)
    out = _outdir(args)
    log = {
        "scenario": scenario.name,
        "valid": result.valid,
        "iterations": result.iterations,
        "warnings": result.warnings,
        "history": [
            {
                "iteration": h["iteration"],
                "n_violations": h["n_violations"],
                "worst_margin": h["worst_margin"],
                "waypoints_m": np.asarray(h["waypoints"]).tolist(),
            }
            for h in result.history
        ],
    }
    with open(out / "iterations.json", "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=1)
    if not result.valid:
        _say(args, f"no valid path ({result.iterations} iterations); "
                   f"log written to {out / 'iterations.json'}")
        return EXIT_INFEASIBLE
    _write_table(
        out / "waypoints", args.format, ["north_m", "east_m"],
        result.waypoints.tolist(),
    )
    traj = scenario.build_trajectory(result.waypoints)
    _write_table(
        out / "smoothed_path", args.format,
        ["t_s", "north_m", "east_m", "down_m",
         "roll_rad", "pitch_rad", "yaw_rad"],
        [
            [traj.t[k], *traj.p_n[k], *traj.theta[k]]
            for k in range(len(traj))
        ],
    )
    _write_table(
        out / "detection", args.format,
        ["t_s", "radar", "pd_nominal", "sigma_pd"],
        _detection_rows(result.detection, scenario.radar_ids),
    )
    _say(args, f"valid path in {result.iterations} iteration(s); "
               f"outputs written to {out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.dt is not None:
        scenario.dt = args.dt
    waypoints = _load_waypoints(args.waypoints)
    series = evaluate_candidate(waypoints, scenario)
    out = _outdir(args)
    path = _write_table(
        out / "detection", args.format,
        ["t_s", "radar", "pd_nominal", "sigma_pd"],
        _detection_rows(series, scenario.radar_ids),
    )
    violations = check_validity(series, scenario.p_dt, scenario.m_sigma)
    _say(args, f"{series.t.size} samples, {len(violations)} validity "
               f"violation(s); detection series written to {path}")
    return EXIT_OK


def _cmd_budget(args) -> int:
    scenario = load_scenario(args.scenario)
    ctx = scenario.evaluation(dt=args.dt)
    budget = error_budget(ctx, args.at)
    out = _outdir(args)
    rows = [
        [source, budget.sigma3_by_source[source],
         budget.percent_by_source[source]]
        for source in budget.sigma3_by_source
    ]
    rows.append(["Total", budget.total_sigma3, 100.0])
    path = _write_table(
        out / "budget", args.format,
        ["source", "sigma3_pd", "percent_of_total"], rows,
    )
    rid = scenario.radar_ids[budget.radar_index]
    _say(args, f"error budget at t = {budget.t_snapshot} s (radar {rid}): "
               f"total 3*sigma_pd = {budget.total_sigma3:.6f}; "
               f"written to {path}")
    return EXIT_OK


def _cmd_montecarlo(args) -> int:
    scenario = load_scenario(args.scenario)
    ctx = scenario.evaluation(dt=args.dt)
    sources = NoiseSourceSet.all_on()
    series = sigma_pd_series(ctx, sources)
    result = run_ensemble(ctx, args.runs, args.seed, sources)
    coverage = coverage_check(result, series, 3.0)
    out = _outdir(args)
    rows = []
    for i, rid in enumerate(scenario.radar_ids):
        for k, t in enumerate(result.t):
            rows.append(
                [t, rid, result.pd_nominal[i, k], result.mean_error[i, k],
                 result.sigma[i, k], series.sigma_pd[i, k]]
            )
    path = _write_table(
        out / "montecarlo", args.format,
        ["t_s", "radar", "pd_nominal", "mean_error", "ensemble_sigma",
         "lincov_sigma"], rows,
    )
    with open(out / "montecarlo_meta.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "scenario": scenario.name,
                "n_runs": result.n_runs,
                "seed": args.seed,
                "failed_runs": list(result.failed_runs),
                "coverage_3sigma": coverage,
            },
            fh, indent=1,
        )
    _say(args, f"{args.runs} runs, 3-sigma coverage {coverage:.4f}; "
               f"written to {path}")
    return EXIT_OK


_COMMANDS = {
    "validate": _cmd_validate,
    "plan": _cmd_plan,
    "evaluate": _cmd_evaluate,
    "budget": _cmd_budget,
    "montecarlo": _cmd_montecarlo,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
