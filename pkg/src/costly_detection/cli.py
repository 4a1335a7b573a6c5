"""Command-line front end: solve, policy, simulate, sweep.

Every command writes CSV files plus ``config.resolved.json`` into the output
directory.  Exit codes: 0 success, 2 invalid configuration, 3 value
iteration did not converge, 4 a simulated path tripped the observation cap.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_config, read_config_file, set_flat
from .jump_operator import gauss_hermite_rule
from .model import ModelParams
from .simulator import (
    PathBank,
    SimulationGuardError,
    estimate_risk,
    never_policy,
    periodic_policy,
)
from .solver import (
    ConvergenceError,
    SolveResult,
    continuation_region,
    n_observation_policies,
    value_iteration,
)

logger = logging.getLogger("costly_detection")

EXIT_OK, EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_GUARD = 0, 2, 3, 4


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _prepare(config: RunConfig) -> Path:
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    config.write_resolved(out)
    return out


def _solve(config: RunConfig, model: ModelParams | None = None, min_iter: int = 0) -> SolveResult:
    return value_iteration(
        model or config.model,
        grid_size=config.grid_size,
        rule=gauss_hermite_rule(config.quadrature_nodes),
        search=config.t_search,
        tol=config.tol,
        max_iter=config.max_iter,
        min_iter=min_iter,
        threads=config.threads,
    )


def _write_residuals(out: Path, residuals) -> Path:
    return write_csv(out / "residuals.csv", ["n", "sup_norm_delta"],
                     ((n + 1, r) for n, r in enumerate(residuals)))


def _solve_or_record(config: RunConfig, out: Path, min_iter: int = 0) -> SolveResult:
    try:
        return _solve(config, min_iter=min_iter)
    except ConvergenceError as exc:
        _write_residuals(out, exc.residuals)
        raise


def cmd_solve(config: RunConfig) -> list[Path]:
    """values.csv (pi, n, value), residuals.csv, fixed_point.csv."""
    out = _prepare(config)
    result = _solve_or_record(config, out, min_iter=config.n_iterates_to_keep)
    keep = min(config.n_iterates_to_keep, result.iterations)
    grid = result.grid
    rows = ((pi, n, result.iterates[n].values[i])
            for i, pi in enumerate(grid) for n in range(keep + 1))
    files = [
        write_csv(out / "values.csv", ["pi", "n", "value"], rows),
        _write_residuals(out, result.residuals),
        write_csv(out / "fixed_point.csv", ["pi", "value"],
                  zip(grid, result.fixed_point.values)),
    ]
    logger.info("solved in %d iterations, residual %.3e", result.iterations, result.residual)
    return files


def cmd_policy(config: RunConfig) -> list[Path]:
    """policy.csv with t*(pi, V_n) for n = 1..N and pi_star.csv."""
    out = _prepare(config)
    n_max = max(config.n_iterates_to_keep, 1)
    result = _solve_or_record(config, out, min_iter=n_max + 1)
    policies = n_observation_policies(result, config.model, n_max)
    rows = ((pi, n, pol.t_star[i], pol.terminal_wait[i])
            for n, pol in enumerate(policies, start=1) for i, pi in enumerate(pol.grid))
    files = [
        write_csv(out / "policy.csv", ["pi", "n", "t_star", "terminal_wait"], rows),
        write_csv(out / "pi_star.csv", ["n", "pi_star"],
                  ((n, pol.pi_star) for n, pol in enumerate(policies, start=1))),
    ]
    files.append(_write_json(out / "policy_report.json", policy_report(result, policies)))
    return files


def policy_report(result: SolveResult, policies) -> dict:
    """Diagnostics for the empirical structure of the policy (reported, not enforced)."""
    params = result.params
    region, interval = continuation_region(result.fixed_point, params)
    optimal = result.policy
    finite = np.isfinite(optimal.t_star)
    t_fin = optimal.t_star[finite]
    stars = [p.pi_star for p in policies]
    decreasing_in_n = True
    for a, b in zip(policies, policies[1:]):
        both = np.isfinite(a.t_star) & np.isfinite(b.t_star)
        decreasing_in_n &= bool(np.all(b.t_star[both] <= a.t_star[both] + 1e-9))
    return {
        "pi_star": optimal.pi_star,
        "continuation_points": int(region.size),
        "continuation_is_interval": interval,
        "all_finite_t_star_positive": bool(np.all(t_fin > 0)),
        "t_star_nonincreasing_in_pi": bool(np.all(np.diff(t_fin) <= 1e-9)),
        "t_star_nonincreasing_in_n": decreasing_in_n,
        "pi_star_by_n": stars,
        "pi_star_nondecreasing_in_n": bool(np.all(np.diff(stars) >= 0)),
        "iterations": result.iterations,
        "residual": result.residual,
        "search_clipped": result.clipped,
    }


def _write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


RISK_COLUMNS = [
    "pi0", "policy", "n_paths", "total_risk", "se_total", "p_false_alarm", "mean_delay",
    "mean_obs", "risk_posterior_form", "se_posterior_form", "value_function_at_pi0",
]


def cmd_simulate(config: RunConfig, policy_source: str | None = None) -> list[Path]:
    """risk.csv: Monte Carlo risk of one policy at every configured pi0."""
    source = policy_source or config.policy
    out = _prepare(config)
    value = None
    if source == "solved":
        result = _solve_or_record(config, out)
        base_policy, value = result.policy, result.fixed_point
    bank = PathBank(config.seed, config.n_paths)
    rows = []
    for pi0 in config.pi0_list:
        params = dataclasses.replace(config.model, pi0=pi0)
        if source == "solved":
            policy = base_policy
        elif source == "periodic":
            policy = periodic_policy(params, config.interval, config.threshold)
        else:
            policy = never_policy(params)
        est = estimate_risk(params, policy, config.n_paths, config.seed, bank=bank)
        rows.append([
            pi0, source, est.n_paths, est.total_risk, est.se_total, est.p_false_alarm,
            est.mean_delay, est.mean_obs, est.posterior_risk, est.se_posterior,
            float(value(pi0)) if value is not None else math.nan,
        ])
        logger.info("pi0=%g %s: risk %.6f +- %.6f", pi0, source, est.total_risk, est.se_total)
    return [write_csv(out / "risk.csv", RISK_COLUMNS, rows)]


def cmd_sweep(config: RunConfig, axis: str | None = None, values=None) -> list[Path]:
    """sweep.csv (axis, value, pi, V) with one solve per value."""
    axis = axis or config.sweep_axis
    values = list(values or config.sweep_values)
    out = _prepare(config)
    field = {"c": "c", "d": "d", "alpha": "alpha"}[axis]
    rows, solved, failures = [], {}, {}
    for v in values:
        try:
            model = dataclasses.replace(config.model, **{field: v})
            result = _solve(config, model=model)
        except (ValueError, ConvergenceError, AssertionError) as exc:
            failures[fmt(v)] = str(exc)
            logger.error("sweep %s=%g failed: %s", axis, v, exc)
            continue
        solved[v] = result.fixed_point
        rows.extend((axis, v, pi, val) for pi, val in zip(result.grid, result.fixed_point.values))
    files = [write_csv(out / "sweep.csv", ["axis", "value", "pi", "V"], rows)]
    report = {"axis": axis, "values": values, "failures": failures}
    if axis in ("c", "d"):
        ordered = sorted(solved)
        pairs = []
        for lo, hi in zip(ordered, ordered[1:]):
            worst = float(np.max(solved[lo].values - solved[hi].values))
            pairs.append({"from": lo, "to": hi, "max_decrease": max(worst, 0.0),
                          "nondecreasing": worst <= 1e-9})
        report["monotonicity"] = pairs
        report["nondecreasing"] = all(p["nondecreasing"] for p in pairs)
    files.append(_write_json(out / "sweep_report.json", report))
    return files


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key file (model.lambda = 0.1) or JSON")
    flags = [
        ("--alpha", "model.alpha", float), ("--lambda", "model.lambda", float),
        ("--c", "model.c", float), ("--d", "model.d", float),
        ("--grid-size", "grid_size", int), ("--quad-nodes", "quadrature_nodes", int),
        ("--tol", "solver.tol", float), ("--max-iter", "solver.max_iter", int),
        ("--keep", "solver.n_iterates_to_keep", int),
        ("--t-lo", "t_search.t_lo", float),
        ("--paths", "simulate.n_paths", int), ("--seed", "simulate.seed", int),
        ("--threads", "threads", int), ("--out", "output.directory", str),
        ("--interval", "simulate.interval", float), ("--threshold", "simulate.threshold", float),
        ("--policy", "simulate.policy", str), ("--axis", "sweep.axis", str),
    ]
    for flag, key, kind in flags:
        kw = {"choices": ["solved", "periodic", "never"]} if flag == "--policy" else {}
        if flag == "--axis":
            kw = {"choices": ["c", "d", "alpha"]}
        metavar = None if "choices" in kw else flag.lstrip("-").upper().replace("-", "_")
        common.add_argument(flag, dest=key, type=kind, default=None, metavar=metavar, **kw)
    common.add_argument("--pi0", dest="pi0", type=_float_list, default=None,
                        help="initial belief(s), comma separated")
    common.add_argument("--values", dest="sweep.values", type=_float_list, default=None,
                        metavar="VALUES", help="sweep values, comma separated")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="costly-detection", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "policy", "simulate", "sweep"):
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: dict = {}
    for key, value in vars(args).items():
        if "." in key or key in ("grid_size", "quadrature_nodes", "threads"):
            if value is not None:
                set_flat(overrides, key, value)
    if args.pi0 is not None:
        set_flat(overrides, "simulate.pi0", args.pi0)
        set_flat(overrides, "model.pi0", args.pi0[0])
    file_tree = read_config_file(args.config) if args.config else None
    return build_config(overrides, file_tree)


COMMANDS = {"solve": cmd_solve, "policy": cmd_policy, "simulate": cmd_simulate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = config_from_args(args)
    except (ConfigError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    try:
        files = COMMANDS[args.command](config)
    except ConvergenceError as exc:
        logger.error("%s", exc)
        return EXIT_NO_CONVERGENCE
    except SimulationGuardError as exc:
        logger.error("%s (seed %d, path %d)", exc, exc.seed, exc.path_index)
        return EXIT_GUARD
    for path in files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
