"""Command-line front-end: simulate, fit, select, benchmark, transform.

Every command is deterministic given its configuration (seeds included).
Options may come from a JSON config file (``--config``), with explicit
flags taking precedence; unknown config keys are rejected. Exit codes:
0 success, 2 usage/config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import FORMATS, load_three_way, preprocess, save_three_way
from .em import FitResult, MixtureParams, fit
from .errors import DataError, TrimixError
from .matnorm import SpdMatrix
from .penalties import PENALTY_KINDS, PenaltyConfig
from .selection import grid_search, write_grid_csv
from .simulate import (SCENARIOS, ScenarioSpec, run_experiment,
                       simulate_dataset, write_report_csv)

CONFIG_SCHEMA_VERSION = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
JOBS_ENV_VAR = "TRIMIX_JOBS"


def params_to_dict(params: MixtureParams) -> dict:
    return {
        "tau": params.tau.tolist(),
        "means": params.means.tolist(),
        "omegas": [o.values.tolist() for o in params.omegas],
        "gammas": [g.values.tolist() for g in params.gammas],
    }


def params_from_dict(payload: dict) -> MixtureParams:
    return MixtureParams(
        np.asarray(payload["tau"], dtype=float),
        np.asarray(payload["means"], dtype=float),
        tuple(SpdMatrix(o) for o in payload["omegas"]),
        tuple(SpdMatrix(g) for g in payload["gammas"]),
    )


def fit_result_to_dict(result: FitResult) -> dict:
    return {
        "schema": CONFIG_SCHEMA_VERSION,
        "converged": result.converged,
        "degenerate": result.degenerate,
        "message": result.message,
        "iterations": result.iterations,
        "loglik": result.loglik,
        "d0": result.d0,
        "bic": result.bic,
        "pen_loglik_trace": result.pen_loglik_trace.tolist(),
        "labels": result.labels.tolist(),
        "params": params_to_dict(result.params),
    }


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _write_labels_csv(labels, path: Path, unit_ids=None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "label"])
        for i, lab in enumerate(labels):
            unit = unit_ids[i] if unit_ids else str(i + 1)
            writer.writerow([unit, int(lab)])


def _load_config(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(_usage_error(f"cannot read config {path}: {exc}"))
    if not isinstance(payload, dict):
        raise SystemExit(_usage_error("config must be a JSON object"))
    schema = payload.pop("schema", CONFIG_SCHEMA_VERSION)
    if schema != CONFIG_SCHEMA_VERSION:
        raise SystemExit(_usage_error(f"unsupported config schema {schema!r}"))
    unknown = set(payload) - allowed
    if unknown:
        raise SystemExit(_usage_error(
            f"unknown config keys {sorted(unknown)}; allowed: {sorted(allowed)}"))
    return payload


def _usage_error(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _merge(args: argparse.Namespace, config: dict, key: str, default):
    """Explicit flag > config file > default."""
    value = getattr(args, key.replace("-", "_"), None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _parse_grid(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        values = [float(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise SystemExit(_usage_error(f"bad grid {text!r}: {exc}"))
    if not values:
        raise SystemExit(_usage_error(f"empty grid {text!r}"))
    return values


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def cmd_simulate(args) -> int:
    config = _load_config(args.config, {"scenario", "seed", "format", "out"})
    scenario = _merge(args, config, "scenario", "alternated-blocks")
    seed = int(_merge(args, config, "seed", 0))
    fmt = _merge(args, config, "format", "long-csv")
    out = Path(_merge(args, config, "out", "."))
    if scenario not in SCENARIOS:
        return _usage_error(f"unknown scenario {scenario!r}; pick from {SCENARIOS}")
    if fmt not in FORMATS:
        return _usage_error(f"unknown format {fmt!r}; pick from {FORMATS}")
    spec = ScenarioSpec(name=scenario, seed=seed)
    data, labels, truth = simulate_dataset(spec)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "long-csv" else "json"
    save_three_way(data, out / f"dataset.{ext}", fmt)
    _write_labels_csv(labels, out / "true_labels.csv", data.unit_ids)
    _write_json({"schema": CONFIG_SCHEMA_VERSION, "scenario": scenario,
                 "seed": seed, "params": params_to_dict(truth)},
                out / "true_params.json")
    print(f"wrote dataset ({data.n} x {data.p} x {data.q}), labels, and "
          f"parameters under {out}")
    return 0


def cmd_fit(args) -> int:
    allowed = {"data", "format", "n-components", "lambda1", "lambda2", "lambda3",
               "kind", "eps", "max-iter", "seed", "fixed-step", "out"}
    config = _load_config(args.config, allowed)
    data_path = _merge(args, config, "data", None)
    if data_path is None:
        return _usage_error("fit requires --data")
    fmt = _merge(args, config, "format", "long-csv")
    k = _merge(args, config, "n-components", None)
    if k is None:
        return _usage_error("fit requires --n-components")
    penalty = PenaltyConfig(
        float(_merge(args, config, "lambda1", 0.0)),
        float(_merge(args, config, "lambda2", 0.0)),
        float(_merge(args, config, "lambda3", 0.0)),
        kind=_merge(args, config, "kind", "group-row"))
    out = Path(_merge(args, config, "out", "."))
    data = load_three_way(data_path, fmt)
    result = fit(data, int(k), penalty,
                 eps=float(_merge(args, config, "eps", 1e-5)),
                 max_iter=int(_merge(args, config, "max-iter", 500)),
                 seed=int(_merge(args, config, "seed", 0)),
                 fixed_step=bool(_merge(args, config, "fixed-step", False)))
    out.mkdir(parents=True, exist_ok=True)
    _write_json(fit_result_to_dict(result), out / "fit.json")
    _write_labels_csv(result.labels, out / "labels.csv", data.unit_ids)
    print(f"fit: converged={result.converged} iterations={result.iterations} "
          f"loglik={result.loglik:.4f} d0={result.d0} bic={result.bic:.4f}")
    if result.degenerate:
        print(f"degenerate run: {result.message}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def cmd_select(args) -> int:
    allowed = {"data", "format", "k-grid", "l1-grid", "l2-grid", "l3-grid",
               "kind", "eps", "max-iter", "seed", "out"}
    config = _load_config(args.config, allowed)
    data_path = _merge(args, config, "data", None)
    if data_path is None:
        return _usage_error("select requires --data")
    fmt = _merge(args, config, "format", "long-csv")
    kind = _merge(args, config, "kind", "group-row")
    if kind not in PENALTY_KINDS:
        return _usage_error(f"unknown kind {kind!r}")
    k_grid = [int(v) for v in _parse_grid(_merge(args, config, "k-grid", "3"))]
    l1 = _parse_grid(_merge(args, config, "l1-grid", "0"))
    l2 = _parse_grid(_merge(args, config, "l2-grid", "0"))
    l3 = _parse_grid(_merge(args, config, "l3-grid", "0"))
    out = Path(_merge(args, config, "out", "."))
    data = load_three_way(data_path, fmt)
    result = grid_search(
        data, k_grid, l1, l2, l3, kind=kind,
        eps=float(_merge(args, config, "eps", 1e-5)),
        max_iter=int(_merge(args, config, "max-iter", 500)),
        master_seed=int(_merge(args, config, "seed", 0)))
    out.mkdir(parents=True, exist_ok=True)
    write_grid_csv(result, out / "grid.csv")
    _write_json(fit_result_to_dict(result.best_fit), out / "best_fit.json")
    best = result.best
    print(f"best: K={best.n_components} lambda=({best.lambda1:g}, "
          f"{best.lambda2:g}, {best.lambda3:g}) bic={best.bic:.4f} d0={best.d0}")
    return 0


def cmd_benchmark(args) -> int:
    allowed = {"scenario", "reps", "methods", "seed", "eps", "max-iter",
               "l1-grid", "l2-grid", "l3-grid", "jobs", "out"}
    config = _load_config(args.config, allowed)
    scenario = _merge(args, config, "scenario", "alternated-blocks")
    if scenario not in SCENARIOS:
        return _usage_error(f"unknown scenario {scenario!r}; pick from {SCENARIOS}")
    reps = int(_merge(args, config, "reps", 20))
    if reps < 1:
        return _usage_error("reps must be >= 1")
    methods_raw = _merge(args, config, "methods", "full,group,lasso")
    methods = ([m.strip() for m in methods_raw.split(",")]
               if isinstance(methods_raw, str) else list(methods_raw))
    grids = None
    grid_flags = [_merge(args, config, key, None)
                  for key in ("l1-grid", "l2-grid", "l3-grid")]
    if any(g is not None for g in grid_flags):
        if not all(g is not None for g in grid_flags):
            return _usage_error("provide all of --l1-grid/--l2-grid/--l3-grid or none")
        shared = tuple(_parse_grid(g) for g in grid_flags)
        grids = {m: shared for m in methods if m != "full"}
    seed = int(_merge(args, config, "seed", 0))
    jobs = int(_merge(args, config, "jobs", _default_jobs()))
    out = Path(_merge(args, config, "out", "."))
    spec = ScenarioSpec(name=scenario, seed=seed)
    report = run_experiment(
        spec, reps, methods, grids,
        eps=float(_merge(args, config, "eps", 1e-5)),
        max_iter=int(_merge(args, config, "max-iter", 500)),
        n_jobs=jobs)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "report.csv")
    _write_json({"schema": CONFIG_SCHEMA_VERSION, **report.summary()},
                out / "summary.json")
    for method, entry in report.summary()["methods"].items():
        print(f"{method}: ARI {entry['ari']['mean']:.3f} ({entry['ari']['sd']:.3f}) "
              f"F1 {entry['f1']['mean']:.3f} d0 {entry['d0']['mean']:.1f}")
    if report.failures and not report.records:
        print("all replications failed", file=sys.stderr)
        return EXIT_NUMERICAL
    for rep, method, msg in report.failures:
        print(f"failed: rep {rep} method {method}: {msg}", file=sys.stderr)
    return 0


def cmd_transform(args) -> int:
    allowed = {"data", "format", "out-file", "log-transform", "center-cellwise",
               "log-offset"}
    config = _load_config(args.config, allowed)
    data_path = _merge(args, config, "data", None)
    out_file = _merge(args, config, "out-file", None)
    if data_path is None or out_file is None:
        return _usage_error("transform requires --data and --out-file")
    fmt = _merge(args, config, "format", "long-csv")
    data = load_three_way(data_path, fmt)
    transformed = preprocess(
        data,
        log_transform=bool(_merge(args, config, "log-transform", False)),
        center_cellwise=bool(_merge(args, config, "center-cellwise", False)),
        log_offset=float(_merge(args, config, "log-offset", 0.0)))
    save_three_way(transformed, out_file, fmt)
    print(f"wrote transformed dataset to {out_file}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trimix",
        description="Sparse model-based clustering of three-way data.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="write a synthetic scenario dataset")
    p_sim.add_argument("--scenario", choices=SCENARIOS)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--format", choices=FORMATS)
    p_sim.add_argument("--out")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", parents=[common],
                           help="fit one penalized mixture")
    p_fit.add_argument("--data")
    p_fit.add_argument("--format", choices=FORMATS)
    p_fit.add_argument("--n-components", type=int)
    p_fit.add_argument("--lambda1", type=float)
    p_fit.add_argument("--lambda2", type=float)
    p_fit.add_argument("--lambda3", type=float)
    p_fit.add_argument("--kind", choices=PENALTY_KINDS)
    p_fit.add_argument("--eps", type=float)
    p_fit.add_argument("--max-iter", type=int)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--fixed-step", action="store_const", const=True)
    p_fit.add_argument("--out")
    p_fit.set_defaults(func=cmd_fit)

    p_sel = sub.add_parser("select", parents=[common],
                           help="BIC grid search over (K, lambda)")
    p_sel.add_argument("--data")
    p_sel.add_argument("--format", choices=FORMATS)
    p_sel.add_argument("--k-grid")
    p_sel.add_argument("--l1-grid")
    p_sel.add_argument("--l2-grid")
    p_sel.add_argument("--l3-grid")
    p_sel.add_argument("--kind", choices=PENALTY_KINDS)
    p_sel.add_argument("--eps", type=float)
    p_sel.add_argument("--max-iter", type=int)
    p_sel.add_argument("--seed", type=int)
    p_sel.add_argument("--out")
    p_sel.set_defaults(func=cmd_select)

    p_bench = sub.add_parser("benchmark", parents=[common],
                             help="replicate a scenario and compare methods")
    p_bench.add_argument("--scenario", choices=SCENARIOS)
    p_bench.add_argument("--reps", type=int)
    p_bench.add_argument("--methods")
    p_bench.add_argument("--seed", type=int)
    p_bench.add_argument("--eps", type=float)
    p_bench.add_argument("--max-iter", type=int)
    p_bench.add_argument("--l1-grid")
    p_bench.add_argument("--l2-grid")
    p_bench.add_argument("--l3-grid")
    p_bench.add_argument("--jobs", type=int)
    p_bench.add_argument("--out")
    p_bench.set_defaults(func=cmd_benchmark)

    p_tr = sub.add_parser("transform", parents=[common],
                          help="log-transform and/or cell-wise center a dataset")
    p_tr.add_argument("--data")
    p_tr.add_argument("--format", choices=FORMATS)
    p_tr.add_argument("--out-file")
    p_tr.add_argument("--log-transform", action="store_const", const=True)
    p_tr.add_argument("--center-cellwise", action="store_const", const=True)
    p_tr.add_argument("--log-offset", type=float)
    p_tr.set_defaults(func=cmd_transform)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrimixError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        return _usage_error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
