"""Command-line interface.

Subcommands: ``indices`` (index table for a model file), ``solve``
(gain of a policy on a system file), ``experiment`` (seeded random
benchmark), ``golden`` (built-in regression fixtures), ``validate``
(full-indexability nesting check).  Exit codes: 0 success, 1
validation or acceptance failure, 2 usage error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from . import bench, golden, modelio
from .core import PolicyTable, validate_full_indexability
from .plates import AssetModel, asset_breakpoints, asset_indices
from .station import StationModel, compute_breakpoints, station_indices

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_SOLVER = 3


def _emit(payload, args, csv_rows=None):
    """Write JSON (default) or CSV rows to --out or stdout."""
    fmt = getattr(args, "format", "json")
    out = getattr(args, "out", None)
    if fmt == "csv":
        if csv_rows is None:
            raise ValueError("no CSV rendering for this output")
        fh = open(out, "w", newline="") if out else sys.stdout
        try:
            writer = csv.writer(fh)
            for row in csv_rows:
                writer.writerow(row)
        finally:
            if out:
                fh.close()
    else:
        text = json.dumps(payload, indent=2)
        if out:
            with open(out, "w") as fh:
                fh.write(text + "\n")
        else:
            print(text)


def _load_single_model(path):
    models, _ = modelio.load_models(path)
    if len(models) != 1:
        raise ValueError("this subcommand expects a single-model file")
    return models[0]


def _cmd_indices(args) -> int:
    model = _load_single_model(args.model)
    if isinstance(model, StationModel):
        depth = args.cap or 50
        table = station_indices(model, depth, compute_breakpoints(model, depth=depth))
    else:
        table = asset_indices(model)
    _emit(modelio.index_table_to_dict(table), args,
          csv_rows=modelio.index_table_rows(table))
    return EXIT_OK


def _cmd_solve(args) -> int:
    models, resource = modelio.load_models(args.model)
    if resource is None:
        if isinstance(models[0], StationModel):
            resource = models[0].pool_size
        else:
            resource = models[0].max_level
    caps = [args.cap] * len(models) if args.cap else None
    gamma = bench.evaluate_system(models, resource, args.policy, caps=caps)
    _emit({"policy": args.policy, "gamma": gamma, "resource": resource}, args)
    return EXIT_OK


def _cmd_experiment(args) -> int:
    if args.config:
        with open(args.config) as fh:
            config = bench.GeneratorConfig.from_json(fh.read())
    elif args.preset:
        config = bench.preset(args.preset, count=args.problems or 10,
                              seed=args.seed if args.seed is not None else 0)
    else:
        print("experiment needs --config or --preset", file=sys.stderr)
        return EXIT_USAGE
    overrides = {}
    if args.problems:
        overrides["count"] = args.problems
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = dataclasses.replace(config, **overrides)
    policies = tuple(args.policies.split(","))
    caps = [args.cap] * config.n_projects if args.cap else None
    report = bench.run_experiment(config, policies=policies, caps=caps,
                                  jobs=args.jobs)
    if args.format == "csv" or (args.out and str(args.out).endswith(".csv")):
        bench.write_report_csv(report, args.out or "/dev/stdout")
    elif args.out:
        bench.write_report_json(report, args.out)
    else:
        print(json.dumps({"n": report.n, "stats": report.stats,
                          "failures": report.failures}, indent=2))
    if report.failures:
        for idx, msg in report.failures:
            print(f"instance {idx} failed: {msg}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_golden(args) -> int:
    code = EXIT_OK
    for name, failures in golden.run_all():
        status = "ok" if not failures else "FAIL"
        print(f"{name}: {status}")
        for msg in failures:
            print(f"  {msg}")
        if failures:
            code = EXIT_FAIL
    return code


def _cmd_validate(args) -> int:
    model = _load_single_model(args.model)
    if isinstance(model, StationModel):
        seq = compute_breakpoints(model, depth=args.cap or 50)
        family = {w: [p] for w, p in seq.to_multiplier_family().items()}
    else:
        sweep = asset_breakpoints(model)
        family = {}
        for h_lo, h_hi, pol in sweep.intervals:
            h_rep = 2.0 * h_lo if np.isinf(h_hi) else 0.5 * (h_lo + h_hi)
            # charge space: resource price is the reciprocal multiplier
            family[1.0 / h_rep] = [PolicyTable(levels=pol.levels.copy())]
    report = validate_full_indexability(family)
    payload = {"passed": bool(report), "violations": report.violations[:20]}
    _emit(payload, args)
    return EXIT_OK if report else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="indexalloc",
        description="Index policies for divisible-resource allocation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("indices", help="index table for a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--cap", type=int, help="state depth for station tables")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=_cmd_indices)

    p = sub.add_parser("solve", help="gain of a policy on a system file")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", required=True,
                   choices=["optimal", "index", "static", "myopic"])
    p.add_argument("--cap", type=int, help="per-station truncation cap")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json"], default="json")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("experiment", help="seeded random benchmark")
    p.add_argument("--config", help="GeneratorConfig JSON file")
    p.add_argument("--preset", help="built-in preset name")
    p.add_argument("--problems", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--policies", default="index,static,optimal",
                   help="comma-separated subset of index,static,myopic,optimal")
    p.add_argument("--cap", type=int)
    p.add_argument("--tol", type=float, help="accepted for interface parity")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("golden", help="run built-in regression fixtures")
    p.set_defaults(func=_cmd_golden)

    p = sub.add_parser("validate", help="full-indexability nesting check")
    p.add_argument("--model", required=True)
    p.add_argument("--cap", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=["json"], default="json")
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
