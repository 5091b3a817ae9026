"""Command line entry point.

Subcommands: ``run``, ``bench-circle``, ``bench-ellipse``, ``sweep`` and
``outlier-demo``. Results go to stdout as JSON; failures are reported as a
single JSON line on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import ConfigError, RunConfig
from .runner import (
    circular_hole_config,
    elliptical_hole_config,
    run_convergence_study,
    run_outlier_demo,
    run_problem,
    write_records,
)


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        out[key.strip()] = parse_value(value)
    return out


def _public(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")


def _configured(cfg: RunConfig, args) -> RunConfig:
    cfg = cfg.with_overrides(parse_overrides(args.set))
    if getattr(args, "summary", None) or getattr(args, "vtk", None):
        over = {}
        if args.summary:
            over["outputs.summary"] = args.summary
        if args.vtk:
            over["outputs.vtk"] = args.vtk
        cfg = cfg.with_overrides(over)
    return cfg


def cmd_run(args) -> int:
    cfg = _configured(RunConfig.load(args.config), args)
    _emit(_public(run_problem(cfg)))
    return 0


def cmd_bench_circle(args) -> int:
    cfg = _configured(circular_hole_config(args.n, args.p, args.k), args)
    _emit(_public(run_problem(cfg)))
    return 0


def cmd_bench_ellipse(args) -> int:
    cfg = _configured(elliptical_hole_config(args.n, args.p, args.k, args.band_k, args.epsilon), args)
    _emit(_public(run_problem(cfg)))
    return 0


def _base_for_sweep(args) -> RunConfig:
    if args.config:
        return RunConfig.load(args.config)
    if args.bench == "circle":
        return circular_hole_config()
    return elliptical_hole_config()


def cmd_sweep(args) -> int:
    base = _base_for_sweep(args).with_overrides(parse_overrides(args.set))
    sweep = {
        "keys": args.key,
        "values": [parse_value(v) for v in args.values.split(",")],
        "label": args.label or args.key[0],
    }
    if args.window:
        sweep["window"] = [int(v) for v in args.window.split(":")]
    result = run_convergence_study(base, sweep)
    if args.csv:
        write_records(result["records"], args.csv, timings=args.timings)
    out = {
        "records": [r.__dict__ for r in result["records"]],
        "slope": result.get("slope"),
        "r2": result.get("r2"),
        "config": base.to_dict(),
        "sweep": sweep,
    }
    if args.csv:
        out["csv"] = args.csv
    _emit(out)
    return 0


def cmd_outlier(args) -> int:
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    outlier = None if args.no_outlier else tuple(args.outlier)
    res = run_outlier_demo(args.out_dir, n=args.n, outlier=outlier, votes=args.votes, resolution=args.resolution)
    res.pop("grids")
    _emit(res)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcfcm", description="Finite cell analysis on oriented point clouds")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")

    def outputs(p):
        p.add_argument("--summary", help="JSON summary path")
        p.add_argument("--vtk", help="field export path (CSV written alongside)")

    p = sub.add_parser("run", help="run a JSON config")
    p.add_argument("config")
    overrides(p)
    outputs(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench-circle", help="plate with circular hole")
    p.add_argument("--n", type=int, default=4096, help="cloud size")
    p.add_argument("--p", type=int, default=12)
    p.add_argument("--k", type=int, default=8)
    overrides(p)
    outputs(p)
    p.set_defaults(func=cmd_bench_circle)

    p = sub.add_parser("bench-ellipse", help="plate with pressurized elliptical hole")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--p", type=int, default=8)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--band-k", type=int, default=8)
    p.add_argument("--epsilon", type=float, default=0.0625)
    overrides(p)
    outputs(p)
    p.set_defaults(func=cmd_bench_ellipse)

    p = sub.add_parser("sweep", help="convergence study over one or more config keys")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--bench", choices=("circle", "ellipse"), default="circle")
    p.add_argument("--key", action="append", required=True, help="dotted key set to each value (repeatable)")
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--label")
    p.add_argument("--window", help="fit window start:stop")
    p.add_argument("--csv")
    p.add_argument("--timings", action="store_true", help="add a wall_time column")
    overrides(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("outlier-demo", help="classification grids with and without voting")
    p.add_argument("--out-dir")
    p.add_argument("--n", type=int, default=90)
    p.add_argument("--outlier", type=float, nargs=2, default=(1.3, 1.3))
    p.add_argument("--no-outlier", action="store_true")
    p.add_argument("--votes", type=int, nargs="+", default=[1, 3])
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(func=cmd_outlier)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(err) + "\n")
        return 2 if isinstance(exc, (ConfigError, FileNotFoundError)) else 1


if __name__ == "__main__":
    sys.exit(main())
