"""Command line interface.

    ttiga solve --config run.json [--output report.json] [--format csv|json]
    ttiga geometry validate geometry.json
    ttiga report --format csv|json [--input report.json]

``solve`` exits with 0 iff every level (or every alpha) converged.
"""

from __future__ import annotations

import argparse
import json
import sys

from .geometry import GeometryError, resolve_geometry, validate_multipatch
from .harness import ConfigError, ExperimentConfig, ExperimentReport, run_experiment, write_report

DEFAULT_REPORT = "report.json"


def _cmd_solve(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, ValueError, TypeError) as e:
        print(f"error: cannot load config {args.config}: {e}", file=sys.stderr)
        return 2
    try:
        rep = run_experiment(cfg)
    except (ConfigError, GeometryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    out = args.output or cfg.output or DEFAULT_REPORT
    write_report(rep, out)
    sys.stdout.write(rep.to_csv() if args.format == "csv" else rep.to_json() + "\n")
    for r in rep.rows:
        if r.get("error"):
            print(f"warning: {r['error']}", file=sys.stderr)
    return 0 if rep.all_converged else 1


def _cmd_validate(args) -> int:
    try:
        mp = resolve_geometry(args.path)
    except (OSError, GeometryError, ValueError) as e:
        print(json.dumps({"ok": False, "issues": [str(e)]}, indent=1))
        return 1
    rep = validate_multipatch(mp)
    print(json.dumps(rep.to_dict(), indent=1, sort_keys=True))
    return 0 if rep.ok else 1


def _cmd_report(args) -> int:
    try:
        with open(args.input) as fh:
            rep = ExperimentReport.from_json(fh.read())
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot read report {args.input}: {e}", file=sys.stderr)
        return 2
    sys.stdout.write(rep.to_csv() if args.format == "csv" else rep.to_json() + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ttiga", description="Low-rank multi-patch IgA solver")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run an elliptic or control experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--output", help=f"JSON report path (default: config output or {DEFAULT_REPORT})")
    s.add_argument("--format", choices=("csv", "json"), default="csv", help="stdout format")
    s.set_defaults(func=_cmd_solve)

    g = sub.add_parser("geometry", help="geometry utilities")
    gsub = g.add_subparsers(dest="geometry_command", required=True)
    v = gsub.add_parser("validate", help="check interfaces of a geometry file or builtin name")
    v.add_argument("path")
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("report", help="print a saved report")
    r.add_argument("--format", choices=("csv", "json"), required=True)
    r.add_argument("--input", default=DEFAULT_REPORT)
    r.set_defaults(func=_cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
