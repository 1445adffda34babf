"""Command line entry point.

Exit codes: 0 success, 2 scenario parse/validation error, 3 numerical
failure (the failing operation is named on stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, DomainError, NumericalError
from .export import write_record, write_table
from .pipeline import run, sweep
from .scenario import bundled_scenarios, load_scenario

OUTPUT_ENV = "MCFLUIDICS_OUTPUT_DIR"

log = logging.getLogger("mcfluidics")


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    base = os.environ.get(OUTPUT_ENV)
    return Path(base) / name if base else Path("out") / name


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"<cli>:0: --values: {exc}") from exc


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    rec = run(sc)
    out = _out_dir(args, sc.name)
    files = write_record(rec, out)
    for w in rec.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{sc.name}: wrote {len(files)} files to {out}")
    return 0


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"{sc.source}: ok ({sc.pipeline} pipeline)")
    return 0


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    values = _parse_values(args.values)
    records, rows = sweep(sc, args.param, values)
    out = _out_dir(args, sc.name)
    path = write_table(out / "sweep.csv", rows)
    if args.keep_runs:
        for val, rec in zip(values, records):
            write_record(rec, out / f"run_{val:g}")
    print(f"{sc.name}: {len(rows)} runs, table at {path}")
    return 0


def cmd_oracle_check(args) -> int:
    sc = load_scenario(args.scenario)
    sc.outputs.oracle = True
    rec = run(sc)
    out = _out_dir(args, sc.name)
    write_record(rec, out)
    norms = {k: v for k, v in rec.metrics.items() if "linf" in k}
    print(json.dumps(norms, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcfluidics", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scen(sp):
        sp.add_argument("scenario", help="scenario file or bundled name (%s)" % ", ".join(bundled_scenarios()))
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<name> or ./out/<name>)")

    sp = sub.add_parser("run", help="run a scenario and export traces")
    scen(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("validate", help="parse and validate a scenario")
    scen(sp)
    sp.set_defaults(func=cmd_validate)
    sp = sub.add_parser("sweep", help="run a scenario over values of one scalar field")
    scen(sp)
    sp.add_argument("--param", required=True, help="dotted path, e.g. rxd.C_ThL_VI_mol_per_m3")
    sp.add_argument("--values", required=True, help="comma separated list")
    sp.add_argument("--keep-runs", action="store_true", help="also export every run")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("oracle-check", help="paired analytic/oracle run with error norms")
    scen(sp)
    sp.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error in {exc.operation}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
