"""Command line entry point: run a configured study and emit its tables.

Exit codes: 0 on success, 2 on a configuration/validation error, 3 when an
iteration fails to converge.
"""

import argparse
import os
import sys

from .errors import ConfigError, ConvergenceError, InvalidParameterError
from .harness import emit_table, parse_config, run_study, write_history_csv

__all__ = ["main", "build_parser"]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fracsparse",
        description="Sparse optimal control of spectral fractional diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the study described by a config file")
    run.add_argument("config", help="path to a key=value config file")
    run.add_argument("--output", default=None, help="output directory (overrides config)")
    run.add_argument(
        "--format",
        choices=("csv", "markdown"),
        default="csv",
        help="table format (history files are always CSV)",
    )
    run.add_argument("--verbose", action="store_true")
    return parser


def _run(args):
    spec = parse_config(args.config)
    out_dir = args.output if args.output is not None else spec.output
    os.makedirs(out_dir, exist_ok=True)
    if args.verbose:
        print(f"study={spec.kind} levels={spec.levels} s={spec.cfg.s}", flush=True)
    output = run_study(spec)
    ext = "csv" if args.format == "csv" else "md"
    table_path = os.path.join(out_dir, f"{output.kind}_table.{ext}")
    history_path = os.path.join(out_dir, f"{output.kind}_history.csv")
    emit_table(output.table, table_path, format=args.format)
    write_history_csv(output, history_path)
    if args.verbose:
        for row in output.table.rows:
            print("  " + "  ".join(str(v) for v in row))
        print(f"slope={output.table.slope}")
        for key, val in output.extras.items():
            if key != "reference_control":
                print(f"{key}={val}")
    print(f"wrote {table_path} and {history_path}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
