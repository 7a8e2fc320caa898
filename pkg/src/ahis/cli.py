"""Command line interface.

    ahis analyze <poly.json|poly.txt> [--epsilon 0.1 --q-max 6 --nr 512
        --modes 32 --t 1e-4:1e-1:48 --seed 7 --out report.json]

plus one subcommand per stage (diagram, parametrize, metric, heat) for
piecemeal runs.  Exit codes: 0 ok, 2 parse error, 3 stage failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from .polynomial import PolynomialError
from .report import (STAGES, AnalysisConfig, emit_report, exponent_table_csv,
                     run_pipeline)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_STAGE = 3
EXIT_IO = 4


def _parse_t_window(text: str):
    try:
        a, b, n = text.split(":")
        return (float(a), float(b), int(n))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"t window must look like 1e-4:1e-1:48 (got {text!r})") from exc


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("input", help="germ polynomial (.txt grammar or .json schema)")
    p.add_argument("--dim", type=int, default=None,
                   help="ambient dimension (inferred from text when omitted)")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--q-max", type=Fraction, default=Fraction(6))
    p.add_argument("--nr", type=int, default=512)
    p.add_argument("--modes", type=int, default=32)
    p.add_argument("--t", type=_parse_t_window, default=(1e-4, 1e-1, 48),
                   metavar="TMIN:TMAX:N")
    p.add_argument("--fit-cutoff", type=Fraction, default=Fraction(2))
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--chart-grid", type=int, default=17)
    p.add_argument("--grading", type=float, default=2.0)
    p.add_argument("--angular-bc", choices=("periodic", "dirichlet", "neumann"),
                   default="periodic")
    p.add_argument("--cone-samples", type=int, default=0)
    p.add_argument("--out", default=None, help="write report JSON here")
    p.add_argument("--exponent-csv", default=None,
                   help="also write the predicted/fitted exponent table CSV")


def _config_from_args(args, stages) -> AnalysisConfig:
    return AnalysisConfig(
        input_path=args.input, dim=args.dim, epsilon=args.epsilon,
        delta=args.delta, q_max=args.q_max, n_r=args.nr, modes=args.modes,
        t_window=args.t, fit_cutoff=args.fit_cutoff, seed=args.seed,
        chart_grid=args.chart_grid, grading=args.grading,
        angular_bc=args.angular_bc, stages=stages,
        cone_samples=args.cone_samples, out=args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ahis",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    stage_sets = {
        "analyze": STAGES,
        "diagram": ("diagram",),
        "parametrize": ("diagram", "parametrize"),
        "metric": ("diagram", "parametrize", "metric"),
        "heat": STAGES,
    }
    for name, stages in stage_sets.items():
        p = sub.add_parser(name, help=f"run the pipeline through '{stages[-1]}'")
        _add_common(p)
        p.set_defaults(stages=stages)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args, args.stages)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE

    try:
        report = run_pipeline(config)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    parse_failure = any(e.startswith(("input:", "diagram:"))
                        for e in report.global_errors)
    try:
        text = emit_report(report, "json", args.out)
        if args.out is None:
            sys.stdout.write(text)
        if args.exponent_csv and report.faces:
            from pathlib import Path
            Path(args.exponent_csv).write_text(exponent_table_csv(report))
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    if parse_failure:
        return EXIT_PARSE
    if report.failed:
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
