"""Command-line front end: run scenarios, verification suites and
convergence studies. Exit codes: 0 ok, 1 usage or configuration error,
2 invariant violation (strict runs or failed verification), 3 numerical
failure."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import verify
from .config import load_config
from .errors import MsDiffError, ParseError, ValidationError
from .runner import (
    EXIT_INVARIANT,
    EXIT_OK,
    EXIT_USAGE,
    convergence_study,
    run_scenario,
    write_csv,
)

SUITES = ("spectra", "conjugation", "equivalence", "convergence", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msdiff",
        description="Cross-diffusion simulator: run scenarios, verify "
        "structural guarantees, study convergence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="integrate a scenario config")
    p_run.add_argument("--config", required=True, help="path to a JSON scenario")
    p_run.add_argument("--out-dir", default=None, help="override the output directory")
    p_run.add_argument(
        "--strict",
        action="store_true",
        help="stop with exit code 2 on the first invariant violation",
    )

    p_ver = sub.add_parser("verify", help="run a verification suite")
    p_ver.add_argument("suite", choices=SUITES)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--samples", type=int, default=1000)

    p_con = sub.add_parser("converge", help="self-convergence study of a scenario")
    p_con.add_argument("--config", required=True)
    p_con.add_argument("--levels", type=int, required=True)
    p_con.add_argument("--out-dir", default=None)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    result = run_scenario(config, out_dir=args.out_dir, strict=args.strict)
    if result.message:
        print(result.message, file=sys.stderr)
    print(f"run,steps,{len(result.diagnostics.t)}")
    print(f"run,t_final,{result.final_state.t!r}")
    print(f"run,exit,{result.exit_status}")
    return result.exit_status


def _cmd_verify(args) -> int:
    names = SUITES[:-1] if args.suite == "all" else (args.suite,)
    all_ok = True
    for name in names:
        if name == "spectra":
            report = verify.spectra_suite(seed=args.seed, samples=args.samples)
        elif name == "conjugation":
            report = verify.conjugation_suite(seed=args.seed, samples=args.samples)
        elif name == "equivalence":
            report = verify.equivalence_suite()
        else:
            report = verify.convergence_suite()
        for line in report.lines:
            print(f"{report.name},{line}")
        print(f"{report.name},result,{'PASS' if report.passed else 'FAIL'}")
        all_ok = all_ok and report.passed
    return EXIT_OK if all_ok else EXIT_INVARIANT


def _cmd_converge(args) -> int:
    config = load_config(args.config)
    if args.levels < 2:
        print("converge: need at least 2 levels", file=sys.stderr)
        return EXIT_USAGE
    table = convergence_study(config, args.levels)
    print(",".join(table.header()))
    for row in table.csv_rows():
        print(",".join(repr(float(v)) for v in row))
    target = args.out_dir if args.out_dir is not None else config.out_dir
    if target is not None:
        out_dir = Path(target)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "convergence.csv", table.header(), table.csv_rows())
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_converge(args)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MsDiffError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
