"""Command-line entry point: ``rvhyp run`` and ``rvhyp fuzz``."""

import argparse
import sys
import time
from pathlib import Path

from .fuzz import fuzz
from .scenario import ParseError, RunConfig, parse, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INTERNAL = 0, 1, 2, 3


def _run(args: argparse.Namespace) -> int:
    scenarios = []
    for path in args.files:
        try:
            text = Path(path).read_text(encoding="utf-8")
            scenarios.append(parse(text, name=Path(path).stem))
        except ParseError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            return EXIT_PARSE
        except OSError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            return EXIT_INTERNAL

    config = RunConfig(tlb_size=args.tlb_size, use_tlb=not args.no_tlb,
                       oracle_check=args.oracle_check, seed=args.seed)
    out = open(args.trace, "w", encoding="utf-8") if args.trace else sys.stdout
    failed = 0
    try:
        for scenario in scenarios:
            result = run_scenario(scenario, config)
            for line in result.trace.lines():
                out.write(line + "\n")
            status = "PASS" if result.passed else "FAIL"
            print(f"{status} {scenario.name} ({result.checks} checks)", file=sys.stderr)
            for failure in result.failures:
                print(f"    {failure}", file=sys.stderr)
            failed += not result.passed
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"{len(scenarios) - failed}/{len(scenarios)} scenarios passed", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def _fuzz(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    stats = fuzz(args.cases, args.seed, addresses=args.addresses, tlb_size=args.tlb_size)
    elapsed = time.perf_counter() - start
    print(f"seed={args.seed} cases={stats.cases} checks={stats.checks} ok={stats.ok} "
          f"faults={sum(stats.faults.values())} max_single={stats.max_single} "
          f"max_nested={stats.max_nested} disagreements={len(stats.disagreements)} "
          f"time={elapsed:.2f}s")
    for report in stats.disagreements[:10]:
        print(f"  {report.coordinates}: expected {report.expected}, actual {report.actual}")
    return EXIT_OK if stats.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rvhyp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run scenario files")
    run.add_argument("files", nargs="+")
    run.add_argument("--oracle-check", action="store_true",
                     help="diff every walked translation against the oracle")
    run.add_argument("--tlb-size", type=int, default=16)
    run.add_argument("--no-tlb", action="store_true")
    run.add_argument("--trace", help="write the JSON-lines trace here instead of stdout")
    run.add_argument("--seed", type=int, default=0)
    run.set_defaults(func=_run)

    fz = sub.add_parser("fuzz", help="randomized differential testing against the oracle")
    fz.add_argument("--cases", type=int, default=100)
    fz.add_argument("--seed", type=int, default=0)
    fz.add_argument("--addresses", type=int, default=64)
    fz.add_argument("--tlb-size", type=int, default=16)
    fz.set_defaults(func=_fuzz)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
