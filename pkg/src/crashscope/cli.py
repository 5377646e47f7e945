"""Command line entry point: `crashscope check|run|dump-pmrs|dump-carta`.

Exit codes: 0 no definite errors, 1 definite errors found, 2 usage or
parse errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .carta import state_name
from .checker import DEFAULT_BUDGET, STAGES, AnalysisConfig, analyze_program, crash_model, emit_report
from .frontend import CoreProgram, ParseError, errors, load
from .interpreter import DEFAULT_FUEL, Value, run_main, with_deep_stack
from .pmrs import to_pmrs
from .terms import ROOT, check_arities, is_ground, parse_term

EXIT_OK = 0
EXIT_DEFINITE = 1
EXIT_USAGE = 2


class _UsageError(Exception):
    pass


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crashscope",
                                     description="Find calls that must crash in first-order functional programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="report definite errors")
    check.add_argument("file")
    check.add_argument("--budget", type=_positive, default=DEFAULT_BUDGET,
                       help="rewrite steps per call site (default %(default)s)")
    check.add_argument("--fuel", type=_positive, default=DEFAULT_FUEL,
                       help="accepted for symmetry with `run`; the analysis itself does not evaluate")
    check.add_argument("--format", choices=("text", "json"), default="text")
    check.add_argument("--stage", choices=STAGES, default="merged",
                       help="automaton the arguments are checked against")

    run = sub.add_parser("run", help="evaluate Main on an input")
    run.add_argument("file")
    run.add_argument("--input", required=True, help='a ground term, e.g. "pair(succ(zero), zero)"')
    run.add_argument("--fuel", type=_positive, default=DEFAULT_FUEL)

    dump_pmrs = sub.add_parser("dump-pmrs", help="print the translated rewrite rules")
    dump_pmrs.add_argument("file")

    dump_carta = sub.add_parser("dump-carta", help="print the crash automaton")
    dump_carta.add_argument("file")
    dump_carta.add_argument("--stage", choices=STAGES, default="merged")
    dump_carta.add_argument("--function", help="only the transitions of this function's states")
    return parser


def _load(path: str) -> tuple[CoreProgram, list]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise _UsageError(f"{path}: {exc.strerror}") from None
    try:
        cp, diagnostics = load(text)
    except ParseError as exc:
        raise _UsageError(f"{path}:{exc.line}:{exc.col}: parse error: {exc.message}") from None
    bad = errors(diagnostics)
    if bad:
        raise _UsageError("\n".join(d.render(path) for d in bad))
    return cp, diagnostics


def _check(args: argparse.Namespace) -> int:
    cp, diagnostics = _load(args.file)
    config = AnalysisConfig(budget=args.budget, stage=args.stage)
    report = with_deep_stack(lambda: analyze_program(cp, config, diagnostics))
    print(emit_report(report, args.format, args.file))
    for note in report.notes:
        print(note, file=sys.stderr)
    return EXIT_DEFINITE if report.definite else EXIT_OK


def _run(args: argparse.Namespace) -> int:
    cp, _ = _load(args.file)
    try:
        value = parse_term(args.input)
    except ValueError as exc:
        raise _UsageError(f"bad input term: {exc}") from None
    if not is_ground(value) or check_arities(value, cp.alphabet):
        raise _UsageError(f"input must be a ground term over the program's constructors: {args.input}")
    outcome = with_deep_stack(lambda: run_main(cp, value, args.fuel))
    print(outcome)
    return EXIT_OK if isinstance(outcome, Value) else EXIT_DEFINITE


def _dump_pmrs(args: argparse.Namespace) -> int:
    cp, _ = _load(args.file)
    print(to_pmrs(cp).dump())
    return EXIT_OK


def _dump_carta(args: argparse.Namespace) -> int:
    cp, _ = _load(args.file)
    automaton = crash_model(cp, args.stage)
    states = None
    if args.function:
        if args.function not in cp.functions:
            raise _UsageError(f"no function named {args.function}")
        root = state_name(args.function, ROOT, cp.alphabet)
        states = [q for q in automaton.states if q == root or q.startswith(root + ".")]
        states += [q for q, r in automaton.aliases if r in states]
    print(automaton.dump(states))
    for note in automaton.notes:
        print(note, file=sys.stderr)
    return EXIT_OK


COMMANDS = {"check": _check, "run": _run, "dump-pmrs": _dump_pmrs, "dump-carta": _dump_carta}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
