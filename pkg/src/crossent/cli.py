"""Command-line entry point.

    crossent run SPEC_FILE [--set key=value ...] [--out DIR]
    crossent oracle PROBLEM_FILE
    crossent formula expected-length --lambda L --horizon T

Exit status: 0 on success, 1 on runtime failure, 2 on an invalid spec.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from crossent.analysis import brute_force_optimum, fmt, truncated_expected_length
from crossent.errors import ContractError
from crossent.experiments import SpecError, load_spec, output_dir_for, run_experiment
from crossent.problems import Problem


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossent", description="Cross-entropy optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment spec file")
    run.add_argument("spec", help="key = value experiment spec")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a spec field (repeatable)")
    run.add_argument("--out", help="output directory (default: $CROSSENT_OUTPUT_ROOT/<experiment>)")

    oracle = sub.add_parser("oracle", help="brute-force optimum of a problem file")
    oracle.add_argument("problem")

    formula = sub.add_parser("formula", help="evaluate closed-form expressions")
    fsub = formula.add_subparsers(dest="formula", required=True)
    length = fsub.add_parser("expected-length", help="mean length of the horizon-conditioned sequence law")
    length.add_argument("--lambda", dest="lam", type=float, required=True)
    length.add_argument("--horizon", type=int, required=True)
    return parser


def _cmd_run(args) -> int:
    try:
        spec = load_spec(args.spec, args.overrides)
    except (SpecError, OSError) as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else output_dir_for(spec.resolved())
    status = run_experiment(spec, out)
    summary = out / "summary.csv"
    if summary.exists():
        print(summary.read_text(), end="")
    if status:
        print(f"run failed; see {out / 'manifest.json'}", file=sys.stderr)
    return status


def _cmd_oracle(args) -> int:
    try:
        problem = Problem.from_text(Path(args.problem).read_text())
    except (ContractError, OSError) as exc:
        print(f"invalid problem file: {exc}", file=sys.stderr)
        return 2
    result = brute_force_optimum(problem)
    decision = result.decision if isinstance(result.decision, int) else " ".join(map(str, result.decision))
    print(f"decision {decision}")
    print(f"gain {fmt(result.gain)}")
    return 0


def _cmd_formula(args) -> int:
    try:
        value = truncated_expected_length(args.lam, args.horizon)
    except ContractError as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return 2
    print(fmt(value))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "oracle": _cmd_oracle, "formula": _cmd_formula}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
