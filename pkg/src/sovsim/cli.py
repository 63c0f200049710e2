"""Command-line front end.

    sovsim run <scenario.json> [--trace <path>] [--seed <u64>] [--until <ms>]
    sovsim check <scenario.json>
    sovsim attest <scenario.json> --sapp <index> --nonce <hex>

Exit codes: 0 on success or all properties passing, 1 on check failures,
2 on scenario errors.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ScenarioError
from .harness import check, monitor_loc, run
from .scenario import load_scenario

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_SCENARIO_ERROR = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sovsim",
        description="Deterministic simulator of a monitor-isolated sovereign smartphone.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and emit its trace")
    p_run.add_argument("scenario")
    p_run.add_argument("--trace", metavar="PATH", help="write the trace here instead of stdout")
    p_run.add_argument("--seed", type=int, help="override the scenario seed")
    p_run.add_argument("--until", type=int, metavar="MS", help="override the horizon")

    p_check = sub.add_parser("check", help="run the property suites against a scenario")
    p_check.add_argument("scenario")

    p_attest = sub.add_parser("attest", help="run to the first attestation of one sapp")
    p_attest.add_argument("scenario")
    p_attest.add_argument("--sapp", type=int, required=True, metavar="INDEX")
    p_attest.add_argument("--nonce", required=True, metavar="HEX", help="32-byte hex nonce")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario).with_overrides(args.seed, args.until)
    result = run(scenario)
    text = result.trace.render()
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    report = check(scenario)
    sys.stdout.write(report.render())
    code, total = monitor_loc()
    sys.stdout.write(f"tcb: security monitor module = {code} LoC ({total} physical lines)\n")
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def _cmd_attest(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    try:
        nonce = bytes.fromhex(args.nonce)
    except ValueError:
        print("error: --nonce must be hex", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    if len(nonce) != 32:
        print("error: --nonce must encode exactly 32 bytes", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    if not 0 <= args.sapp < len(scenario.sapps):
        print(f"error: scenario has no sapp index {args.sapp}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    result = run(scenario, attest_request=(args.sapp, nonce))
    if result.attest_report is None:
        print(f"error: sapp {args.sapp} was never created before the horizon", file=sys.stderr)
        return EXIT_SCENARIO_ERROR
    print(result.attest_report.line())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "check":
            return _cmd_check(args)
        return _cmd_attest(args)
    except ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SCENARIO_ERROR


if __name__ == "__main__":
    sys.exit(main())
