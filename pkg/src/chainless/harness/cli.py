"""``chainless`` command line.

Exit codes: 0 success, 1 expectation failure or trace divergence, 2 bad
configuration or malformed input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ScenarioError
from ..trust import parse_trust_model
from .scenario import bundled_scenario, load_scenario
from .sim import compare_trust_models, format_comparison, run_scenario
from .trace import MalformedTrace, verify_trace

DEFAULT_MODELS = "operator,tee:0.25,committee:4:3,full"


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists() or p.suffix:
        return p
    return bundled_scenario(arg)   # bare names resolve to bundled scenarios


def _cmd_run(args) -> int:
    scenario = load_scenario(_scenario_path(args.scenario))
    report = run_scenario(scenario, seed=args.seed, serial=args.serial, out_dir=args.out)
    sys.stdout.write(report.to_json() + "\n" if args.report == "machine-readable" else report.to_text())
    return 0 if report.ok else 1


def _cmd_compare(args) -> int:
    scenario = load_scenario(_scenario_path(args.scenario))
    try:
        models = [parse_trust_model(m) for m in args.models.split(",") if m.strip()]
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    if not models:
        raise ScenarioError("--models is empty")
    try:
        rows = compare_trust_models(scenario, models, serial=not args.parallel)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    sys.stdout.write(format_comparison(rows))
    return 0


def _cmd_verify_trace(args) -> int:
    try:
        text = Path(args.trace).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read {args.trace}: {exc}", file=sys.stderr)
        return 2
    try:
        verdict = verify_trace(text)
    except MalformedTrace as exc:
        print(f"error: malformed trace: {exc}", file=sys.stderr)
        return 2
    print(verdict.line())
    return 0 if verdict.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chainless", description="Chainless execution-layer simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and check its expectations")
    run.add_argument("scenario", help="scenario YAML path or bundled scenario name")
    run.add_argument("--out", help="directory for trace, receipt, bridge and settlement exports")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--serial", action="store_true", help="verify apps one at a time")
    run.add_argument("--report", choices=("text", "machine-readable"), default="text")
    run.set_defaults(fn=_cmd_run)

    cmp = sub.add_parser("compare-trust", help="detection and cost table across trust models")
    cmp.add_argument("scenario")
    cmp.add_argument("--models", default=DEFAULT_MODELS,
                     help=f"comma-separated models (default {DEFAULT_MODELS})")
    cmp.add_argument("--parallel", action="store_true", help="verify apps on a thread pool")
    cmp.set_defaults(fn=_cmd_compare)

    vt = sub.add_parser("verify-trace", help="replay an exported trace offline")
    vt.add_argument("trace")
    vt.set_defaults(fn=_cmd_verify_trace)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
