"""Command line entry point: ``run``, ``selftest``, ``schema`` and ``demo``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigurationError, ConvergenceError, GridError
from .rates import Diagnostic
from .runner import EXIT_INVALID, EXIT_SOUNDNESS, run_scenario
from .scenario import SCHEMA, ScenarioError, demo_scenario, parse_scenario
from .selftest import run_selftest


def _print_diagnostics(diags: list[Diagnostic]) -> None:
    for d in diags:
        print(f"{d.severity}: {d.pointer or '/'}: {d.message}", file=sys.stderr)


def _load(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ScenarioError([Diagnostic("error", f"cannot read {path}: {exc.strerror}", "")]) from None
    except json.JSONDecodeError as exc:
        raise ScenarioError([Diagnostic("error", f"invalid JSON at line {exc.lineno}: {exc.msg}", "")]) from None


def cmd_run(args) -> int:
    try:
        doc = _load(args.scenario)
        if isinstance(doc, dict):
            if args.grid_steps is not None:
                doc.setdefault("grid", {})["steps"] = args.grid_steps
            if args.paths is not None:
                doc.setdefault("montecarlo", {})["paths"] = args.paths
            if args.seed is not None:
                doc["seed"] = args.seed
        sc = parse_scenario(doc)
    except ScenarioError as exc:
        _print_diagnostics(exc.diagnostics)
        return EXIT_INVALID
    try:
        result = run_scenario(sc, workers=args.workers)
    except (ConfigurationError, GridError) as exc:
        _print_diagnostics([Diagnostic("error", str(exc), "")])
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out or sc.output or "."
    for path in result.write(out):
        print(f"wrote {path}")
    s = result.report["summary"]
    print(f"checks {s['checks']}: certified {s['certified']}, inconclusive {s['inconclusive']}, "
          f"soundness violations {s['soundness_violations']}")
    for c in result.report["comparisons"]:
        print(f"  {c['theorem']:<10} t={c['t']:<8g} {c['function']:<16} {c['verdict']:<13} "
              f"E f(X_t)={c['oracle_x']:.6f} E f(Y_t)={c['oracle_y']:.6f}")
    if result.exit_code == EXIT_SOUNDNESS:
        print("SOUNDNESS VIOLATION: a certified verdict contradicts the exact oracle", file=sys.stderr)
    return result.exit_code


def cmd_selftest(args) -> int:
    res = run_selftest(quick=args.quick)
    print(res.table())
    for v in res.violations:
        print(f"violation: {v}", file=sys.stderr)
    return 0 if res.ok else 1


def cmd_schema(args) -> int:
    print(json.dumps(SCHEMA, indent=2, sort_keys=True))
    return 0


def cmd_demo(args) -> int:
    print(json.dumps(demo_scenario(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markov-compare",
                                     description="Certified comparison of finite Markov chains.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file and write the report")
    run.add_argument("scenario", help="scenario JSON file (schema v1)")
    run.add_argument("--out", help="output directory (default: scenario 'output' or cwd)")
    run.add_argument("--grid-steps", type=int, help="override grid.steps")
    run.add_argument("--paths", type=int, help="override montecarlo.paths")
    run.add_argument("--seed", type=int, help="override the seed")
    run.add_argument("--workers", type=int, default=1, help="worker threads for the checks")
    run.set_defaults(func=cmd_run)

    st = sub.add_parser("selftest", help="randomized soundness corpus and analytic checks")
    st.add_argument("--quick", action="store_true", help="10 scenarios instead of 100")
    st.set_defaults(func=cmd_selftest)

    sc = sub.add_parser("schema", help="print the scenario JSON schema")
    sc.set_defaults(func=cmd_schema)

    demo = sub.add_parser("demo", help="print the bundled two-state demo scenario")
    demo.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
