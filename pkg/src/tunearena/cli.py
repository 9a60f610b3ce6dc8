"""Command-line entry point.

Exit codes: 0 ok, 2 plan or argument error, 3 incomplete store, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import time
from pathlib import Path

from . import planfile
from .objective import SYNTHETIC_KINDS, ObjectiveSpec, brute_force_optimum
from .report import IncompleteStoreError, build_report, emit
from .space import SearchSpace, count_valid, total_size
from .tournament import ProgressPrinter, StoreError, run_tournament

EXIT_OK, EXIT_PLAN, EXIT_INCOMPLETE, EXIT_RUNTIME = 0, 2, 3, 4
OUTPUT_ENV = "TUNEARENA_OUTPUT_DIR"
DEFAULT_OUTPUT = "tunearena-results"


def _err(msg):
    print(msg, file=sys.stderr)


def _sigterm(signum, frame):
    raise KeyboardInterrupt


def cmd_validate(args) -> int:
    try:
        loaded = planfile.load_plan_file(args.plan)
    except planfile.PlanError as exc:
        _err(f"plan error: {exc}")
        return EXIT_PLAN
    sys.stdout.write(planfile.dump_resolved(loaded.plan, loaded.output_dir))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        loaded = planfile.load_plan_file(args.plan)
    except planfile.PlanError as exc:
        _err(f"plan error: {exc}")
        return EXIT_PLAN
    out = Path(args.out or loaded.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    signal.signal(signal.SIGTERM, _sigterm)
    start = time.monotonic()
    try:
        run_tournament(loaded.plan, out, parallelism=args.parallel, resume=args.resume,
                       progress=ProgressPrinter(sys.stderr))
    except KeyboardInterrupt:
        _err(f"interrupted; store flushed, continue with: tunearena run {args.plan} --out {out} --resume")
        return EXIT_RUNTIME
    except (StoreError, OSError) as exc:
        _err(f"run failed: {exc}")
        return EXIT_RUNTIME
    (out / "plan.resolved.yaml").write_text(planfile.dump_resolved(loaded.plan), encoding="utf-8")
    print(json.dumps({"store": str(out), "seconds": round(time.monotonic() - start, 3)}))
    return EXIT_OK


def cmd_report(args) -> int:
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    try:
        report = build_report(args.store, optimum_policy=args.optimum)
    except IncompleteStoreError as exc:
        _err(f"incomplete store: {exc}")
        return EXIT_INCOMPLETE
    except StoreError as exc:
        _err(str(exc))
        return EXIT_INCOMPLETE
    out = Path(args.out) if args.out else Path(args.store) / "report"
    try:
        written = emit(report, out, formats)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_PLAN
    except OSError as exc:
        _err(f"cannot write report: {exc}")
        return EXIT_RUNTIME
    for path in written:
        print(path)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.plan:
        try:
            loaded = planfile.load_plan_file(args.plan)
        except planfile.PlanError as exc:
            _err(f"plan error: {exc}")
            return EXIT_PLAN
        space = loaded.plan.space
        benches = list(loaded.plan.benchmarks)
    else:
        space = SearchSpace.box(tuple(args.thread), tuple(args.workgroup), args.limit)
        kinds = args.benchmark or list(SYNTHETIC_KINDS)
        bad = [k for k in kinds if k not in SYNTHETIC_KINDS]
        if bad:
            _err(f"oracle refused: {', '.join(bad)} is not a synthetic benchmark")
            return EXIT_PLAN
        benches = [ObjectiveSpec(k, noise_sigma=0.0) for k in kinds]
    external = [b.name for b in benches if not b.synthetic]
    if external:
        _err(f"oracle refused: external benchmark(s) {', '.join(external)} cannot be brute-forced")
        return EXIT_PLAN
    facts = {"total_size": total_size(space), "n_valid": count_valid(space), "optima": {}}
    for b in benches:
        config, value = brute_force_optimum(b, space)
        facts["optima"][b.name] = {"config": list(config), "value": value}
    print(json.dumps(facts, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tunearena", description="Autotuning strategy tournaments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a plan and print it with defaults resolved")
    v.add_argument("plan")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run a tournament plan")
    r.add_argument("plan")
    r.add_argument("--parallel", type=int, default=1, help="worker processes (default 1)")
    r.add_argument("--resume", action="store_true", help="continue an interrupted store")
    r.add_argument("--out", help=f"store directory (default: plan output.dir, ${OUTPUT_ENV}, ./{DEFAULT_OUTPUT})")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="build comparison matrices from a store")
    rep.add_argument("store")
    rep.add_argument("--format", default="csv,json,svg")
    rep.add_argument("--out", help="report directory (default: STORE/report)")
    rep.add_argument("--optimum", choices=("auto", "study"), default="auto")
    rep.set_defaults(func=cmd_report)

    o = sub.add_parser("oracle", help="brute-force facts about a space and synthetic landscapes")
    o.add_argument("--plan", help="take space and benchmarks from a plan file")
    o.add_argument("--benchmark", action="append", help="synthetic landscape kind (repeatable)")
    o.add_argument("--thread", nargs=2, type=int, default=(1, 16), metavar=("LO", "HI"))
    o.add_argument("--workgroup", nargs=2, type=int, default=(1, 8), metavar=("LO", "HI"))
    o.add_argument("--limit", type=int, default=256, help="work-group product limit")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PLAN if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
