"""``splitsec`` command-line front end.

Exit codes: 0 ok, 1 usage or parse/validation/transform error, 2 simulated
fault. ``run`` exits 3 when the step limit is hit, ``diff`` exits 3 when the
policies disagree, and ``audit`` exits with the tainted finding count
(capped at 125) unless an earlier error applies.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path

from . import bench, dmp
from .corpus import random_args
from .differential import diff_run, transformed_variants
from .ir import IRSyntaxError, Program, parse_program, print_program, validate
from .memory import Fault
from .runtime import DEFAULT_PREFIX, check_prefix
from .transform import MODES, Policy, TransformError, transform_program
from .vm import DEFAULT_STEP_LIMIT, run

EXIT_OK, EXIT_USAGE, EXIT_FAULT, EXIT_LIMIT = 0, 1, 2, 3
EXIT_MISMATCH = 3
MAX_EXIT = 125

log = logging.getLogger("splitsec")


class UsageError(Exception):
    pass


def _prefix(arg: str | None) -> int:
    raw = arg if arg is not None else os.environ.get("SS_PREFIX")
    if raw is None:
        return DEFAULT_PREFIX
    try:
        return check_prefix(int(raw, 16))
    except ValueError as e:
        raise UsageError(f"bad prefix {raw!r}: {e}") from None


def _hex_list(text: str) -> list[int]:
    out = []
    for tok in text.replace(",", " ").split():
        try:
            out.append(int(tok, 16))
        except ValueError:
            raise UsageError(f"--args: {tok!r} is not a hex integer") from None
    return out


def _load(path: str) -> Program:
    try:
        text = sys.stdin.read() if path == "-" else Path(path).read_text()
    except OSError as e:
        raise UsageError(str(e)) from None
    prog = parse_program(text)
    diags = validate(prog)
    if diags:
        raise UsageError("\n".join(map(str, diags)))
    return prog


def _prepare(args) -> Program:
    """Load ``args.input`` and transform it when ``--policy`` is given."""
    prog = _load(args.input)
    if getattr(args, "policy", None):
        prog = transform_program(prog, Policy(args.policy, args.globals_secret, _prefix(args.prefix)))
    return prog


def _run_args(args, prog: Program) -> list[int]:
    entry = prog.function(prog.entry)
    if args.args is None:
        return bench.bench_inputs(Path(args.input).stem, prog, args.seed)
    values = _hex_list(args.args)
    if len(values) != len(entry.params):
        raise UsageError(f"@{entry.name} takes {len(entry.params)} argument(s), got {len(values)}")
    return values


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands


def cmd_transform(args) -> int:
    prog = _load(args.input)
    policy = Policy(args.policy or "annotated", args.globals_secret, _prefix(args.prefix))
    _emit(print_program(transform_program(prog, policy)), args.output)
    return EXIT_OK


def cmd_run(args) -> int:
    prog = _prepare(args)
    values = _run_args(args, prog)
    t = run(prog, values, audit_points="none", step_limit=args.step_limit)
    if args.trace:
        Path(args.trace).write_text(t.dumps() + "\n")
    print(f"out {bytes(t.out).hex()}")
    print(f"exit {t.exit}")
    if t.fault:
        print(f"fault {t.fault}", file=sys.stderr)
        return EXIT_LIMIT if t.fault.kind == Fault.STEP_LIMIT else EXIT_FAULT
    return EXIT_OK


def cmd_audit(args) -> int:
    prog = _prepare(args)
    values = _run_args(args, prog)
    modes = ("heuristic", "aggressive") if args.mode == "both" else (args.mode,)
    collector = dmp.AuditCollector(modes)
    points = int(args.audit_points) if args.audit_points.isdigit() else args.audit_points
    t = run(prog, values, points, on_audit=collector, step_limit=args.step_limit)
    stores = dmp.audit_stores(t)
    count = collector.tainted_findings
    report = {
        "reports": [r.to_json() for r in collector.reports.values()],
        "tainted_findings": count,
        "audit_points": collector.points,
        "store_audit": stores.counts,
        "fault": t.fault.to_json() if t.fault else None,
    }
    _emit(json.dumps(report, indent=2) + "\n", args.output)
    if t.fault:
        return EXIT_FAULT
    return min(count, MAX_EXIT)


def cmd_diff(args) -> int:
    prog = _load(args.input)
    policies = _policies(args.policies)
    variants = transformed_variants(prog, policies, args.globals_secret)
    if args.args is not None:
        inputs = [_run_args(args, prog)]
    else:
        rng = random.Random(args.seed)
        inputs = [random_args(prog, rng) for _ in range(args.inputs)]
    results = [diff_run(variants, v, step_limit=args.step_limit) for v in inputs]
    bad = [r for r in results if not r.agree]
    doc = {"policies": list(policies), "runs": len(results), "mismatches": len(bad),
           "results": [r.to_json() for r in (bad if bad else results[:1])]}
    _emit(json.dumps(doc, indent=2) + "\n", args.output)
    return EXIT_MISMATCH if bad else EXIT_OK


def cmd_bench(args) -> int:
    programs, warnings = bench.load_corpus(args.corpus)
    for w in warnings:
        log.warning(w)
    rows, more = bench.run_bench(programs, _policies(args.policies), args.repeat, args.seed)
    warnings += more
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_csv(rows, out / "bench.csv")
    bench.write_json(rows, out / "bench.json", warnings)
    if not args.no_plots:
        from . import plotting
        plotting.plot_icount(rows, out / "icount.png")
        plotting.plot_memory(rows, out / "memory.png")
    width = max((len(r.program) for r in rows), default=7)
    print(f"{'program':<{width}}  {'policy':<10}  {'icount':>8}  {'x icount':>8}  {'x mem':>6}")
    for r in rows:
        print(f"{r.program:<{width}}  {r.policy:<10}  {r.icount:>8}  {r.icount_ratio:>8.2f}  {r.mem_ratio:>6.2f}")
    return EXIT_OK


def _policies(text: str) -> tuple[str, ...]:
    pols = tuple(p.strip() for p in text.split(",") if p.strip())
    unknown = [p for p in pols if p not in MODES]
    if unknown or not pols:
        raise UsageError(f"--policies: expected a comma list from {', '.join(MODES)}")
    return pols


# -- argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitsec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def policy_opts(sp, default=None):
        sp.add_argument("--policy", choices=MODES, default=default)
        sp.add_argument("--prefix", help="32-bit prefix in hex (default $SS_PREFIX or 0xdeadceef)")
        sp.add_argument("--globals-secret", action="store_true", help="treat every global as secret")

    def run_opts(sp):
        sp.add_argument("--args", help="entry-function arguments, hex, comma or space separated "
                                       "(default: seeded random values)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--step-limit", type=int, default=DEFAULT_STEP_LIMIT)

    sp = sub.add_parser("transform", help="apply the split-and-prefix pass")
    sp.add_argument("input")
    policy_opts(sp)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_transform)

    sp = sub.add_parser("run", help="interpret a program")
    sp.add_argument("input")
    policy_opts(sp)
    run_opts(sp)
    sp.add_argument("--trace", help="write the execution trace as JSON")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("audit", help="scan memory for prefetch candidates while running")
    sp.add_argument("input")
    policy_opts(sp)
    run_opts(sp)
    sp.add_argument("--mode", choices=("heuristic", "aggressive", "both"), default="both")
    sp.add_argument("--audit-points", default="stores", help="stores | writes | end | N instructions")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("diff", help="compare outputs across policies")
    sp.add_argument("input")
    sp.add_argument("--policies", default=",".join(MODES))
    sp.add_argument("--globals-secret", action="store_true")
    sp.add_argument("--inputs", type=int, default=20, help="number of random input vectors")
    run_opts(sp)
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_diff)

    sp = sub.add_parser("bench", help="instruction-count and memory overhead table")
    sp.add_argument("corpus", nargs="?", help="directory of .ir files (default: bundled kernels)")
    sp.add_argument("--policies", default=",".join(MODES))
    sp.add_argument("--repeat", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="bench-out")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, IRSyntaxError, TransformError, ValueError) as e:
        print(f"splitsec {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
