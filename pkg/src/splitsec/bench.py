"""Instruction-count and memory overhead of each policy over a corpus.

Every (program, policy) pair runs on one seeded input vector; ``repeat``
re-runs it and insists on identical instruction counts. Ratios are taken
against the mode ``none`` run of the same program.
"""

from __future__ import annotations

import csv
import json
import logging
import random
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

from . import corpus
from .ir import IRSyntaxError, Program, parse_program, validate
from .transform import MODES, Policy, TransformError, transform_program
from .vm import run

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "program", "policy", "icount", "icount_ratio", "peak_mapped_bytes", "peak_data_bytes",
    "mem_ratio", "secret_logical_bytes", "secret_physical_bytes", "secret_ratio",
)


@dataclass(frozen=True)
class BenchRow:
    program: str
    policy: str
    icount: int
    icount_ratio: float
    peak_mapped_bytes: int
    peak_data_bytes: int
    mem_ratio: float
    secret_logical_bytes: int
    secret_physical_bytes: int
    secret_ratio: float  # physical / logical bytes of secret regions at peak, 0 if none


class NondeterministicRun(RuntimeError):
    pass


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def load_corpus(directory=None) -> tuple[list[tuple[str, Program]], list[str]]:
    """Parse every ``*.ir`` under ``directory`` (default: the bundled kernels).

    Programs that fail to parse or validate are skipped and reported in the
    returned warning list.
    """
    if directory is None:
        sources = [(name, corpus.source(name)) for name in corpus.names()]
    else:
        sources = [(p.stem, p.read_text()) for p in sorted(Path(directory).glob("*.ir"))]
    programs, warnings = [], []
    for name, text in sources:
        try:
            prog = parse_program(text)
        except IRSyntaxError as e:
            warnings.append(f"{name}: skipped, {e}")
            continue
        diags = validate(prog)
        if diags:
            warnings.append(f"{name}: skipped, {diags[0]}")
            continue
        programs.append((name, prog))
    return programs, warnings


def bench_inputs(name: str, prog: Program, seed: int = 0) -> list[int]:
    return corpus.random_args(prog, random.Random(seed ^ zlib.crc32(name.encode())))


def bench_program(name: str, prog: Program, policies=MODES, repeat: int = 1, seed: int = 0) -> list[BenchRow]:
    args = bench_inputs(name, prog, seed)
    measured = {}
    for mode in dict.fromkeys(("none", *policies)):
        tp = transform_program(prog, Policy(mode))
        counts = set()
        for _ in range(max(1, repeat)):
            t = run(tp, args, audit_points="none", record_stores=False)
            if t.fault:
                raise TransformError(f"{name} under {mode} faulted: {t.fault}")
            counts.add(t.icount)
        if len(counts) != 1:
            raise NondeterministicRun(f"{name} under {mode}: icounts {sorted(counts)}")
        measured[mode] = t
    base = measured["none"]
    rows = []
    for mode in policies:
        t = measured[mode]
        rows.append(BenchRow(
            name, mode, t.icount, _ratio(t.icount, base.icount),
            t.peak_mapped, t.peak_data, _ratio(t.peak_data, base.peak_data),
            t.secret_peak_logical, t.secret_peak_physical,
            _ratio(t.secret_peak_physical, t.secret_peak_logical),
        ))
    return rows


def run_bench(programs, policies=MODES, repeat: int = 1, seed: int = 0) -> tuple[list[BenchRow], list[str]]:
    rows, warnings = [], []
    for name, prog in sorted(programs, key=lambda p: p[0]):
        try:
            rows += bench_program(name, prog, policies, repeat, seed)
        except TransformError as e:
            warnings.append(f"{name}: skipped, {e}")
    for w in warnings:
        log.warning(w)
    return rows, warnings


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            d = asdict(r)
            w.writerow([f"{d[c]:.4f}" if isinstance(d[c], float) else d[c] for c in CSV_COLUMNS])


def to_json(rows, warnings=()) -> dict:
    return {"columns": list(CSV_COLUMNS), "rows": [asdict(r) for r in rows], "warnings": list(warnings)}


def write_json(rows, path, warnings=()) -> None:
    Path(path).write_text(json.dumps(to_json(rows, warnings), indent=2) + "\n")
