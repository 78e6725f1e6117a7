from __future__ import annotations

import csv

import pytest

from splitsec import bench, corpus


@pytest.fixture(scope="module")
def rows():
    programs, warnings = bench.load_corpus()
    assert warnings == []
    return bench.run_bench(programs, repeat=1)[0]


def pick(rows, program, policy):
    return next(r for r in rows if r.program == program and r.policy == policy)


def test_baseline_ratio_is_one(rows):
    for r in rows:
        if r.policy == "none":
            assert r.icount_ratio == 1.0 and r.mem_ratio == 1.0


def test_ctswap_ordering(rows):
    none, ann, alls = (pick(rows, "ctswap", p) for p in ("none", "annotated", "all_secret"))
    assert alls.icount_ratio > ann.icount_ratio >= none.icount_ratio == 1.0


def test_secret_regions_exactly_doubled(rows):
    for r in rows:
        if r.secret_logical_bytes:
            assert r.secret_physical_bytes == 2 * r.secret_logical_bytes


def test_all_secret_array_kernel_memory(rows):
    r = pick(rows, "block256", "all_secret")
    assert r.mem_ratio == pytest.approx(2.0)


def test_sorted_by_program(rows):
    names = [r.program for r in rows]
    assert names == sorted(names)


def test_repeat_determinism():
    prog = corpus.load("hmac")
    one = bench.bench_program("hmac", prog, repeat=1)
    five = bench.bench_program("hmac", prog, repeat=5)
    assert [r.icount for r in one] == [r.icount for r in five]


def test_csv_columns(tmp_path, rows):
    path = tmp_path / "b.csv"
    bench.write_csv(rows, path)
    with open(path) as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == bench.CSV_COLUMNS
    assert len(table) == len(rows) + 1


def test_policy_subset_still_uses_none_baseline():
    rows = bench.bench_program("ctswap", corpus.load("ctswap"), policies=("all_secret",))
    assert len(rows) == 1 and rows[0].icount_ratio > 1.0
