from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitsec import corpus, dmp
from splitsec.ir import parse_program
from splitsec.memory import HEAP_BASE, REGION_BASE, MemoryImage
from splitsec.runtime import DEFAULT_PREFIX, merge
from splitsec.transform import Policy, transform_program
from splitsec.vm import StoreEvent, run


def brute_walk(v, mapped_ranges):
    """Reference walk: compare the four 9-bit indices of v against every mapped page."""
    if v >> 48:
        return 0
    idx = lambda a: [(a >> (39 - 9 * k)) & 0x1FF for k in range(4)]
    want = idx(v)
    best = 0
    for start, size in mapped_ranges:
        for page in range(start >> 12, ((start + size - 1) >> 12) + 1):
            have = idx(page << 12)
            depth = 0
            while depth < 4 and have[depth] == want[depth]:
                depth += 1
            best = max(best, depth)
    return best


def image(ranges):
    m = MemoryImage()
    for start, size in ranges:
        m.map(start, size, "heap")
    return m


LAYOUT = [(HEAP_BASE, 4096 * 3), (REGION_BASE + 0x1_0000, 64), (REGION_BASE + 0x8000_0000, 128)]


def test_prefixed_word_never_walks():
    m = image(LAYOUT)
    assert dmp.page_walk(0xDEADCEEF55667788, m) == 0


def test_mapped_address_walks_fully():
    m = image(LAYOUT)
    assert dmp.page_walk(HEAP_BASE + 100, m) == 4


def test_level_one_only():
    m = image([(0x0000_7F00_0000_0000, 4096)])
    # same top index (bits 39..47), different second index
    v = 0x0000_7F00_0000_0000 + (5 << 30)
    assert brute_walk(v, [(0x0000_7F00_0000_0000, 4096)]) == 1
    assert dmp.page_walk(v, m) == 1


def test_null_and_small_values_do_not_walk():
    m = image(LAYOUT)
    for v in (0, 1, 8, 0x10000, 2**32 - 1):
        assert dmp.page_walk(v, m) == 0


@settings(max_examples=300)
@given(st.integers(0, 2**64 - 1))
def test_walk_matches_brute_force_random(v):
    assert dmp.page_walk(v, image(LAYOUT)) == brute_walk(v, LAYOUT)


@settings(max_examples=300)
@given(st.integers(0, 2**48 - 1), st.sampled_from([0, 1, 2, 3]))
def test_walk_matches_brute_force_near_mapped(noise, keep_levels):
    # keep the top `keep_levels` indices of a mapped page, randomise the rest
    low_bits = 48 - 9 * keep_levels
    v = (HEAP_BASE >> low_bits << low_bits) | (noise & ((1 << low_bits) - 1))
    assert dmp.page_walk(v, image(LAYOUT)) == brute_walk(v, LAYOUT)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_prefix_sufficiency(s):
    m = image(LAYOUT)
    w = merge(DEFAULT_PREFIX, s)
    for a in (HEAP_BASE, REGION_BASE + 0x1_0000):
        assert not dmp.is_prefetch_candidate(a, w, dmp.HEURISTIC, m)
        assert not dmp.is_prefetch_candidate(a, w, dmp.AGGRESSIVE, m)


def test_heuristic_window():
    far = 0x0000_7F00_0000_0000
    m = image([(HEAP_BASE, 4096), (far, 4096)])
    assert dmp.is_prefetch_candidate(HEAP_BASE, HEAP_BASE + 8, "heuristic", m)
    assert not dmp.is_prefetch_candidate(HEAP_BASE, far, "heuristic", m)
    assert dmp.is_prefetch_candidate(HEAP_BASE, far, "aggressive", m)
    wide = dmp.DmpMode("heuristic", window_bits=48)
    assert dmp.is_prefetch_candidate(HEAP_BASE, far, wide, m)


def test_unknown_mode():
    with pytest.raises(ValueError):
        dmp.DmpMode("psychic")


def test_empty_image_scan():
    r = dmp.scan(MemoryImage(), "aggressive")
    assert r.findings == [] and r.scanned == 0


def test_scan_counts_and_taint():
    m = image([(HEAP_BASE, 64)])
    m.write(HEAP_BASE + 8, (HEAP_BASE + 32).to_bytes(8, "little"), 1)
    m.write(HEAP_BASE + 16, (HEAP_BASE + 40).to_bytes(8, "little"), 0)
    r = dmp.scan(m, "heuristic")
    assert r.scanned == 8
    assert [(f.addr, f.tainted) for f in r.findings] == [(HEAP_BASE + 8, True), (HEAP_BASE + 16, False)]
    assert len(r.tainted) == 1
    assert r.to_json()["findings"][0]["walk_depth"] == 4


def test_monotonicity_random_images():
    rng = random.Random(3)
    for _ in range(20):
        m = image([(HEAP_BASE, 512), (0x0000_3000_0000_0000, 4096)])
        for a in range(HEAP_BASE, HEAP_BASE + 512, 8):
            pick = rng.choice([HEAP_BASE + rng.randrange(512), 0x0000_3000_0000_0000 + rng.randrange(4096),
                               rng.getrandbits(64), merge(DEFAULT_PREFIX, rng.getrandbits(32))])
            m.write(a, pick.to_bytes(8, "little"), rng.getrandbits(1))
        h = {(f.addr, f.value) for f in dmp.scan(m, "heuristic").findings}
        a_ = {(f.addr, f.value) for f in dmp.scan(m, "aggressive").findings}
        assert h <= a_


def test_walk_index_tracks_mapping_changes():
    m = image([(HEAP_BASE, 64)])
    far = 0x0000_6000_0000_0000
    assert dmp.page_walk(far, m) == 0
    m.map(far, 64, "heap")
    assert dmp.page_walk(far, m) == 4
    m.unmap(far)
    assert dmp.page_walk(far, m) == 0


def test_planted_pointer_found_untransformed():
    col = dmp.AuditCollector()
    run(corpus.load("planted"), [0x1234], "writes", on_audit=col)
    for mode in ("heuristic", "aggressive"):
        assert col.reports[mode].tainted
    assert col.tainted_findings == 2


def test_planted_pointer_neutralised_by_all_secret():
    prog = transform_program(corpus.load("planted"), Policy("all_secret"))
    col = dmp.AuditCollector()
    t = run(prog, [0x1234], "writes", on_audit=col)
    assert t.ok and col.tainted_findings == 0


def test_classify_store():
    p = DEFAULT_PREFIX
    ok = StoreEvent("split", 0, 8, True, "s", slots=((merge(p, 1), merge(p, 2)),))
    broken = StoreEvent("split", 0, 8, True, "s", slots=((merge(p, 1), 2),))
    assert dmp.classify_store(ok, p) == dmp.SPLIT
    assert dmp.classify_store(broken, p) == dmp.VIOLATION
    assert dmp.classify_store(StoreEvent("plain", 0, 8, False, "s"), p) == dmp.PLAIN
    assert dmp.classify_store(StoreEvent("plain", 0, 8, True, "s"), p) == dmp.VIOLATION
    assert dmp.classify_store(StoreEvent("plain", 0, 8, False, "s", secret_region=True), p) == dmp.VIOLATION


def test_audit_stores_negative_control():
    t = run(corpus.load("ctswap"), [1, 2, 3])
    a = dmp.audit_stores(t)
    assert a.counts[dmp.VIOLATION] == 4 and not a.ok


def test_audit_stores_public_only():
    prog = parse_program("fn main() { %p = alloca i64\n store i64 7, ptr %p\n ret i64 0 }")
    a = dmp.audit_stores(run(prog))
    assert a.counts == {dmp.SPLIT: 0, dmp.PLAIN: 1, dmp.VIOLATION: 0}
