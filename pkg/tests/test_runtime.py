from __future__ import annotations

import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitsec.memory import HEAP_BASE, Arena, Fault, MemoryImage, Stack
from splitsec.runtime import (
    DEFAULT_PREFIX, TAG, Runtime, SegmentLayout, check_prefix, clear_tag, extract, is_secret,
    merge, segment_location, set_tag,
)

u32 = st.integers(0, 2**32 - 1)


def fresh_runtime(prefix=DEFAULT_PREFIX):
    mem = MemoryImage()
    return Runtime(mem, Arena(mem, HEAP_BASE, HEAP_BASE + (1 << 30), "heap"), prefix)


def le_word(mem, addr):
    return struct.unpack("<Q", mem.read(addr, 8)[0])[0]


@given(u32, u32)
def test_merge_matches_struct_packing(p, s):
    # oracle: the low little-endian dword is s, the high one is p
    word = merge(p, s)
    assert struct.pack("<Q", word) == struct.pack("<II", s, p)
    assert extract(word) == s


def test_tag_bit_round_trip():
    a = 0x5555_0100_0000
    assert is_secret(set_tag(a)) and not is_secret(a)
    assert clear_tag(set_tag(a)) == a
    assert set_tag(a) == a + TAG


@pytest.mark.parametrize("bad", [0, 0x0000FFFF, 0x00001234, 2**32])
def test_canonical_looking_prefixes_rejected(bad):
    with pytest.raises(ValueError):
        check_prefix(bad)


def test_segment_location_enumeration():
    # oracle: walk segments in order, alternating regions, filling each slot's low half
    expected = {}
    for seg in range(16):
        half = seg % 2
        slot = seg // 2
        for b in range(4):
            expected[seg * 4 + b] = (half, slot, b)
    assert {o: segment_location(o) for o in range(64)} == expected
    lay = SegmentLayout(0x1000, 0x9000, 64)
    assert lay.physical(0) == 0x1000 and lay.physical(4) == 0x9000
    assert lay.physical(9) == 0x1009 and lay.physical(13) == 0x9009


def test_store64_layout_bytes():
    rt = fresh_runtime()
    p = rt.secret_malloc(8)
    rt.store(p, 0x1122334455667788, 8)
    entry, _ = rt.locate(p)
    assert rt.mem.read(entry.base, 8)[0] == bytes.fromhex("88776655efcead de".replace(" ", ""))
    assert rt.mem.read(entry.shadow_base, 8)[0] == bytes.fromhex("44332211efceadde")


def test_fresh_allocation_is_prefixed_zero():
    rt = fresh_runtime()
    p = rt.secret_malloc(24)
    entry, _ = rt.locate(p)
    for orig, shadow in entry.layout.slots():
        assert le_word(rt.mem, orig) == merge(DEFAULT_PREFIX, 0)
        assert le_word(rt.mem, shadow) == merge(DEFAULT_PREFIX, 0)
    assert rt.load(p, 16) == (0, False)


def test_custom_prefix_used():
    rt = fresh_runtime(0xCAFEBABE)
    p = rt.secret_malloc(8)
    rt.store(p, 0xFFFF_FFFF_0000_0001, 8)
    assert rt.slot_pair(p, 0) == (0xCAFEBABE_00000001, 0xCAFEBABE_FFFFFFFF)


@pytest.mark.parametrize("n", [8, 16, 64, 256, 4096])
def test_physical_bytes_double(n):
    rt = fresh_runtime()
    before = rt.mem.mapped_bytes
    p = rt.secret_malloc(n)
    assert rt.mem.mapped_bytes - before == 2 * n
    entry, _ = rt.locate(p)
    assert entry.size == n
    assert rt.mem.range_at(entry.shadow_base).size == n
    rt.secret_free(p)
    assert rt.mem.mapped_bytes == before


def test_small_secret_still_gets_shadow():
    rt = fresh_runtime()
    p = rt.secret_malloc(3)
    entry, _ = rt.locate(p)
    assert entry.size == 8 and entry.shadow_base != entry.base


def test_shadow_not_adjacent_to_original():
    rt = fresh_runtime()
    for n in (8, 16, 40):
        entry, _ = rt.locate(rt.secret_malloc(n))
        assert entry.shadow_base not in (entry.base + n, entry.base - n)


def test_store_load_against_bytearray_model():
    rng = random.Random(7)
    rt = fresh_runtime()
    size = 96
    p = rt.secret_malloc(size)
    model = bytearray(size)
    for _ in range(2000):
        n = rng.choice((1, 2, 4, 8, 16))
        off = rng.randrange(0, size - n + 1)
        if rng.random() < 0.6:
            v = rng.getrandbits(8 * n)
            rt.store(p + off, v, n)
            model[off:off + n] = v.to_bytes(n, "little")
        else:
            got, _ = rt.load(p + off, n)
            assert got == int.from_bytes(model[off:off + n], "little")
    assert rt.prefix_intact()
    assert rt.declassify_region(p, size) == bytes(model)


def test_store_reports_touched_slots():
    rt = fresh_runtime()
    p = rt.secret_malloc(32)
    assert rt.store(p + 6, 0xABCD, 2) == [0]
    assert rt.store(p + 7, 0xAABB, 2) == [0, 1]
    assert rt.store(p + 8, 0, 16) == [1, 2]


def test_interior_pointer_lookup():
    rt = fresh_runtime()
    p = rt.secret_malloc(32)
    rt.store(p + 20, 0xDEADBEEF, 4)
    assert rt.load(p + 20, 4)[0] == 0xDEADBEEF
    with pytest.raises(Fault) as e:
        rt.load(p + 30, 4)
    assert e.value.kind == Fault.UNMAPPED


def test_free_errors():
    rt = fresh_runtime()
    p = rt.secret_malloc(8)
    with pytest.raises(Fault) as e:
        rt.secret_free(clear_tag(p))
    assert e.value.kind == Fault.NOT_SECRET
    rt.secret_free(p)
    with pytest.raises(Fault) as e:
        rt.secret_free(p)
    assert e.value.kind == Fault.DOUBLE_FREE
    with pytest.raises(Fault) as e:
        rt.secret_malloc(0)
    assert e.value.kind == Fault.BAD_SIZE


def test_use_after_free_faults():
    rt = fresh_runtime()
    p = rt.secret_malloc(8)
    rt.secret_free(p)
    with pytest.raises(Fault) as e:
        rt.load(p, 8)
    assert e.value.kind == Fault.UNREGISTERED


def test_frame_pop_releases_stack_secrets():
    rt = fresh_runtime()
    stack = Stack(rt.mem)
    stack.push()
    rt.frame_push()
    rt.register_stack(stack.alloca(16), 16)
    assert len(rt.shadow) == 1
    rt.frame_pop()
    assert len(rt.shadow) == 0 and rt.logical_bytes == 0
    with pytest.raises(Fault):
        rt.frame_pop()


@settings(max_examples=60)
@given(st.binary(min_size=1, max_size=512), st.integers(0, 7))
def test_classify_declassify_identity(buf, skew):
    rt = fresh_runtime()
    p = rt.secret_malloc(len(buf) + skew)
    rt.classify_region(buf, p + skew)
    assert rt.declassify_region(p + skew, len(buf)) == buf
    assert rt.prefix_intact()


def test_peak_accounting():
    rt = fresh_runtime()
    a = rt.secret_malloc(16)
    b = rt.secret_malloc(32)
    rt.secret_free(a)
    rt.secret_free(b)
    assert (rt.peak_logical, rt.peak_physical) == (48, 96)
    assert rt.logical_bytes == 0
