"""Execution-time support for split-and-prefixed secrets.

A secret allocation of ``n`` bytes owns two regions of ``ceil8(n)`` bytes:
the original region and a shadow region elsewhere on the heap. Logical
byte ``o`` of the secret lives in 32-bit segment ``s = o // 4``; even
segments go to the original region, odd ones to the shadow region, both in
the low half of slot ``s // 2``. The high half of every slot holds the
prefix, so no 64-bit word in either region ever looks like a canonical
address.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .memory import Arena, Fault, MemoryImage, ceil8

TAG_BIT = 63
TAG = 1 << TAG_BIT
MASK32 = 0xFFFF_FFFF
MASK64 = (1 << 64) - 1
DEFAULT_PREFIX = 0xDEADCEEF


def is_secret(addr: int) -> bool:
    return bool(addr & TAG)


def set_tag(addr: int) -> int:
    return addr | TAG


def clear_tag(addr: int) -> int:
    return addr & ~TAG & MASK64


def merge(prefix: int, segment: int) -> int:
    """Place ``segment`` under ``prefix``: ``prefix << 32 | segment``."""
    return ((prefix & MASK32) << 32) | (segment & MASK32)


def extract(word: int) -> int:
    return word & MASK32


def check_prefix(prefix: int) -> int:
    """Reject prefixes that leave a merged word's top 16 bits zero (canonical-looking)."""
    if not 0 <= prefix <= MASK32:
        raise ValueError(f"prefix {prefix:#x} is not a 32-bit value")
    if (merge(prefix, 0) >> 48) == 0:
        raise ValueError(f"prefix {prefix:#010x} yields canonical 48-bit addresses")
    return prefix


def segment_location(offset: int) -> tuple[int, int, int]:
    """Map a logical byte offset to (half, slot, byte): half 0 is the original region."""
    seg = offset >> 2
    return seg & 1, seg >> 1, offset & 3


@dataclass(frozen=True)
class SegmentLayout:
    original_base: int
    shadow_base: int
    logical_size: int

    def physical(self, offset: int) -> int:
        half, slot, byte = segment_location(offset)
        base = self.shadow_base if half else self.original_base
        return base + slot * 8 + byte

    def slots(self):
        """Addresses of every (original, shadow) slot pair."""
        for slot in range(self.logical_size // 8):
            yield self.original_base + slot * 8, self.shadow_base + slot * 8


@dataclass(frozen=True)
class ShadowEntry:
    base: int
    size: int  # logical bytes, equal to each region's physical size
    shadow_base: int
    kind: str  # heap | stack | global

    @property
    def layout(self) -> SegmentLayout:
        return SegmentLayout(self.base, self.shadow_base, self.size)


class ShadowMap:
    """Original base -> shadow region, with interior-pointer lookup and frames."""

    def __init__(self):
        self.entries: dict[int, ShadowEntry] = {}
        self._bases: list[int] = []
        self.frames: list[list[int]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, base: int) -> bool:
        return base in self.entries

    def add(self, entry: ShadowEntry, in_frame: bool = False):
        self.entries[entry.base] = entry
        bisect.insort(self._bases, entry.base)
        if in_frame and self.frames:
            self.frames[-1].append(entry.base)

    def remove(self, base: int) -> ShadowEntry:
        entry = self.entries.pop(base)
        self._bases.remove(base)
        return entry

    def lookup(self, addr: int) -> ShadowEntry | None:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i < 0:
            return None
        entry = self.entries[self._bases[i]]
        return entry if addr < entry.base + entry.size else None

    def regions(self):
        for e in self.entries.values():
            yield e.base, e.size
            yield e.shadow_base, e.size


class Runtime:
    """Runtime state bound to one MemoryImage and the heap arena it allocates from."""

    def __init__(self, mem: MemoryImage, heap: Arena, prefix: int = DEFAULT_PREFIX):
        self.mem = mem
        self.heap = heap
        self.prefix = check_prefix(prefix)
        self.shadow = ShadowMap()
        self._freed: set[int] = set()
        self._prefix_bytes = (self.prefix & MASK32).to_bytes(4, "little")
        self.logical_bytes = 0
        self.physical_bytes = 0
        self.peak_logical = 0
        self.peak_physical = 0

    # -- bookkeeping

    def _account(self, entry: ShadowEntry, sign: int):
        self.logical_bytes += sign * entry.size
        self.physical_bytes += sign * 2 * entry.size
        self.peak_logical = max(self.peak_logical, self.logical_bytes)
        self.peak_physical = max(self.peak_physical, self.physical_bytes)

    def _init_slots(self, base: int, size: int):
        slot = b"\x00\x00\x00\x00" + self._prefix_bytes
        self.mem.write(base, slot * (size // 8), 0)

    def _register(self, base: int, size: int, kind: str, in_frame: bool = False) -> int:
        size = ceil8(size)
        shadow = self.heap.alloc(size, "shadow", f"shadow:{base:#x}")
        self._init_slots(base, size)
        self._init_slots(shadow, size)
        entry = ShadowEntry(base, size, shadow, kind)
        self.shadow.add(entry, in_frame)
        self._account(entry, +1)
        return set_tag(base)

    def _release(self, base: int) -> ShadowEntry:
        entry = self.shadow.remove(base)
        self.heap.free(entry.shadow_base)
        self._account(entry, -1)
        return entry

    # -- allocation

    def secret_malloc(self, size: int) -> int:
        if size <= 0:
            raise Fault(Fault.BAD_SIZE, f"secret_malloc of {size} bytes")
        base = self.heap.alloc(size, "heap", "secret")
        return self._register(base, size, "heap")

    def secret_free(self, addr: int) -> None:
        if not is_secret(addr):
            raise Fault(Fault.NOT_SECRET, f"secret_free of untagged address {addr:#x}", addr)
        base = clear_tag(addr)
        if base in self._freed:
            raise Fault(Fault.DOUBLE_FREE, f"secret_free of {addr:#x} twice", addr)
        entry = self.shadow.entries.get(base)
        if entry is None or entry.kind != "heap":
            raise Fault(Fault.NOT_SECRET, f"{addr:#x} is not a secret heap allocation", addr)
        self._release(base)
        self.heap.free(base)
        self._freed.add(base)

    def register_stack(self, addr: int, size: int) -> int:
        """Back a stack slot with a shadow region; released by the enclosing frame_pop."""
        return self._register(addr, size, "stack", in_frame=True)

    def bind_global(self, addr: int, size: int) -> int:
        """Convert a mapped global to split form (zeroed) and return its tagged address."""
        return self._register(addr, size, "global")

    def frame_push(self) -> None:
        self.shadow.frames.append([])

    def frame_pop(self) -> None:
        if not self.shadow.frames:
            raise Fault(Fault.UNREGISTERED, "frame_pop without matching frame_push")
        for base in self.shadow.frames.pop():
            if base in self.shadow:
                self._release(base)

    # -- address translation

    def locate(self, addr: int, n: int = 1) -> tuple[ShadowEntry, int]:
        base = clear_tag(addr)
        entry = self.shadow.lookup(base)
        if entry is None:
            raise Fault(Fault.UNREGISTERED, f"{addr:#x} is not inside a secret allocation", addr)
        off = base - entry.base
        if off + n > entry.size:
            raise Fault(Fault.UNMAPPED, f"{n}-byte secret access past end of {entry.base:#x}", addr)
        return entry, off

    def shadow_addr(self, addr: int, offset: int = 0) -> int:
        """Shadow-region address of the slot holding ``addr + offset``."""
        entry, off = self.locate(clear_tag(addr) + offset)
        return entry.shadow_base + (off & ~7)

    def _runs(self, entry: ShadowEntry, off: int, n: int):
        """Split [off, off+n) into (physical address, start index, length) runs within one segment."""
        pos = 0
        while pos < n:
            o = off + pos
            k = min(4 - (o & 3), n - pos)
            yield entry.layout.physical(o), pos, k
            pos += k

    # -- split access

    def store_bytes(self, addr: int, data: bytes) -> list[int]:
        """Write logical bytes into split form; returns the slot indices touched."""
        entry, off = self.locate(addr, len(data))
        for phys, pos, k in self._runs(entry, off, len(data)):
            self.mem.write(phys, data[pos:pos + k], 1)
        if not data:
            return []
        return list(range(off >> 3, ((off + len(data) - 1) >> 3) + 1))

    def load_bytes(self, addr: int, n: int) -> tuple[bytes, bytes]:
        entry, off = self.locate(addr, n)
        data, taint = bytearray(), bytearray()
        for phys, _pos, k in self._runs(entry, off, n):
            d, t, _ = self.mem.read(phys, k)
            data += d
            taint += t
        return bytes(data), bytes(taint)

    def store(self, addr: int, value: int, nbytes: int) -> list[int]:
        return self.store_bytes(addr, (value & ((1 << (8 * nbytes)) - 1)).to_bytes(nbytes, "little"))

    def load(self, addr: int, nbytes: int) -> tuple[int, bool]:
        data, taint = self.load_bytes(addr, nbytes)
        return int.from_bytes(data, "little"), any(taint)

    def slot_pair(self, addr: int, slot: int) -> tuple[int, int]:
        """Current (original word, shadow word) of ``slot`` in the allocation holding ``addr``."""
        entry, _ = self.locate(addr)
        return (self.mem.read_word(entry.base + 8 * slot),
                self.mem.read_word(entry.shadow_base + 8 * slot))

    # -- conversions at declassification boundaries

    def declassify_region(self, addr: int, n: int) -> bytes:
        """Reassemble ``n`` logical bytes into plain form."""
        return self.load_bytes(addr, n)[0]

    def classify_region(self, buf: bytes, addr: int) -> None:
        self.store_bytes(addr, bytes(buf))

    def prefix_intact(self) -> bool:
        """True iff every slot of every registered region carries the prefix."""
        for base, size in self.shadow.regions():
            for a in range(base, base + size, 8):
                if self.mem.read(a + 4, 4)[0] != self._prefix_bytes:
                    return False
        return True
