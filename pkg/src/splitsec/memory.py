"""Sparse simulated address space shared by the interpreter, runtime and oracle.

Addresses are 64-bit integers but only the low 48 bits may be mapped; any
access whose bits 48..63 are nonzero faults as non-canonical. Every byte
carries a value, a taint bit (secret-derived data) and a written bit used
to flag reads of never-written memory.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

PAGE_SIZE = 4096
PAGE_SHIFT = 12
VA_BITS = 48
CANONICAL_MASK = (1 << VA_BITS) - 1

# All user memory lives in one 4 GiB-aligned window whose level-1 page-table
# index is nonzero, so small integers (including 0) never share a walk prefix
# with a mapped page.
REGION_BASE = 0x5555_0000_0000
GLOBAL_BASE = REGION_BASE + 0x1_0000
HEAP_BASE = REGION_BASE + 0x100_0000
STACK_BASE = REGION_BASE + 0x8000_0000
STACK_LIMIT = STACK_BASE + 0x100_0000

DATA_KINDS = ("heap", "stack", "shadow")


class Fault(Exception):
    """A simulated machine fault; ``kind`` names the fault class."""

    NON_CANONICAL = "NonCanonicalAccess"
    UNMAPPED = "Unmapped"
    STEP_LIMIT = "StepLimit"
    OUT_OF_MEMORY = "OutOfSimulatedMemory"
    UNREGISTERED = "UnregisteredAddress"
    DOUBLE_FREE = "DoubleFree"
    NOT_SECRET = "NotSecretAllocation"
    BAD_FREE = "InvalidFree"
    BAD_SIZE = "InvalidAllocation"

    def __init__(self, kind: str, message: str = "", addr: int | None = None):
        self.kind = kind
        self.addr = addr
        self.message = message or kind
        super().__init__(f"{kind}: {self.message}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": self.message,
                "addr": None if self.addr is None else hex(self.addr)}


def ceil8(n: int) -> int:
    return (n + 7) & ~7


def is_canonical(addr: int) -> bool:
    return 0 <= addr <= CANONICAL_MASK


@dataclass
class Range:
    start: int
    size: int
    kind: str  # global | heap | stack | shadow | runtime
    label: str = ""

    @property
    def end(self) -> int:
        return self.start + self.size


class _Page:
    __slots__ = ("data", "taint", "written", "refs")

    def __init__(self):
        self.data = bytearray(PAGE_SIZE)
        self.taint = bytearray(PAGE_SIZE)
        self.written = bytearray(PAGE_SIZE)
        self.refs = 0

    def clone(self) -> "_Page":
        p = _Page.__new__(_Page)
        p.data = bytearray(self.data)
        p.taint = bytearray(self.taint)
        p.written = bytearray(self.written)
        p.refs = self.refs
        return p


class MemoryImage:
    def __init__(self):
        self.pages: dict[int, _Page] = {}
        self.ranges: dict[int, Range] = {}
        self._starts: list[int] = []
        self.mapped_bytes = 0
        self.peak_mapped = 0
        self.kind_bytes: dict[str, int] = {}
        self.data_bytes = 0
        self.peak_data = 0
        self.version = 0

    # -- mapping

    def map(self, start: int, size: int, kind: str, label: str = "") -> Range:
        if size <= 0 or not is_canonical(start) or not is_canonical(start + size - 1):
            raise Fault(Fault.OUT_OF_MEMORY, f"cannot map {size} bytes at {start:#x}", start)
        i = bisect.bisect_left(self._starts, start)
        if i > 0 and self.ranges[self._starts[i - 1]].end > start:
            raise ValueError(f"overlapping mapping at {start:#x}")
        if i < len(self._starts) and self._starts[i] < start + size:
            raise ValueError(f"overlapping mapping at {start:#x}")
        rng = Range(start, size, kind, label)
        self._starts.insert(i, start)
        self.ranges[start] = rng
        for pn in range(start >> PAGE_SHIFT, ((start + size - 1) >> PAGE_SHIFT) + 1):
            page = self.pages.get(pn)
            if page is None:
                page = self.pages[pn] = _Page()
            page.refs += 1
        # fresh memory reads as zero and untainted
        self._fill(start, size, 0, 0, 0)
        self._account(kind, size)
        self.version += 1
        return rng

    def unmap(self, start: int) -> Range:
        rng = self.ranges.pop(start)
        self._starts.remove(start)
        self._fill(start, rng.size, 0, 0, 0)
        for pn in range(start >> PAGE_SHIFT, ((start + rng.size - 1) >> PAGE_SHIFT) + 1):
            page = self.pages[pn]
            page.refs -= 1
            if page.refs == 0:
                del self.pages[pn]
        self._account(rng.kind, -rng.size)
        self.version += 1
        return rng

    def _account(self, kind: str, delta: int):
        self.mapped_bytes += delta
        self.kind_bytes[kind] = self.kind_bytes.get(kind, 0) + delta
        self.peak_mapped = max(self.peak_mapped, self.mapped_bytes)
        if kind in DATA_KINDS:
            self.data_bytes += delta
            self.peak_data = max(self.peak_data, self.data_bytes)

    def range_at(self, addr: int) -> Range | None:
        i = bisect.bisect_right(self._starts, addr) - 1
        if i < 0:
            return None
        rng = self.ranges[self._starts[i]]
        return rng if addr < rng.end else None

    def check(self, addr: int, n: int) -> Range:
        if not is_canonical(addr) or not is_canonical(addr + n - 1):
            raise Fault(Fault.NON_CANONICAL, f"access to non-canonical address {addr:#x}", addr)
        rng = self.range_at(addr)
        if rng is None or addr + n > rng.end:
            raise Fault(Fault.UNMAPPED, f"{n}-byte access to unmapped address {addr:#x}", addr)
        return rng

    # -- byte access

    def _chunks(self, addr: int, n: int):
        while n > 0:
            pn, off = addr >> PAGE_SHIFT, addr & (PAGE_SIZE - 1)
            k = min(n, PAGE_SIZE - off)
            yield self.pages[pn], off, k
            addr += k
            n -= k

    def _fill(self, addr: int, n: int, value: int, taint: int, written: int):
        for page, off, k in self._chunks(addr, n):
            page.data[off:off + k] = bytes([value]) * k
            page.taint[off:off + k] = bytes([taint]) * k
            page.written[off:off + k] = bytes([written]) * k

    def read(self, addr: int, n: int) -> tuple[bytes, bytes, bool]:
        """Return (values, taint bits, fully_written) for ``n`` bytes."""
        self.check(addr, n)
        data, taint, written = bytearray(), bytearray(), True
        for page, off, k in self._chunks(addr, n):
            data += page.data[off:off + k]
            taint += page.taint[off:off + k]
            if written and 0 in page.written[off:off + k]:
                written = False
        return bytes(data), bytes(taint), written

    def write(self, addr: int, data: bytes, taint) -> None:
        """Write ``data``; ``taint`` is one 0/1 flag for all bytes or a per-byte sequence."""
        n = len(data)
        if n == 0:
            return
        self.check(addr, n)
        if isinstance(taint, (bool, int)):
            taint = bytes([1 if taint else 0]) * n
        pos = 0
        for page, off, k in self._chunks(addr, n):
            page.data[off:off + k] = data[pos:pos + k]
            page.taint[off:off + k] = taint[pos:pos + k]
            page.written[off:off + k] = b"\x01" * k
            pos += k

    def read_word(self, addr: int) -> int:
        return int.from_bytes(self.read(addr, 8)[0], "little")

    # -- whole-image views

    def words(self):
        """Yield (address, value, tainted) for every mapped 8-byte-aligned word."""
        for start in self._starts:
            rng = self.ranges[start]
            a = (rng.start + 7) & ~7
            while a + 8 <= rng.end:
                page = self.pages[a >> PAGE_SHIFT]
                off = a & (PAGE_SIZE - 1)
                if off + 8 <= PAGE_SIZE:
                    raw = page.data[off:off + 8]
                    tainted = any(page.taint[off:off + 8])
                else:
                    raw, tb, _ = self.read(a, 8)
                    tainted = any(tb)
                yield a, int.from_bytes(raw, "little"), tainted
                a += 8

    def mapped_pages(self) -> list[int]:
        return sorted(self.pages)

    def copy(self) -> "MemoryImage":
        m = MemoryImage()
        m.pages = {pn: p.clone() for pn, p in self.pages.items()}
        m.ranges = {s: Range(r.start, r.size, r.kind, r.label) for s, r in self.ranges.items()}
        m._starts = list(self._starts)
        m.mapped_bytes = self.mapped_bytes
        m.peak_mapped = self.peak_mapped
        m.kind_bytes = dict(self.kind_bytes)
        m.data_bytes = self.data_bytes
        m.peak_data = self.peak_data
        m.version = self.version
        return m


class Arena:
    """Bump allocator over a fixed address window.

    Addresses are never reused, so use-after-free always faults. A gap
    separates neighbouring blocks so an original region and its shadow are
    never contiguous.
    """

    GAP = 16

    def __init__(self, mem: MemoryImage, base: int, limit: int, kind: str):
        self.mem = mem
        self.base = base
        self.limit = limit
        self.kind = kind
        self.next = base
        self.live: dict[int, int] = {}

    def alloc(self, size: int, kind: str | None = None, label: str = "") -> int:
        if size <= 0:
            raise Fault(Fault.BAD_SIZE, f"allocation of {size} bytes")
        size = ceil8(size)
        addr = self.next
        if addr + size > self.limit:
            raise Fault(Fault.OUT_OF_MEMORY, f"arena {self.kind} exhausted")
        self.mem.map(addr, size, kind or self.kind, label)
        self.live[addr] = size
        self.next = (addr + size + self.GAP + 15) & ~15
        return addr

    def free(self, addr: int) -> int:
        if addr not in self.live:
            raise Fault(Fault.BAD_FREE, f"free of {addr:#x} which is not a live allocation", addr)
        self.mem.unmap(addr)
        return self.live.pop(addr)


class Stack:
    """Frame-structured stack; popping a frame unmaps its allocas."""

    def __init__(self, mem: MemoryImage, base: int = STACK_BASE, limit: int = STACK_LIMIT):
        self.mem = mem
        self.base = base
        self.limit = limit
        self.sp = base
        self.frames: list[tuple[int, list[int]]] = []

    def push(self):
        self.frames.append((self.sp, []))

    def alloca(self, size: int, label: str = "") -> int:
        size = ceil8(max(size, 1))
        addr = self.sp
        if addr + size > self.limit:
            raise Fault(Fault.OUT_OF_MEMORY, "stack overflow")
        self.mem.map(addr, size, "stack", label)
        self.frames[-1][1].append(addr)
        self.sp = addr + size
        return addr

    def pop(self):
        sp, allocs = self.frames.pop()
        for a in allocs:
            self.mem.unmap(a)
        self.sp = sp

    @property
    def depth(self) -> int:
        return len(self.frames)
