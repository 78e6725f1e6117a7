"""Oracle for an address-based data memory-dependent prefetcher.

The model scans 8-byte-aligned words and treats each value as a candidate
virtual address. A candidate leaks if its translation gets anywhere: a
page walk that resolves at least one of the four 9-bit levels. Partial
success is judged against the set of mapped pages only (no TLB or
page-walk-cache structure), which is the most attacker-friendly reading.

``heuristic`` additionally requires the value to point into the same
locality window (4 GiB by default) as the word storing it; ``aggressive``
drops that requirement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .memory import PAGE_SHIFT, VA_BITS, MemoryImage

LEVELS = 4
LEVEL_BITS = 9
DEFAULT_WINDOW_BITS = 32  # 4 GiB


@dataclass(frozen=True)
class DmpMode:
    kind: str  # heuristic | aggressive
    window_bits: int = DEFAULT_WINDOW_BITS

    def __post_init__(self):
        if self.kind not in ("heuristic", "aggressive"):
            raise ValueError(f"unknown DMP mode {self.kind!r}")

    def __str__(self) -> str:
        return self.kind


HEURISTIC = DmpMode("heuristic")
AGGRESSIVE = DmpMode("aggressive")


def as_mode(mode) -> DmpMode:
    return mode if isinstance(mode, DmpMode) else DmpMode(str(mode))


def _walk_index(m: MemoryImage) -> list[set]:
    cached = getattr(m, "_walk_index", None)
    if cached is not None and cached[0] == m.version:
        return cached[1]
    index = []
    for level in range(1, LEVELS + 1):
        shift = LEVEL_BITS * (LEVELS - level)
        index.append({pn >> shift for pn in m.pages})
    m._walk_index = (m.version, index)
    return index


def page_walk(value: int, m: MemoryImage) -> int:
    """Number of page-table levels (0..4) that resolve when ``value`` is walked."""
    if value >> VA_BITS:
        return 0
    vpn = value >> PAGE_SHIFT
    depth = 0
    for level, prefixes in enumerate(_walk_index(m), start=1):
        if (vpn >> (LEVEL_BITS * (LEVELS - level))) not in prefixes:
            break
        depth = level
    return depth


def is_prefetch_candidate(addr: int, value: int, mode, m: MemoryImage) -> bool:
    mode = as_mode(mode)
    if mode.kind == "heuristic" and (value >> mode.window_bits) != (addr >> mode.window_bits):
        return False
    return page_walk(value, m) >= 1


@dataclass(frozen=True)
class Finding:
    addr: int
    value: int
    walk_depth: int
    mode: str
    tainted: bool

    def to_json(self) -> dict:
        return {"addr": hex(self.addr), "value": hex(self.value),
                "walk_depth": self.walk_depth, "tainted": self.tainted}


@dataclass
class DmpReport:
    mode: str
    findings: list = field(default_factory=list)
    scanned: int = 0

    @property
    def tainted(self) -> list:
        return [f for f in self.findings if f.tainted]

    def merge(self, other: "DmpReport") -> "DmpReport":
        """Union of findings (keyed by address and value); scanned counts add up."""
        seen = {(f.addr, f.value, f.tainted) for f in self.findings}
        merged = list(self.findings)
        for f in other.findings:
            key = (f.addr, f.value, f.tainted)
            if key not in seen:
                seen.add(key)
                merged.append(f)
        return DmpReport(self.mode, merged, self.scanned + other.scanned)

    def to_json(self) -> dict:
        return {"mode": self.mode, "scanned": self.scanned,
                "findings": [f.to_json() for f in self.findings]}


def scan(m: MemoryImage, mode) -> DmpReport:
    """Evaluate every mapped 8-byte-aligned word as a prefetch candidate."""
    mode = as_mode(mode)
    report = DmpReport(mode.kind)
    wb = mode.window_bits
    heuristic = mode.kind == "heuristic"
    for addr, value, tainted in m.words():
        report.scanned += 1
        if heuristic and (value >> wb) != (addr >> wb):
            continue
        depth = page_walk(value, m)
        if depth >= 1:
            report.findings.append(Finding(addr, value, depth, mode.kind, tainted))
    return report


class AuditCollector:
    """``on_audit`` callback that scans memory at every audit point in each mode."""

    def __init__(self, modes=(HEURISTIC, AGGRESSIVE)):
        self.modes = [as_mode(m) for m in modes]
        self.reports = {m.kind: DmpReport(m.kind) for m in self.modes}
        self.points = 0
        self.tainted_points = 0

    def __call__(self, mem: MemoryImage, label: str):
        self.points += 1
        hit = False
        for mode in self.modes:
            r = scan(mem, mode)
            hit = hit or bool(r.tainted)
            self.reports[mode.kind] = self.reports[mode.kind].merge(r)
        self.tainted_points += hit

    @property
    def tainted_findings(self) -> int:
        return sum(len(r.tainted) for r in self.reports.values())


SPLIT = "instrumented-split"
PLAIN = "plain-nonsecret"
VIOLATION = "violation"


@dataclass
class StoreAudit:
    counts: dict
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def classify_store(event, prefix: int) -> str:
    """Classify one recorded store as split, plain-nonsecret or violation.

    A split store must leave the prefix in bytes 4..7 of both words of every
    (original, shadow) slot pair it touched. A plain store is a violation
    when it writes secret-derived bytes or lands inside secret memory.
    """
    if event.kind == "split":
        for orig, shadow in event.slots:
            if (orig >> 32) != prefix or (shadow >> 32) != prefix:
                return VIOLATION
        return SPLIT if event.slots else VIOLATION
    if event.tainted or event.secret_region:
        return VIOLATION
    return PLAIN


def audit_stores(trace) -> StoreAudit:
    counts = {SPLIT: 0, PLAIN: 0, VIOLATION: 0}
    violations = []
    for ev in trace.stores:
        cls = classify_store(ev, trace.prefix)
        counts[cls] += 1
        if cls == VIOLATION:
            violations.append(ev)
    return StoreAudit(counts, violations)
