"""Deterministic interpreter for IR programs over a simulated tagged address space.

Raw loads and stores go straight to :class:`MemoryImage`, so dereferencing a
tagged (bit 63 set) address faults as non-canonical. Only the ``ss_*``
runtime intrinsics know how to reach secret memory.

The performance proxy is an instruction count: one unit per executed IR
instruction plus a fixed micro-op charge for each intrinsic, recorded under
``rt:<name>`` in ``icount_by_opcode``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .ir import BINARY_OPS, WIDTH, Imm, Program, Reg, Sym, byte_size
from .memory import (
    GLOBAL_BASE, HEAP_BASE, STACK_BASE, Arena, Fault, MemoryImage, Stack, ceil8,
)
from .runtime import DEFAULT_PREFIX, MASK64, Runtime, clear_tag, is_secret

DEFAULT_STEP_LIMIT = 100_000_000
GLOBAL_CTOR = "__ss_global_ctor"
MAX_WARNINGS = 100


def taint_for_write(kind: str, value_tainted: bool, n: int) -> bytes:
    """Taint bits for ``n`` bytes written by a store of the given kind.

    ``split`` data segments are always secret, runtime ``prefix`` and
    ``declassify`` output never is, and ``plain`` stores inherit the
    (conservatively OR-ed) taint of the stored value.
    """
    if kind == "split":
        return b"\x01" * n
    if kind in ("prefix", "declassify"):
        return b"\x00" * n
    if kind == "plain":
        return (b"\x01" if value_tainted else b"\x00") * n
    raise ValueError(kind)


@dataclass
class StoreEvent:
    kind: str  # plain | split
    addr: int  # untagged
    size: int
    tainted: bool
    site: str
    secret_region: bool = False  # plain write landing inside a registered secret region
    slots: tuple = ()  # split only: (original word, shadow word) per touched slot


@dataclass
class ExecTrace:
    icount_by_opcode: Counter = field(default_factory=Counter)
    exit: Optional[int] = None
    out: bytearray = field(default_factory=bytearray)
    fault: Optional[Fault] = None
    prefix: int = DEFAULT_PREFIX
    audit_points: list = field(default_factory=list)  # (icount, label)
    snapshots: list = field(default_factory=list)
    stores: list = field(default_factory=list)
    shadow_trace: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    uninit_reads: int = 0
    peak_mapped: int = 0
    peak_data: int = 0
    secret_peak_logical: int = 0
    secret_peak_physical: int = 0
    memory: Optional[MemoryImage] = None

    @property
    def icount(self) -> int:
        return sum(self.icount_by_opcode.values())

    @property
    def ok(self) -> bool:
        return self.fault is None

    def to_json(self) -> dict:
        return {
            "icount_by_opcode": dict(sorted(self.icount_by_opcode.items())),
            "icount": self.icount,
            "faults": [self.fault.to_json()] if self.fault else [],
            "out_hex": bytes(self.out).hex(),
            "exit": self.exit,
            "warnings": self.warnings,
            "peak_mapped_bytes": self.peak_mapped,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _signed(v: int, bits: int) -> int:
    return v - (1 << bits) if v >> (bits - 1) else v


def _segments(addr: int, n: int) -> int:
    off = clear_tag(addr)
    return ((off + n - 1) >> 2) - (off >> 2) + 1


class Machine:
    def __init__(self, prog: Program, prefix: int = DEFAULT_PREFIX, step_limit: int = DEFAULT_STEP_LIMIT,
                 audit_points="stores", on_audit: Callable | None = None, keep_snapshots: bool = False,
                 record_stores: bool = True):
        self.prog = prog
        self.mem = MemoryImage()
        self.heap = Arena(self.mem, HEAP_BASE, STACK_BASE, "heap")
        self.stack = Stack(self.mem)
        self.rt = Runtime(self.mem, self.heap, prefix)
        self.trace = ExecTrace(prefix=prefix)
        self.counts = self.trace.icount_by_opcode
        self.step_limit = step_limit
        self.steps = 0
        self.audit_mode = audit_points
        self.on_audit = on_audit
        self.keep_snapshots = keep_snapshots
        self.record_stores = record_stores
        self.funcs = {f.name: {b.label: b.instrs for b in f.blocks} for f in prog.functions}
        self.entry_label = {f.name: f.blocks[0].label for f in prog.functions if f.blocks}
        self.params = {f.name: f.params for f in prog.functions}
        self.bounce: tuple[int, int] | None = None
        self.globals: dict[str, int] = {}
        self._global_names: dict[int, str] = {}
        self._map_globals()

    def _map_globals(self):
        addr = GLOBAL_BASE
        for g in self.prog.globals:
            size = ceil8(g.size)
            self.mem.map(addr, size, "global", g.name)
            self.mem.write(addr, g.init, 0)
            self.globals[g.name] = addr
            self._global_names[addr] = g.name
            addr = (addr + size + 16 + 15) & ~15

    # -- bookkeeping

    def warn(self, msg: str):
        self.trace.uninit_reads += 1
        if len(self.trace.warnings) < MAX_WARNINGS:
            self.trace.warnings.append(msg)

    def audit(self, label: str):
        self.trace.audit_points.append((self.steps, label))
        if self.keep_snapshots:
            self.trace.snapshots.append(self.mem.copy())
        if self.on_audit is not None:
            self.on_audit(self.mem, label)

    def _after_write(self, from_runtime: bool, label: str):
        mode = self.audit_mode
        if mode == "writes" or (mode == "stores" and from_runtime):
            self.audit(label)

    def _in_secret_region(self, addr: int, n: int) -> bool:
        for base, size in self.rt.shadow.regions():
            if addr < base + size and base < addr + n:
                return True
        return False

    def plain_write(self, addr: int, data: bytes, taint, site: str, from_runtime: bool = False):
        self.mem.write(addr, data, taint)
        if self.record_stores:
            tainted = bool(taint) if isinstance(taint, (bool, int)) else any(taint)
            self.trace.stores.append(StoreEvent("plain", addr, len(data), tainted, site,
                                                self._in_secret_region(addr, len(data))))
        self._after_write(from_runtime, site)

    def split_write(self, addr: int, data: bytes, site: str):
        touched = self.rt.store_bytes(addr, data)
        if self.record_stores:
            pairs = tuple(self.rt.slot_pair(addr, s) for s in touched)
            self.trace.stores.append(StoreEvent("split", clear_tag(addr), len(data), True, site, True, pairs))
        self._after_write(True, site)

    def read_any(self, addr: int, n: int) -> tuple[bytes, bytes]:
        if n == 0:
            return b"", b""
        if is_secret(addr):
            return self.rt.load_bytes(addr, n)
        data, taint, written = self.mem.read(addr, n)
        if not written:
            self.warn(f"read of unwritten memory at {addr:#x}")
        return data, taint

    def write_any(self, addr: int, data: bytes, taint: bytes, site: str):
        if not data:
            return
        if is_secret(addr):
            self.split_write(addr, data, site)
        else:
            self.plain_write(addr, data, taint, site, from_runtime=site.startswith("ss_"))

    def charge(self, name: str, cost: int):
        self.counts[f"rt:{name}"] += cost

    # -- execution

    def run(self, args: list[int]) -> ExecTrace:
        prog = self.prog
        entry = prog.function(prog.entry)
        if len(args) != len(entry.params):
            raise ValueError(f"{prog.entry} takes {len(entry.params)} arguments, got {len(args)}")
        tr = self.trace
        try:
            if GLOBAL_CTOR in self.funcs:
                self.call(GLOBAL_CTOR, [])
            argv = [(a & ((1 << WIDTH[p.ty]) - 1), True) for a, p in zip(args, entry.params)]
            value = self.call(prog.entry, argv)
            tr.exit = value[0] if value is not None else 0
        except Fault as f:
            tr.fault = f
        except RecursionError:
            tr.fault = Fault(Fault.OUT_OF_MEMORY, "call depth exceeded")
        if self.audit_mode != "none":
            self.audit("end")
        tr.peak_mapped = self.mem.peak_mapped
        tr.peak_data = self.mem.peak_data
        tr.secret_peak_logical = self.rt.peak_logical
        tr.secret_peak_physical = self.rt.peak_physical
        tr.memory = self.mem
        return tr

    def value(self, regs: dict, op):
        t = type(op)
        if t is Reg:
            return regs[op.name]
        if t is Imm:
            return op.value, False
        if t is Sym:
            return self.globals[op.name], False
        raise TypeError(op)

    def call(self, name: str, args: list):
        blocks = self.funcs[name]
        regs = {p.name: a for p, a in zip(self.params[name], args)}
        self.stack.push()
        label = self.entry_label[name]
        counts = self.counts
        every = self.audit_mode if isinstance(self.audit_mode, int) else 0
        while True:
            for idx, ins in enumerate(blocks[label]):
                self.steps += 1
                if self.steps > self.step_limit:
                    raise Fault(Fault.STEP_LIMIT, f"exceeded {self.step_limit} instructions")
                op = ins.op
                counts[op] += 1
                if every and self.steps % every == 0:
                    self.audit(f"step {self.steps}")
                if op in BINARY_OPS:
                    (a, ta), (b, tb) = self.value(regs, ins.args[0]), self.value(regs, ins.args[1])
                    bits = WIDTH[ins.ty]
                    if op == "add":
                        r = a + b
                    elif op == "sub":
                        r = a - b
                    elif op == "mul":
                        r = a * b
                    elif op == "xor":
                        r = a ^ b
                    elif op == "and":
                        r = a & b
                    elif op == "or":
                        r = a | b
                    elif op == "shl":
                        r = a << (b % bits)
                    else:
                        r = a >> (b % bits)
                    regs[ins.dest] = (r & ((1 << bits) - 1), ta or tb)
                elif op == "load":
                    addr, _ = self.value(regs, ins.args[0])
                    n = byte_size(ins.ty)
                    data, taint, written = self.mem.read(addr, n)
                    if not written:
                        self.warn(f"{name}:{label}:{idx} read of unwritten memory at {addr:#x}")
                    regs[ins.dest] = (int.from_bytes(data, "little"), any(taint))
                elif op == "store":
                    v, tv = self.value(regs, ins.args[0])
                    addr, _ = self.value(regs, ins.args[1])
                    n = byte_size(ins.ty)
                    self.plain_write(addr, v.to_bytes(n, "little"), taint_for_write("plain", tv, n),
                                     f"{name}:{label}:{idx}")
                elif op == "gep":
                    (b, tb), (o, to) = self.value(regs, ins.args[0]), self.value(regs, ins.args[1])
                    regs[ins.dest] = ((b + o) & MASK64, tb or to)
                elif op == "const":
                    regs[ins.dest] = (ins.args[0].value, False)
                elif op == "icmp":
                    (a, ta), (b, tb) = self.value(regs, ins.args[0]), self.value(regs, ins.args[1])
                    regs[ins.dest] = (int(self._compare(ins.pred, a, b, WIDTH[ins.ty])), ta or tb)
                elif op == "select":
                    c, tc = self.value(regs, ins.args[0])
                    a, ta = self.value(regs, ins.args[1])
                    b, tb = self.value(regs, ins.args[2])
                    regs[ins.dest] = (a if c else b, tc or ta or tb)
                elif op == "alloca":
                    regs[ins.dest] = (self.stack.alloca(ins.access_size, f"{name}:%{ins.dest}"), False)
                elif op == "secret_alloca":
                    size = ins.access_size
                    addr = self.stack.alloca(size, f"{name}:%{ins.dest}")
                    regs[ins.dest] = (self.rt.register_stack(addr, size), False)
                    self.charge("secret_alloca", 8 + 2 * (ceil8(size) // 8))
                    self.trace.shadow_trace.append(len(self.rt.shadow))
                elif op == "call":
                    argv = [self.value(regs, a) for a in ins.args]
                    if ins.callee in self.funcs:
                        result = self.call(ins.callee, argv)
                    else:
                        result = self.intrinsic(ins.callee, argv, ins.ty)
                    if ins.dest is not None:
                        regs[ins.dest] = result
                elif op == "br":
                    label = ins.targets[0]
                    break
                elif op == "condbr":
                    c, _ = self.value(regs, ins.args[0])
                    label = ins.targets[0] if c else ins.targets[1]
                    break
                elif op == "ret":
                    result = self.value(regs, ins.args[0]) if ins.args else None
                    self.stack.pop()
                    return result
                else:
                    raise Fault("BadInstruction", f"cannot execute {op!r}")
            else:
                raise Fault("BadInstruction", f"fell off the end of block {label!r} in {name}")

    @staticmethod
    def _compare(pred: str, a: int, b: int, bits: int) -> bool:
        if pred[0] == "s":
            a, b = _signed(a, bits), _signed(b, bits)
            pred = "u" + pred[1:]
        return {"eq": a == b, "ne": a != b, "ult": a < b, "ule": a <= b,
                "ugt": a > b, "uge": a >= b}[pred]

    # -- intrinsics

    def intrinsic(self, name: str, argv: list, ret_ty: str):
        vals = [v for v, _ in argv]
        taints = [t for _, t in argv]
        if name.startswith("ss_store"):
            n = int(name[8:]) // 8
            addr, value = vals
            data = value.to_bytes(n, "little")
            if is_secret(addr):
                self.charge(name, 4 + 3 * _segments(addr, n))
                self.split_write(addr, data, name)
            else:
                self.charge(name, 2)
                self.plain_write(addr, data, taint_for_write("plain", taints[1], n), name, from_runtime=True)
            return None
        if name.startswith("ss_load"):
            n = int(name[7:]) // 8
            addr = vals[0]
            if is_secret(addr):
                self.charge(name, 4 + 3 * _segments(addr, n))
                value, tainted = self.rt.load(addr, n)
            else:
                self.charge(name, 2)
                data, taint = self.read_any(addr, n)
                value, tainted = int.from_bytes(data, "little"), any(taint)
            return value, tainted
        handler = getattr(self, f"_i_{name}", None)
        if handler is None:
            raise Fault("UnknownIntrinsic", f"no implementation for @{name}")
        return handler(vals, taints)

    def _i_malloc(self, vals, taints):
        self.charge("malloc", 4)
        return self.heap.alloc(vals[0], "heap", "malloc"), False

    def _i_free(self, vals, taints):
        self.charge("free", 4)
        self.heap.free(vals[0])

    # secret_malloc/secret_free are annotations; untransformed they allocate plainly
    _i_secret_malloc = _i_malloc
    _i_secret_free = _i_free

    def _i_ss_secret_malloc(self, vals, taints):
        self.charge("ss_secret_malloc", 8 + 2 * (ceil8(max(vals[0], 1)) // 8))
        addr = self.rt.secret_malloc(vals[0])
        self.trace.shadow_trace.append(len(self.rt.shadow))
        return addr, False

    def _i_ss_secret_free(self, vals, taints):
        self.charge("ss_secret_free", 8)
        self.rt.secret_free(vals[0])
        self.trace.shadow_trace.append(len(self.rt.shadow))

    def _i_ss_is_secret(self, vals, taints):
        self.charge("ss_is_secret", 1)
        return int(is_secret(vals[0])), False

    def _i_ss_frame_push(self, vals, taints):
        self.charge("ss_frame_push", 2)
        self.rt.frame_push()

    def _i_ss_frame_pop(self, vals, taints):
        released = len(self.rt.shadow.frames[-1]) if self.rt.shadow.frames else 0
        self.charge("ss_frame_pop", 2 + 4 * released)
        self.rt.frame_pop()
        self.trace.shadow_trace.append(len(self.rt.shadow))

    def _i_ss_bind_global(self, vals, taints):
        addr, size = vals
        name = self._global_names.get(addr)
        if name is None:
            raise Fault(Fault.UNREGISTERED, f"{addr:#x} is not the address of a global", addr)
        self.charge("ss_bind_global", 8 + 2 * (ceil8(size) // 8))
        tagged = self.rt.bind_global(addr, size)
        self.globals[name] = tagged
        self.trace.shadow_trace.append(len(self.rt.shadow))
        self._after_write(True, "ss_bind_global")
        return tagged, False

    def _i_memcpy(self, vals, taints):
        dst, src, n = vals
        self.charge("memcpy", 2 + (n + 7) // 8)
        if n:
            data, taint, _ = self.mem.read(src, n)
            self.plain_write(dst, data, taint, "memcpy")

    def _i_memset(self, vals, taints):
        dst, v, n = vals
        self.charge("memset", 2 + (n + 7) // 8)
        if n:
            self.plain_write(dst, bytes([v & 0xFF]) * n, taint_for_write("plain", taints[1], n), "memset")

    def _i_memcmp(self, vals, taints):
        a, b, n = vals
        self.charge("memcmp", 2 + (n + 7) // 8)
        da, ta, _ = self.mem.read(a, n) if n else (b"", b"", True)
        db, tb, _ = self.mem.read(b, n) if n else (b"", b"", True)
        return self._cmp(da, db), any(ta) or any(tb)

    @staticmethod
    def _cmp(da: bytes, db: bytes) -> int:
        if da == db:
            return 0
        return 1 if da > db else MASK64

    def _rt_cost(self, addrs, n: int) -> int:
        if any(is_secret(a) for a in addrs):
            return 4 + 2 * n
        return 3 + (n + 7) // 8

    def _i_ss_memcpy(self, vals, taints):
        dst, src, n = vals
        self.charge("ss_memcpy", self._rt_cost((dst, src), n))
        data, taint = self.read_any(src, n)
        self.write_any(dst, data, taint, "ss_memcpy")

    def _i_ss_memset(self, vals, taints):
        dst, v, n = vals
        self.charge("ss_memset", self._rt_cost((dst,), n))
        self.write_any(dst, bytes([v & 0xFF]) * n, taint_for_write("plain", taints[1], n), "ss_memset")

    def _i_ss_memcmp(self, vals, taints):
        a, b, n = vals
        self.charge("ss_memcmp", self._rt_cost((a, b), n))
        da, ta = self.read_any(a, n)
        db, tb = self.read_any(b, n)
        return self._cmp(da, db), any(ta) or any(tb)

    def _i_write_out(self, vals, taints):
        buf, n = vals
        self.charge("write_out", 2 + (n + 7) // 8)
        if n:
            data, _, written = self.mem.read(buf, n)
            if not written:
                self.warn(f"write_out of unwritten memory at {buf:#x}")
            self.trace.out += data

    def _i_ss_declassify(self, vals, taints):
        addr, n = vals
        if not is_secret(addr):
            self.charge("ss_declassify", 1)
            return addr, False
        self.charge("ss_declassify", 4 + 2 * _segments(addr, n))
        plain = self.rt.declassify_region(addr, n)
        if self.bounce is None or self.bounce[1] < n:
            if self.bounce is not None:
                self.heap.free(self.bounce[0])
            self.bounce = (self.heap.alloc(max(n, 8), "runtime", "declassify"), ceil8(max(n, 8)))
        if n:
            self.plain_write(self.bounce[0], plain, taint_for_write("declassify", False, n),
                             "ss_declassify", from_runtime=True)
        return self.bounce[0], False

    def _i_ss_classify(self, vals, taints):
        buf, dst, n = vals
        self.charge("ss_classify", self._rt_cost((dst,), n))
        data, taint = self.read_any(buf, n)
        if is_secret(dst):
            if n:
                self.split_write(dst, data, "ss_classify")
        else:
            self.write_any(dst, data, taint, "ss_classify")


def run(prog: Program, args: list[int] | None = None, audit_points="stores", *,
        on_audit: Callable | None = None, keep_snapshots: bool = False,
        step_limit: int = DEFAULT_STEP_LIMIT, prefix: int | None = None,
        record_stores: bool = True) -> ExecTrace:
    """Execute ``prog`` from its entry function with integer ``args``.

    ``audit_points`` is ``"stores"`` (after every runtime split write, plus
    the end), ``"writes"`` (after every memory write), ``"end"``, ``"none"``
    or an integer N (every N instructions). At each point ``on_audit(mem,
    label)`` is called and, with ``keep_snapshots``, a copy of memory is kept.
    Faults are recorded in the returned trace rather than raised; a wrong
    argument count raises ValueError.
    """
    if prefix is None:
        prefix = int(prog.metadata.get("ss_prefix", hex(DEFAULT_PREFIX)), 16)
    m = Machine(prog, prefix, step_limit, audit_points, on_audit, keep_snapshots, record_stores)
    return m.run(list(args or []))
