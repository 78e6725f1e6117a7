"""The split-and-prefix pass.

Secret-touching loads and stores become calls into the ``ss_*`` runtime,
secret allocations get a shadow region and a tagged address, libc-like
calls are redirected to split-aware versions, and ``write_out`` receives a
declassified copy of its buffer.

Each ``ss_load``/``ss_store`` call checks the address tag itself: a tagged
address takes the split path and an untagged one performs the original
plain access. The IR has no phi nodes, so a guarded load cannot rejoin its
two paths in IR form, and the guard therefore lives in the runtime entry
point. In ``annotated`` mode the pass leaves alone any access whose pointer
provably comes from a plain ``alloca``/``malloc`` in the same function.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import intrinsics
from .ir import (
    PTR, VOID, Block, FunctionDef, GlobalDef, Imm, Instr, Program, Reg, Sym,
    validate,
)
from .runtime import DEFAULT_PREFIX, check_prefix
from .vm import GLOBAL_CTOR

MODES = ("none", "annotated", "all_secret")


class TransformError(ValueError):
    pass


class UnsupportedInstruction(TransformError):
    pass


class UnknownIntrinsic(TransformError):
    pass


class AlreadyTransformed(TransformError):
    pass


@dataclass(frozen=True)
class Policy:
    mode: str = "annotated"
    globals_secret: bool = False
    prefix: int = DEFAULT_PREFIX

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown policy mode {self.mode!r}; expected one of {MODES}")
        check_prefix(self.prefix)
        if self.globals_secret and self.mode == "none":
            raise ValueError("globals_secret needs a transforming mode (annotated or all_secret)")


def rewrite_store(ins: Instr, policy: Policy) -> list[Instr]:
    if policy.mode == "none":
        return [ins]
    value, addr = ins.args
    return [Instr("call", VOID, args=(addr, value), arg_types=(PTR, ins.ty),
                  callee=intrinsics.store_intrinsic(ins.access_size), loc=ins.loc)]


def rewrite_load(ins: Instr, policy: Policy) -> list[Instr]:
    if policy.mode == "none":
        return [ins]
    return [Instr("call", ins.ty, ins.dest, args=(ins.args[0],), arg_types=(PTR,),
                  callee=intrinsics.load_intrinsic(ins.access_size), loc=ins.loc)]


def instrument_alloca(ins: Instr, policy: Policy) -> list[Instr]:
    if policy.mode == "none" or not (ins.secret or policy.mode == "all_secret"):
        return [ins]
    return [replace(ins, op="secret_alloca", secret=False)]


def plain_pointers(fn: FunctionDef, policy: Policy) -> set[str]:
    """Registers that can only ever hold untagged addresses under ``policy``."""
    if policy.mode != "annotated":
        return set()
    plain: set[str] = set()
    changed = True
    while changed:
        changed = False
        for b in fn.blocks:
            for ins in b.instrs:
                if ins.dest is None or ins.dest in plain:
                    continue
                if (ins.op == "alloca" and not ins.secret) \
                        or (ins.op == "call" and ins.callee == "malloc") \
                        or (ins.op == "gep" and isinstance(ins.args[0], Reg) and ins.args[0].name in plain):
                    plain.add(ins.dest)
                    changed = True
    return plain


def _access_addr(ins: Instr):
    return ins.args[0] if ins.op == "load" else ins.args[1]


def transform_sites(prog: Program, policy: Policy) -> set[tuple[str, str, int]]:
    """(function, block, index) of every original load/store the pass rewrites."""
    sites = set()
    if policy.mode == "none":
        return sites
    for fn in prog.functions:
        plain = plain_pointers(fn, policy)
        for b in fn.blocks:
            for i, ins in enumerate(b.instrs):
                if ins.op in ("load", "store"):
                    addr = _access_addr(ins)
                    if not (isinstance(addr, Reg) and addr.name in plain):
                        sites.add((fn.name, b.label, i))
    return sites


class _Names:
    def __init__(self, fn: FunctionDef):
        self.used = {p.name for p in fn.params}
        self.used |= {i.dest for b in fn.blocks for i in b.instrs if i.dest}
        self.n = 0

    def fresh(self) -> str:
        while True:
            self.n += 1
            name = f"ss.{self.n}"
            if name not in self.used:
                self.used.add(name)
                return name


def _redirect_call(ins: Instr, policy: Policy, names: _Names) -> list[Instr]:
    callee = ins.callee
    if callee == "secret_malloc" or (callee == "malloc" and policy.mode == "all_secret"):
        return [replace(ins, callee="ss_secret_malloc")]
    if callee == "secret_free" or (callee == "free" and policy.mode == "all_secret"):
        return [replace(ins, callee="ss_secret_free")]
    if callee in ("memcpy", "memset", "memcmp"):
        return [replace(ins, callee=f"ss_{callee}")]
    if callee == "write_out":
        buf, n = ins.args
        tmp = names.fresh()
        return [
            Instr("call", PTR, tmp, args=(buf, n), arg_types=(PTR, "i64"), callee="ss_declassify", loc=ins.loc),
            replace(ins, args=(Reg(tmp), n)),
        ]
    return [ins]


def _check_input(prog: Program, fn: FunctionDef):
    defined = {f.name for f in prog.functions}
    for b in fn.blocks:
        for ins in b.instrs:
            if ins.op == "secret_alloca":
                raise UnsupportedInstruction(f"{fn.name}: input already contains secret_alloca")
            if ins.op == "call" and ins.callee not in defined:
                if ins.callee in intrinsics.RUNTIME:
                    raise UnsupportedInstruction(f"{fn.name}: input already calls runtime @{ins.callee}")
                if ins.callee not in intrinsics.SOURCE:
                    raise UnknownIntrinsic(f"{fn.name}: call to unknown function @{ins.callee}")


def _transform_function(prog: Program, fn: FunctionDef, policy: Policy) -> FunctionDef:
    _check_input(prog, fn)
    sites = {(b, i) for f, b, i in transform_sites(prog, policy) if f == fn.name}
    names = _Names(fn)
    has_frame = any(
        ins.op == "alloca" and (ins.secret or policy.mode == "all_secret")
        for b in fn.blocks for ins in b.instrs
    )
    blocks = []
    for bi, b in enumerate(fn.blocks):
        out: list[Instr] = []
        if bi == 0 and has_frame:
            out.append(Instr("call", VOID, callee="ss_frame_push"))
        for i, ins in enumerate(b.instrs):
            if ins.op == "store" and (b.label, i) in sites:
                out += rewrite_store(ins, policy)
            elif ins.op == "load" and (b.label, i) in sites:
                out += rewrite_load(ins, policy)
            elif ins.op == "alloca":
                out += instrument_alloca(ins, policy)
            elif ins.op == "call" and not prog.has_function(ins.callee):
                out += _redirect_call(ins, policy, names)
            else:
                if ins.op == "ret" and has_frame:
                    out.append(Instr("call", VOID, callee="ss_frame_pop"))
                out.append(ins)
        blocks.append(Block(b.label, tuple(out), b.loc))
    return FunctionDef(fn.name, fn.params, tuple(blocks), fn.loc)


def intercept_intrinsics(prog: Program) -> Program:
    """Redirect libc-like calls to their split-aware runtime versions."""
    policy = Policy("annotated")
    fns = []
    for fn in prog.functions:
        _check_input(prog, fn)
        names = _Names(fn)
        blocks = []
        for b in fn.blocks:
            out = []
            for ins in b.instrs:
                if ins.op == "call" and ins.callee in intrinsics.INTERCEPTED and not prog.has_function(ins.callee):
                    out += _redirect_call(ins, policy, names)
                else:
                    out.append(ins)
            blocks.append(Block(b.label, tuple(out), b.loc))
        fns.append(FunctionDef(fn.name, fn.params, tuple(blocks), fn.loc))
    return replace(prog, functions=tuple(fns))


def _chunks(init: bytes):
    off = 0
    while off < len(init):
        for n, ty in ((8, "i64"), (4, "i32"), (2, "i16"), (1, "i8")):
            if len(init) - off >= n:
                yield off, ty, int.from_bytes(init[off:off + n], "little")
                off += n
                break


def emit_global_ctor(prog: Program, policy: Policy) -> Program:
    """Mark every global secret and prepend a constructor that converts them at start-up.

    The constructor binds each global to a zeroed split region, then writes
    its initializer back through ``ss_store`` calls. With no globals the
    constructor is omitted.
    """
    if not policy.globals_secret:
        return prog
    globals_ = tuple(GlobalDef(g.name, g.size, g.init, True, g.loc) for g in prog.globals)
    if not globals_:
        return replace(prog, globals=globals_)
    body: list[Instr] = []
    for gi, g in enumerate(globals_):
        base = f"g{gi}"
        body.append(Instr("call", PTR, base, args=(Sym(g.name), Imm(g.size)), arg_types=(PTR, "i64"),
                          callee="ss_bind_global"))
        for off, ty, value in _chunks(g.init):
            addr = Reg(base)
            if off:
                body.append(Instr("gep", PTR, f"{base}.{off}", args=(Reg(base), Imm(off))))
                addr = Reg(f"{base}.{off}")
            body.append(Instr("call", VOID, args=(addr, Imm(value)), arg_types=(PTR, ty),
                              callee=intrinsics.store_intrinsic(int(ty[1:]) // 8)))
    body.append(Instr("ret", VOID))
    ctor = FunctionDef(GLOBAL_CTOR, (), (Block("entry", tuple(body)),))
    return replace(prog, globals=globals_, functions=(ctor, *prog.functions))


def transform_program(prog: Program, policy: Policy) -> Program:
    """Apply the pass under ``policy``; mode ``none`` returns ``prog`` itself."""
    diags = validate(prog)
    if diags:
        raise TransformError("input does not validate:\n" + "\n".join(map(str, diags)))
    if "ss_policy" in prog.metadata:
        raise AlreadyTransformed(f"program was already transformed (policy {prog.metadata['ss_policy']})")
    if policy.mode == "none":
        return prog
    if prog.has_function(GLOBAL_CTOR):
        raise UnsupportedInstruction(f"function name {GLOBAL_CTOR!r} is reserved")
    fns = tuple(_transform_function(prog, fn, policy) for fn in prog.functions)
    out = replace(prog, functions=fns)
    out = emit_global_ctor(out, policy)
    out = out.with_meta(ss_policy=policy.mode, ss_prefix=f"{policy.prefix:#010x}",
                        ss_globals=str(int(policy.globals_secret)))
    diags = validate(out)
    if diags:
        raise TransformError("transformed program does not validate:\n" + "\n".join(map(str, diags)))
    return out
