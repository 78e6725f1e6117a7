from __future__ import annotations

from dataclasses import dataclass

from .. import intrinsics
from .nodes import (
    ACCESS_SIZES, ALIGNMENTS, BINARY_OPS, PTR, SCALAR_TYPES, VOID, WIDTH,
    FunctionDef, Imm, Instr, Loc, Program, Reg, Sym,
)


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # MalformedBlock, TypeMismatch, UseBeforeDef, ...
    message: str
    function: str = ""
    block: str = ""
    index: int = -1
    loc: Loc = Loc()

    def __str__(self) -> str:
        where = f"{self.function}:{self.block}:{self.index}" if self.function else "<program>"
        return f"{self.loc} [{self.kind}] {where}: {self.message}"


def result_type(ins: Instr) -> str | None:
    if ins.dest is None:
        return None
    if ins.op in ("alloca", "secret_alloca", "gep"):
        return PTR
    if ins.op == "icmp":
        return "i64"
    return ins.ty


def successors(ins: Instr) -> tuple:
    return ins.targets if ins.op in ("br", "condbr") else ()


def dominators(fn: FunctionDef) -> dict[str, set]:
    """Dominator sets for blocks reachable from the entry block."""
    if not fn.blocks:
        return {}
    succ = {}
    for b in fn.blocks:
        succ[b.label] = successors(b.instrs[-1]) if b.instrs else ()
    entry = fn.blocks[0].label
    reach, stack = {entry}, [entry]
    while stack:
        for s in succ[stack.pop()]:
            if s in succ and s not in reach:
                reach.add(s)
                stack.append(s)
    preds = {lbl: [] for lbl in reach}
    for lbl in reach:
        for s in succ[lbl]:
            if s in preds:
                preds[s].append(lbl)
    order = [b.label for b in fn.blocks if b.label in reach]
    dom = {lbl: set(reach) for lbl in reach}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for lbl in order[1:]:
            ps = [dom[p] for p in preds[lbl]]
            new = set.intersection(*ps) if ps else set()
            new = new | {lbl}
            if new != dom[lbl]:
                dom[lbl] = new
                changed = True
    return dom


class _FnChecker:
    def __init__(self, prog: Program, fn: FunctionDef, out: list):
        self.prog = prog
        self.fn = fn
        self.out = out
        self.types = {p.name: p.ty for p in fn.params}
        self.defsite = {}
        for b in fn.blocks:
            for i, ins in enumerate(b.instrs):
                rt = result_type(ins)
                if rt is not None:
                    self.types[ins.dest] = rt
                    self.defsite[ins.dest] = (b.label, i)
        self.globals = {g.name for g in prog.globals}
        self.where = ("", -1, Loc())

    def diag(self, kind: str, msg: str):
        block, index, loc = self.where
        self.out.append(Diagnostic(kind, msg, self.fn.name, block, index, loc))

    def type_of(self, v) -> str | None:
        if isinstance(v, Reg):
            return self.types.get(v.name)
        if isinstance(v, Sym):
            return PTR
        return None

    def want(self, v, ty: str, what: str):
        if isinstance(v, Imm):
            if ty not in WIDTH or not 0 <= v.value < (1 << WIDTH[ty]):
                self.diag("TypeMismatch", f"{what}: literal {v.value} is not a valid {ty}")
            return
        if isinstance(v, Sym) and v.name not in self.globals:
            self.diag("UndefinedValue", f"{what}: unknown global @{v.name}")
            return
        got = self.type_of(v)
        if got is None:
            self.diag("UndefinedValue", f"{what}: undefined register {v}")
        elif got != ty:
            self.diag("TypeMismatch", f"{what}: expected {ty}, got {got} ({v})")

    def want_int(self, v, what: str):
        if isinstance(v, Imm):
            return
        got = self.type_of(v)
        if got is None:
            self.diag("UndefinedValue", f"{what}: undefined value {v}")
        elif got not in SCALAR_TYPES:
            self.diag("TypeMismatch", f"{what}: expected an integer, got {got}")

    def check(self) -> set:
        fn = self.fn
        rets = set()
        if not fn.blocks:
            self.where = ("", -1, fn.loc)
            self.diag("MalformedBlock", "function has no blocks")
            return rets
        for b in fn.blocks:
            if not b.instrs:
                self.where = (b.label, -1, b.loc)
                self.diag("MalformedBlock", f"block {b.label!r} is empty")
                continue
            for i, ins in enumerate(b.instrs):
                self.where = (b.label, i, ins.loc)
                last = i == len(b.instrs) - 1
                if ins.is_terminator and not last:
                    self.diag("MalformedBlock", f"terminator {ins.op!r} before end of block {b.label!r}")
                if last and not ins.is_terminator:
                    self.diag("MalformedBlock", f"block {b.label!r} does not end in a terminator")
                self.check_instr(ins)
                if ins.op == "ret":
                    rets.add(ins.ty)
        if len(rets) > 1:
            self.where = ("", -1, fn.loc)
            self.diag("TypeMismatch", f"inconsistent return types {sorted(rets)}")
        self.check_dominance()
        return rets

    def check_instr(self, ins: Instr):
        op, a = ins.op, ins.args
        if ins.ty not in WIDTH and ins.ty != VOID:
            self.diag("TypeMismatch", f"unknown type {ins.ty!r}")
            return
        if op in ("alloca", "secret_alloca"):
            if ins.ty not in SCALAR_TYPES or ins.count < 1:
                self.diag("BadAccess", "alloca needs an integer element type and count >= 1")
        elif op in ("load", "store"):
            if ins.access_size not in ACCESS_SIZES:
                self.diag("BadAccess", f"access size {ins.access_size} not supported")
            if ins.align not in ALIGNMENTS:
                self.diag("BadAccess", f"alignment {ins.align} not in {ALIGNMENTS}")
            if op == "load":
                self.want(a[0], PTR, "load address")
            else:
                self.want(a[0], ins.ty, "stored value")
                self.want(a[1], PTR, "store address")
        elif op == "gep":
            self.want(a[0], PTR, "gep base")
            self.want(a[1], "i64", "gep offset")
        elif op in BINARY_OPS:
            if ins.ty == PTR:
                self.diag("TypeMismatch", f"{op} on ptr (use gep)")
            self.want(a[0], ins.ty, f"{op} lhs")
            self.want(a[1], ins.ty, f"{op} rhs")
        elif op == "icmp":
            self.want(a[0], ins.ty, "icmp lhs")
            self.want(a[1], ins.ty, "icmp rhs")
        elif op == "select":
            self.want_int(a[0], "select condition")
            self.want(a[1], ins.ty, "select true value")
            self.want(a[2], ins.ty, "select false value")
        elif op == "condbr":
            if ins.ty not in SCALAR_TYPES:
                self.diag("TypeMismatch", "condbr condition must be an integer")
            self.want(a[0], ins.ty, "condbr condition")
        elif op == "ret":
            if ins.ty != VOID:
                self.want(a[0], ins.ty, "return value")
        elif op == "const":
            self.want(a[0], ins.ty, "const")
        elif op == "call":
            self.check_call(ins)
        elif op != "br":
            self.diag("UnknownOpcode", f"unknown opcode {op!r}")
        labels = {b.label for b in self.fn.blocks}
        for t in ins.targets:
            if t not in labels:
                self.diag("UndefinedLabel", f"unknown label {t!r}")

    def check_call(self, ins: Instr):
        if len(ins.arg_types) != len(ins.args):
            self.diag("ArityMismatch", "argument types and values differ in length")
            return
        for t, v in zip(ins.arg_types, ins.args):
            self.want(v, t, f"argument of @{ins.callee}")
        name = ins.callee
        if self.prog.has_function(name):
            callee = self.prog.function(name)
            if len(callee.params) != len(ins.args):
                self.diag("ArityMismatch", f"@{name} takes {len(callee.params)} arguments, got {len(ins.args)}")
                return
            for p, t in zip(callee.params, ins.arg_types):
                if p.ty != t:
                    self.diag("TypeMismatch", f"@{name} parameter %{p.name} is {p.ty}, got {t}")
            rets = {i.ty for b in callee.blocks for i in b.instrs if i.op == "ret"}
            if rets and ins.ty not in rets:
                self.diag("TypeMismatch", f"@{name} returns {sorted(rets)}, call expects {ins.ty}")
        elif intrinsics.is_intrinsic(name):
            sig = intrinsics.ALL[name]
            if len(sig.params) != len(ins.args):
                self.diag("ArityMismatch", f"@{name} takes {len(sig.params)} arguments, got {len(ins.args)}")
                return
            for accepted, t in zip(sig.params, ins.arg_types):
                if t not in accepted:
                    self.diag("TypeMismatch", f"@{name} does not accept {t}")
            if ins.ty not in sig.ret:
                self.diag("TypeMismatch", f"@{name} returns {sorted(sig.ret)}, call expects {ins.ty}")
        else:
            self.diag("UndefinedFunction", f"unknown function @{name}")
            return
        if ins.dest is not None and ins.ty == VOID:
            self.diag("TypeMismatch", "void call cannot define a register")

    def check_dominance(self):
        dom = dominators(self.fn)
        for b in self.fn.blocks:
            if b.label not in dom:
                continue
            for i, ins in enumerate(b.instrs):
                for name in ins.uses():
                    if name not in self.defsite:
                        continue  # params, or undefined (reported elsewhere)
                    dblock, di = self.defsite[name]
                    ok = (dblock == b.label and di < i) or (dblock != b.label and dblock in dom[b.label])
                    if not ok:
                        self.where = (b.label, i, ins.loc)
                        self.diag("UseBeforeDef", f"%{name} does not dominate this use")


def validate(prog: Program) -> list[Diagnostic]:
    """Check every structural and typing invariant; an empty list means valid."""
    out: list[Diagnostic] = []
    for g in prog.globals:
        if g.size < 1 or len(g.init) != g.size:
            out.append(Diagnostic("InvalidGlobal",
                                  f"@{g.name}: size {g.size} but {len(g.init)} initializer bytes", loc=g.loc))
    names = [f.name for f in prog.functions]
    for n in set(names):
        if names.count(n) > 1:
            out.append(Diagnostic("DuplicateDefinition", f"function {n!r} defined {names.count(n)} times"))
    for fn in prog.functions:
        rets = _FnChecker(prog, fn, out).check()
        if fn.name == prog.entry:
            for p in fn.params:
                if p.ty not in SCALAR_TYPES:
                    out.append(Diagnostic("BadEntry", f"entry parameter %{p.name} must be an integer",
                                          fn.name, loc=fn.loc))
            if rets - {"i64", VOID}:
                out.append(Diagnostic("BadEntry", "entry must return i64 or void", fn.name, loc=fn.loc))
    if not prog.has_function(prog.entry):
        out.append(Diagnostic("MissingEntry", f"entry function {prog.entry!r} is not defined"))
    return out
