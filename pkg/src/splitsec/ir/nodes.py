"""Data model for the splitsec IR.

A program is a flat list of globals and functions. Functions hold basic
blocks, blocks hold instructions, and every value is a virtual register,
an integer immediate, or a global symbol. Everything here is frozen so a
parsed Program can be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

SCALAR_TYPES = ("i8", "i16", "i32", "i64", "i128")
PTR = "ptr"
VOID = "void"

WIDTH = {"i8": 8, "i16": 16, "i32": 32, "i64": 64, "i128": 128, PTR: 64}

BINARY_OPS = ("add", "sub", "xor", "and", "or", "shl", "lshr", "mul")
ICMP_PREDICATES = ("eq", "ne", "ult", "ule", "ugt", "uge", "slt", "sle", "sgt", "sge")
TERMINATORS = ("br", "condbr", "ret")

OPCODES = (
    "alloca", "secret_alloca", "load", "store", "gep",
    *BINARY_OPS,
    "icmp", "select", "br", "condbr", "call", "ret", "const",
)

ACCESS_SIZES = (1, 2, 4, 8, 16)
ALIGNMENTS = (1, 2, 4, 8)


def byte_size(ty: str) -> int:
    return WIDTH[ty] // 8


def mask(ty: str) -> int:
    return (1 << WIDTH[ty]) - 1


@dataclass(frozen=True)
class Loc:
    line: int = 0
    col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Reg:
    name: str

    def __str__(self) -> str:
        return f"%{self.name}"


@dataclass(frozen=True)
class Imm:
    value: int  # two's complement, already reduced to the operand width

    def __str__(self) -> str:
        return str(self.value) if self.value < 256 else hex(self.value)


@dataclass(frozen=True)
class Sym:
    name: str

    def __str__(self) -> str:
        return f"@{self.name}"


Operand = Union[Reg, Imm, Sym]


@dataclass(frozen=True)
class Instr:
    """One IR instruction.

    ``ty`` is the declared type: the value type for arithmetic, loads,
    stores, const, select and icmp operands; the element type for allocas;
    the return type for calls and ret (``void`` allowed). ``args`` holds
    value operands in source order; branch targets live in ``targets``.
    """

    op: str
    ty: str
    dest: Optional[str] = None
    args: tuple = ()
    arg_types: tuple = ()  # call only
    callee: Optional[str] = None
    targets: tuple = ()
    pred: Optional[str] = None
    align: Optional[int] = None
    count: int = 1  # alloca element count
    secret: bool = False  # alloca attribute
    loc: Loc = field(default=Loc(), compare=False, repr=False)

    @property
    def is_terminator(self) -> bool:
        return self.op in TERMINATORS

    @property
    def access_size(self) -> int:
        """Bytes touched by a load/store, or bytes reserved by an alloca."""
        if self.op in ("alloca", "secret_alloca"):
            return byte_size(self.ty) * self.count
        return byte_size(self.ty)

    def uses(self) -> list[str]:
        return [a.name for a in self.args if isinstance(a, Reg)]


@dataclass(frozen=True)
class Block:
    label: str
    instrs: tuple = ()
    loc: Loc = field(default=Loc(), compare=False, repr=False)


@dataclass(frozen=True)
class Param:
    name: str
    ty: str


@dataclass(frozen=True)
class FunctionDef:
    name: str
    params: tuple = ()
    blocks: tuple = ()
    loc: Loc = field(default=Loc(), compare=False, repr=False)

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass(frozen=True)
class GlobalDef:
    name: str
    size: int
    init: bytes
    secret: bool = False
    loc: Loc = field(default=Loc(), compare=False, repr=False)


@dataclass(frozen=True)
class Program:
    globals: tuple = ()
    functions: tuple = ()
    entry: str = "main"
    meta: tuple = ()  # sorted (key, value) string pairs

    def function(self, name: str) -> FunctionDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)

    def global_def(self, name: str) -> GlobalDef:
        for g in self.globals:
            if g.name == name:
                return g
        raise KeyError(name)

    @property
    def metadata(self) -> dict[str, str]:
        return dict(self.meta)

    def with_meta(self, **kv: str) -> "Program":
        merged = dict(self.meta)
        merged.update(kv)
        return Program(self.globals, self.functions, self.entry, tuple(sorted(merged.items())))
