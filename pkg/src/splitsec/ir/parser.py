"""Text front end for the IR.

The grammar is token based, so an instruction may share a line with its
neighbours (``fn main() { ret i64 0 }`` is a whole program), though the
printer always emits one instruction per line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .. import intrinsics
from .nodes import (
    BINARY_OPS, ICMP_PREDICATES, PTR, SCALAR_TYPES, VOID, WIDTH,
    Block, FunctionDef, GlobalDef, Imm, Instr, Loc, Param, Program, Reg, Sym,
)


class IRSyntaxError(ValueError):
    """Raised by :func:`parse_program`; ``errors`` lists every problem found."""

    def __init__(self, message: str, loc: Loc | None = None, errors: list | None = None):
        self.loc = loc or Loc()
        self.message = message
        self.errors = errors if errors is not None else [(self.loc, message)]
        super().__init__(f"{self.loc}: {message}")


class DuplicateDefinition(IRSyntaxError):
    pass


_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<comment>;[^\n]*)"
    r"|(?P<reg>%[A-Za-z0-9_.]+)"
    r"|(?P<sym>@[A-Za-z0-9_.]+)"
    r"|(?P<word>-?[A-Za-z0-9_.]+)"
    r"|(?P<punct>[(){},:=])"
)


@dataclass
class Token:
    kind: str
    text: str
    loc: Loc


def tokenize(text: str) -> list[Token]:
    out = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        loc = Loc(line, pos - line_start + 1)
        if m is None:
            raise IRSyntaxError(f"unexpected character {text[pos]!r}", loc)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            value = m.group()
            if kind in ("reg", "sym"):
                value = value[1:]
            out.append(Token(kind, value, loc))
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", Loc(line, pos - line_start + 1)))
    return out


def parse_int(text: str) -> int:
    neg = text.startswith("-")
    body = text[1:] if neg else text
    if body.lower().startswith("0x"):
        value = int(body[2:], 16)
    elif body.isdigit():
        value = int(body, 10)
    else:
        raise ValueError(text)
    return -value if neg else value


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.errors: list = []

    # -- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg: str, tok: Token | None = None):
        raise IRSyntaxError(msg, (tok or self.tok).loc)

    def expect_punct(self, ch: str) -> Token:
        if self.tok.kind != "punct" or self.tok.text != ch:
            self.fail(f"expected {ch!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expect_word(self, word: str | None = None) -> Token:
        t = self.tok
        if t.kind != "word" or (word is not None and t.text != word):
            self.fail(f"expected {word or 'identifier'!r}, found {t.text or 'end of input'!r}")
        return self.advance()

    def at_punct(self, ch: str) -> bool:
        return self.tok.kind == "punct" and self.tok.text == ch

    def at_word(self, word: str) -> bool:
        return self.tok.kind == "word" and self.tok.text == word

    def expect_int(self) -> int:
        t = self.expect_word()
        try:
            return parse_int(t.text)
        except ValueError:
            self.fail(f"expected integer, found {t.text!r}", t)

    def parse_type(self, allow_void: bool = False) -> str:
        t = self.expect_word()
        if t.text in SCALAR_TYPES or t.text == PTR or (allow_void and t.text == VOID):
            return t.text
        if t.text in ("f16", "f32", "f64", "float", "double", "half"):
            self.fail(f"floating-point type {t.text!r} is not supported", t)
        self.fail(f"unknown type {t.text!r}", t)

    def parse_value(self, ty: str):
        t = self.tok
        if t.kind == "reg":
            self.advance()
            return Reg(t.text)
        if t.kind == "sym":
            self.advance()
            return Sym(t.text)
        if t.kind == "word":
            try:
                value = parse_int(t.text)
            except ValueError:
                self.fail(f"expected value, found {t.text!r}", t)
            bits = WIDTH[ty]
            if not -(1 << (bits - 1)) <= value < (1 << bits):
                self.fail(f"literal {t.text} does not fit in {ty}", t)
            self.advance()
            return Imm(value & ((1 << bits) - 1))
        self.fail(f"expected value, found {t.text or 'end of input'!r}")

    def parse_align(self, default: int) -> int:
        if self.at_punct(",") and self.peek().kind == "word" and self.peek().text == "align":
            self.advance()
            self.advance()
            return self.expect_int()
        return default

    # -- top level

    def parse_program(self) -> Program:
        globals_, functions = [], []
        meta = {}
        entry = "main"
        while self.tok.kind != "eof":
            t = self.tok
            if self.at_word("global"):
                globals_.append(self.parse_global())
            elif self.at_word("fn"):
                functions.append(self.parse_function())
            elif self.at_word("meta"):
                self.advance()
                key = self.expect_word().text
                self.expect_punct("=")
                meta[key] = self.expect_word().text
            elif self.at_word("entry"):
                self.advance()
                entry = self.expect_word().text
            else:
                self.fail(f"expected 'global', 'fn', 'meta' or 'entry', found {t.text!r}")
        return Program(tuple(globals_), tuple(functions), entry, tuple(sorted(meta.items())))

    def parse_global(self) -> GlobalDef:
        start = self.advance()
        if self.tok.kind != "sym":
            self.fail("expected global name")
        name = self.advance().text
        self.expect_punct(":")
        size = self.expect_int()
        self.expect_punct("=")
        hex_tok = self.expect_word()
        try:
            init = bytes.fromhex(hex_tok.text)
        except ValueError:
            self.fail(f"bad initializer bytes {hex_tok.text!r}", hex_tok)
        secret = False
        if self.at_word("secret"):
            self.advance()
            secret = True
        return GlobalDef(name, size, init, secret, start.loc)

    def parse_function(self) -> FunctionDef:
        start = self.advance()
        name = self.expect_word().text
        self.expect_punct("(")
        params = []
        while not self.at_punct(")"):
            if params:
                self.expect_punct(",")
            if self.tok.kind != "reg":
                self.fail("expected parameter register")
            pname = self.advance().text
            self.expect_punct(":")
            params.append(Param(pname, self.parse_type()))
        self.expect_punct(")")
        self.expect_punct("{")

        blocks = []
        label, label_loc, instrs = None, start.loc, []
        while not self.at_punct("}"):
            if self.tok.kind == "eof":
                self.fail(f"unterminated function {name!r}")
            if self.tok.kind == "word" and self.peek().kind == "punct" and self.peek().text == ":":
                if label is not None or instrs:
                    blocks.append(Block(label or "entry", tuple(instrs), label_loc))
                lt = self.advance()
                self.advance()
                label, label_loc, instrs = lt.text, lt.loc, []
                continue
            instrs.append(self.parse_instr())
        self.advance()
        if label is not None or instrs:
            blocks.append(Block(label or "entry", tuple(instrs), label_loc))
        return FunctionDef(name, tuple(params), tuple(blocks), start.loc)

    # -- instructions

    def parse_instr(self) -> Instr:
        t = self.tok
        loc = t.loc
        if t.kind == "reg":
            dest = self.advance().text
            self.expect_punct("=")
            op_tok = self.expect_word()
            return self.parse_assign(dest, op_tok.text, loc)
        if t.kind != "word":
            self.fail(f"expected instruction, found {t.text!r}")
        op = self.advance().text
        if op == "store":
            ty = self.parse_type()
            val = self.parse_value(ty)
            self.expect_punct(",")
            self.expect_word(PTR)
            addr = self.parse_value(PTR)
            align = self.parse_align(min(WIDTH[ty] // 8, 8))
            return Instr("store", ty, args=(val, addr), align=align, loc=loc)
        if op == "call":
            return self.parse_call(None, loc)
        if op == "br":
            return Instr("br", VOID, targets=(self.expect_word().text,), loc=loc)
        if op == "condbr":
            ty = self.parse_type()
            cond = self.parse_value(ty)
            self.expect_punct(",")
            yes = self.expect_word().text
            self.expect_punct(",")
            no = self.expect_word().text
            return Instr("condbr", ty, args=(cond,), targets=(yes, no), loc=loc)
        if op == "ret":
            ty = self.parse_type(allow_void=True)
            if ty == VOID:
                return Instr("ret", VOID, loc=loc)
            return Instr("ret", ty, args=(self.parse_value(ty),), loc=loc)
        self.fail(f"unknown instruction {op!r}", t)

    def parse_assign(self, dest: str, op: str, loc: Loc) -> Instr:
        if op in ("alloca", "secret_alloca"):
            ty = self.parse_type()
            if ty == PTR:
                self.fail("alloca element type must be an integer type")
            count = 1
            if self.at_punct(","):
                self.advance()
                count = self.expect_int()
            secret = False
            if self.at_word("secret"):
                self.advance()
                secret = True
            return Instr(op, ty, dest, count=count, secret=secret, align=8, loc=loc)
        if op == "load":
            ty = self.parse_type()
            self.expect_punct(",")
            self.expect_word(PTR)
            addr = self.parse_value(PTR)
            align = self.parse_align(min(WIDTH[ty] // 8, 8))
            return Instr("load", ty, dest, args=(addr,), align=align, loc=loc)
        if op == "gep":
            self.expect_word(PTR)
            base = self.parse_value(PTR)
            self.expect_punct(",")
            self.expect_word("i64")
            off = self.parse_value("i64")
            return Instr("gep", PTR, dest, args=(base, off), loc=loc)
        if op in BINARY_OPS:
            ty = self.parse_type()
            a = self.parse_value(ty)
            self.expect_punct(",")
            b = self.parse_value(ty)
            return Instr(op, ty, dest, args=(a, b), loc=loc)
        if op == "icmp":
            pred = self.expect_word().text
            if pred not in ICMP_PREDICATES:
                self.fail(f"unknown icmp predicate {pred!r}")
            ty = self.parse_type()
            a = self.parse_value(ty)
            self.expect_punct(",")
            b = self.parse_value(ty)
            return Instr("icmp", ty, dest, args=(a, b), pred=pred, loc=loc)
        if op == "select":
            ty = self.parse_type()
            cond = self.parse_value("i64")
            self.expect_punct(",")
            a = self.parse_value(ty)
            self.expect_punct(",")
            b = self.parse_value(ty)
            return Instr("select", ty, dest, args=(cond, a, b), loc=loc)
        if op == "call":
            return self.parse_call(dest, loc)
        if op == "const":
            ty = self.parse_type()
            v = self.parse_value(ty)
            if not isinstance(v, Imm):
                self.fail("const takes an integer literal")
            return Instr("const", ty, dest, args=(v,), loc=loc)
        self.fail(f"unknown opcode {op!r}")

    def parse_call(self, dest: str | None, loc: Loc) -> Instr:
        ty = self.parse_type(allow_void=True)
        if self.tok.kind != "sym":
            self.fail("expected callee '@name'")
        callee = self.advance().text
        self.expect_punct("(")
        args, arg_types = [], []
        while not self.at_punct(")"):
            if args:
                self.expect_punct(",")
            aty = self.parse_type()
            arg_types.append(aty)
            args.append(self.parse_value(aty))
        self.expect_punct(")")
        return Instr("call", ty, dest, args=tuple(args), arg_types=tuple(arg_types),
                     callee=callee, loc=loc)


def _resolve(prog: Program) -> list:
    """Name resolution: every register, label, callee and global must exist."""
    errors = []
    fnames = set()
    for f in prog.functions:
        if f.name in fnames:
            errors.append((f.loc, f"duplicate function {f.name!r}", True))
        fnames.add(f.name)
    gnames = set()
    for g in prog.globals:
        if g.name in gnames:
            errors.append((g.loc, f"duplicate global @{g.name}", True))
        gnames.add(g.name)

    for f in prog.functions:
        defined = {}
        for p in f.params:
            if p.name in defined:
                errors.append((f.loc, f"duplicate parameter %{p.name}", True))
            defined[p.name] = f.loc
        labels = set()
        for b in f.blocks:
            if b.label in labels:
                errors.append((b.loc, f"duplicate label {b.label!r}", True))
            labels.add(b.label)
            for ins in b.instrs:
                if ins.dest is not None:
                    if ins.dest in defined:
                        errors.append((ins.loc, f"register %{ins.dest} defined twice", True))
                    defined[ins.dest] = ins.loc
        for b in f.blocks:
            for ins in b.instrs:
                for a in ins.args:
                    if isinstance(a, Reg) and a.name not in defined:
                        errors.append((ins.loc, f"undefined register %{a.name}", False))
                    elif isinstance(a, Sym) and a.name not in gnames:
                        errors.append((ins.loc, f"undefined global @{a.name}", False))
                for target in ins.targets:
                    if target not in labels:
                        errors.append((ins.loc, f"undefined label {target!r}", False))
                if ins.op == "call" and ins.callee not in fnames and not intrinsics.is_intrinsic(ins.callee):
                    errors.append((ins.loc, f"undefined function @{ins.callee}", False))
    return errors


def parse_program(text: str) -> Program:
    """Parse IR source text into a :class:`Program`.

    Raises :class:`IRSyntaxError` (or its subclass
    :class:`DuplicateDefinition`) carrying line/column locations. Type and
    dominance checks are left to :func:`splitsec.ir.validate`.
    """
    prog = _Parser(text).parse_program()
    errors = _resolve(prog)
    if errors:
        loc, msg, dup = errors[0]
        cls = DuplicateDefinition if dup else IRSyntaxError
        raise cls(msg, loc, [(e[0], e[1]) for e in errors])
    return prog
