from __future__ import annotations

from .nodes import BINARY_OPS, Instr, Program, VOID

HEADER = "; splitsec IR"


def format_instr(ins: Instr) -> str:
    op = ins.op
    lhs = f"%{ins.dest} = " if ins.dest is not None else ""
    a = ins.args
    if op in ("alloca", "secret_alloca"):
        text = f"{op} {ins.ty}"
        if ins.count != 1:
            text += f", {ins.count}"
        if ins.secret:
            text += " secret"
    elif op == "load":
        text = f"load {ins.ty}, ptr {a[0]}, align {ins.align}"
    elif op == "store":
        text = f"store {ins.ty} {a[0]}, ptr {a[1]}, align {ins.align}"
    elif op == "gep":
        text = f"gep ptr {a[0]}, i64 {a[1]}"
    elif op in BINARY_OPS:
        text = f"{op} {ins.ty} {a[0]}, {a[1]}"
    elif op == "icmp":
        text = f"icmp {ins.pred} {ins.ty} {a[0]}, {a[1]}"
    elif op == "select":
        text = f"select {ins.ty} {a[0]}, {a[1]}, {a[2]}"
    elif op == "call":
        params = ", ".join(f"{t} {v}" for t, v in zip(ins.arg_types, a))
        text = f"call {ins.ty} @{ins.callee}({params})"
    elif op == "const":
        text = f"const {ins.ty} {a[0]}"
    elif op == "br":
        text = f"br {ins.targets[0]}"
    elif op == "condbr":
        text = f"condbr {ins.ty} {a[0]}, {ins.targets[0]}, {ins.targets[1]}"
    elif op == "ret":
        text = "ret void" if ins.ty == VOID else f"ret {ins.ty} {a[0]}"
    else:
        raise ValueError(f"cannot print opcode {op!r}")
    return lhs + text


def print_program(prog: Program) -> str:
    """Canonical text for ``prog``; parsing it back gives an equal Program."""
    lines = [HEADER]
    for key, value in prog.meta:
        lines.append(f"meta {key} = {value}")
    if prog.entry != "main":
        lines.append(f"entry {prog.entry}")
    if prog.globals:
        lines.append("")
    for g in prog.globals:
        suffix = " secret" if g.secret else ""
        lines.append(f"global @{g.name} : {g.size} = {g.init.hex()}{suffix}")
    for f in prog.functions:
        lines.append("")
        params = ", ".join(f"%{p.name}: {p.ty}" for p in f.params)
        lines.append(f"fn {f.name}({params}) {{")
        for b in f.blocks:
            lines.append(f"{b.label}:")
            lines.extend(f"  {format_instr(ins)}" for ins in b.instrs)
        lines.append("}")
    return "\n".join(lines) + "\n"
