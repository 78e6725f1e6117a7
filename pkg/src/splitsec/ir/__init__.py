"""Small SSA-style IR: data model, parser, printer and validator."""

from .nodes import (
    ACCESS_SIZES, ALIGNMENTS, BINARY_OPS, OPCODES, PTR, SCALAR_TYPES, VOID, WIDTH,
    Block, FunctionDef, GlobalDef, Imm, Instr, Loc, Param, Program, Reg, Sym,
    byte_size, mask,
)
from .parser import DuplicateDefinition, IRSyntaxError, parse_program
from .printer import format_instr, print_program
from .validate import Diagnostic, dominators, result_type, validate

__all__ = [
    "ACCESS_SIZES", "ALIGNMENTS", "BINARY_OPS", "OPCODES", "PTR", "SCALAR_TYPES", "VOID", "WIDTH",
    "Block", "FunctionDef", "GlobalDef", "Imm", "Instr", "Loc", "Param", "Program", "Reg", "Sym",
    "byte_size", "mask", "DuplicateDefinition", "IRSyntaxError", "parse_program",
    "format_instr", "print_program", "Diagnostic", "dominators", "result_type", "validate",
]
