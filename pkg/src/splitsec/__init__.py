"""Split-and-prefix protection of secret memory against pointer-chasing prefetchers.

The package bundles a small typed IR, a rewriting pass that stores secrets
as prefixed 32-bit segments split across two regions, an interpreter with
per-byte taint, and an oracle that decides which in-memory words an
address-based data memory-dependent prefetcher would try to dereference.
"""

from .ir import Program, parse_program, print_program, validate
from .runtime import DEFAULT_PREFIX, extract, merge
from .transform import MODES, Policy, transform_program
from .vm import ExecTrace, run

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PREFIX", "ExecTrace", "MODES", "Policy", "Program", "extract", "merge",
    "parse_program", "print_program", "run", "transform_program", "validate",
]
