"""Kernels shipped with the package, as IR source files."""

from __future__ import annotations

import random
from importlib import resources

from ..ir import WIDTH, Program, parse_program

# Semantic-preservation and security suite.
KERNELS = ("ctswap", "memops", "block256", "arx", "hmac", "bytes", "globals")
# Oracle sensitivity fixture: expected to leak when left untransformed.
POSITIVE_CONTROL = "planted"


def names() -> list[str]:
    return sorted(p.name[:-3] for p in resources.files(__name__).iterdir() if p.name.endswith(".ir"))


def source(name: str) -> str:
    return resources.files(__name__).joinpath(f"{name}.ir").read_text()


def load(name: str) -> Program:
    return parse_program(source(name))


def random_args(prog: Program, rng: random.Random) -> list[int]:
    entry = prog.function(prog.entry)
    return [rng.getrandbits(WIDTH[p.ty]) for p in entry.params]
