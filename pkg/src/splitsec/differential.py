"""Differential execution of one program under several policies."""

from __future__ import annotations

from dataclasses import dataclass, field

from .ir import Program
from .transform import MODES, Policy, transform_program
from .vm import run


@dataclass(frozen=True)
class Outcome:
    policy: str
    out: bytes
    exit: int | None
    fault: str | None

    def key(self):
        return (self.out, self.exit, self.fault)


@dataclass
class DiffResult:
    args: list
    outcomes: list = field(default_factory=list)

    @property
    def agree(self) -> bool:
        return len({o.key() for o in self.outcomes}) <= 1

    def to_json(self) -> dict:
        return {
            "args": [hex(a) for a in self.args],
            "agree": self.agree,
            "outcomes": [{"policy": o.policy, "out_hex": o.out.hex(), "exit": o.exit, "fault": o.fault}
                         for o in self.outcomes],
        }


def transformed_variants(prog: Program, policies=MODES, globals_secret: bool = False) -> dict[str, Program]:
    variants = {}
    for mode in policies:
        policy = Policy(mode, globals_secret=globals_secret and mode != "none")
        variants[mode] = transform_program(prog, policy)
    return variants


def diff_run(variants: dict[str, Program], args: list[int], **run_kw) -> DiffResult:
    """Run each variant on ``args``; outcomes compare write_out bytes, exit value and fault kind."""
    run_kw.setdefault("audit_points", "none")
    run_kw.setdefault("record_stores", False)
    result = DiffResult(list(args))
    for name, prog in variants.items():
        t = run(prog, args, **run_kw)
        result.outcomes.append(Outcome(name, bytes(t.out), t.exit, t.fault.kind if t.fault else None))
    return result
