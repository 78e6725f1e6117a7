from __future__ import annotations

import random
from pathlib import Path

import pytest

from splitsec import corpus
from splitsec.differential import diff_run, transformed_variants
from splitsec.ir import FunctionDef, Instr, Program, Block, Imm, parse_program, print_program
from splitsec.transform import (
    AlreadyTransformed, Policy, TransformError, UnknownIntrinsic, UnsupportedInstruction,
    intercept_intrinsics, plain_pointers, transform_program, transform_sites,
)
from splitsec.vm import GLOBAL_CTOR

GOLDEN = Path(__file__).parent / "golden"


def ops(prog):
    for fn in prog.functions:
        for b in fn.blocks:
            for ins in b.instrs:
                yield fn.name, ins


def callees(prog):
    return [ins.callee for _, ins in ops(prog) if ins.op == "call"]


def test_ctswap_golden():
    out = transform_program(corpus.load("ctswap"), Policy("annotated"))
    assert print_program(out) == (GOLDEN / "ctswap.annotated.ir").read_text()


def test_none_is_identity():
    prog = corpus.load("hmac")
    assert transform_program(prog, Policy("none")) is prog


def test_already_transformed_rejected():
    out = transform_program(corpus.load("ctswap"), Policy("annotated"))
    with pytest.raises(AlreadyTransformed):
        transform_program(out, Policy("annotated"))
    reparsed = parse_program(print_program(out))
    with pytest.raises(AlreadyTransformed):
        transform_program(reparsed, Policy("all_secret"))


def test_metadata_records_policy():
    out = transform_program(corpus.load("ctswap"), Policy("all_secret", prefix=0xCAFEBABE))
    assert out.metadata == {"ss_policy": "all_secret", "ss_prefix": "0xcafebabe", "ss_globals": "0"}


@pytest.mark.parametrize("kw", [dict(mode="bogus"), dict(prefix=0), dict(prefix=0xFFFF),
                                dict(mode="none", globals_secret=True)])
def test_policy_invariants(kw):
    with pytest.raises(ValueError):
        Policy(**kw)


@pytest.mark.parametrize("name", corpus.KERNELS)
def test_all_secret_leaves_no_raw_access(name):
    out = transform_program(corpus.load(name), Policy("all_secret"))
    assert not [ins for _, ins in ops(out) if ins.op in ("load", "store", "alloca")]
    assert "malloc" not in callees(out) and "memcpy" not in callees(out)


def test_annotated_keeps_public_accesses_plain():
    prog = corpus.load("arx")
    out = transform_program(prog, Policy("annotated"))
    raw = [(f, ins.op) for f, ins in ops(out) if ins.op in ("load", "store")]
    # only the loop counter in main stays plain: its init store, load and update
    assert raw == [("main", "store"), ("main", "load"), ("main", "store"), ("main", "load")]
    assert "ss_load32" in callees(out) and "ss_store32" in callees(out)


def test_plain_pointer_analysis():
    prog = parse_program("""fn main(%x: i64) {
  %a = alloca i64, 2
  %b = gep ptr %a, i64 8
  %s = alloca i64 secret
  %h = call ptr @malloc(i64 8)
  %h2 = gep ptr %h, i64 0
  %t = call ptr @secret_malloc(i64 8)
  store i64 %x, ptr %s
  ret i64 0
}""")
    fn = prog.function("main")
    assert plain_pointers(fn, Policy("annotated")) == {"a", "b", "h", "h2"}
    assert plain_pointers(fn, Policy("all_secret")) == set()


def test_transform_sites_match_rewrites():
    prog = corpus.load("hmac")
    pol = Policy("annotated")
    sites = transform_sites(prog, pol)
    out = transform_program(prog, pol)
    n_rt = sum(1 for c in callees(out) if c and c.startswith(("ss_load", "ss_store")))
    assert n_rt == len(sites)


def test_write_out_is_declassified():
    out = transform_program(corpus.load("memops"), Policy("annotated"))
    cs = callees(out)
    assert cs.count("ss_declassify") == cs.count("write_out") == 3
    for i, c in enumerate(cs):
        if c == "write_out":
            assert cs[i - 1] == "ss_declassify"


def test_intercept_intrinsics_only():
    out = intercept_intrinsics(corpus.load("memops"))
    cs = callees(out)
    assert {"ss_memcpy", "ss_memset", "ss_memcmp"} <= set(cs)
    assert "secret_malloc" in cs
    assert not {"memcpy", "memset", "memcmp"} & set(cs)


def test_frames_inserted_for_secret_allocas():
    out = transform_program(corpus.load("block256"), Policy("annotated"))
    main = out.function("main")
    assert main.blocks[0].instrs[0].callee == "ss_frame_push"
    rets = [(b, i) for b in main.blocks for i, ins in enumerate(b.instrs) if ins.op == "ret"]
    for b, i in rets:
        assert b.instrs[i - 1].callee == "ss_frame_pop"


def test_global_ctor():
    out = transform_program(corpus.load("globals"), Policy("annotated", globals_secret=True))
    assert out.functions[0].name == GLOBAL_CTOR
    assert all(g.secret for g in out.globals)
    ctor_calls = [ins.callee for ins in out.functions[0].blocks[0].instrs if ins.op == "call"]
    assert ctor_calls.count("ss_bind_global") == 2
    # 32-byte table in four i64 chunks, 8-byte counter in one
    assert ctor_calls.count("ss_store64") == 5


def test_no_ctor_without_globals():
    out = transform_program(corpus.load("ctswap"), Policy("annotated", globals_secret=True))
    assert not out.has_function(GLOBAL_CTOR)


def test_input_with_runtime_calls_rejected():
    prog = parse_program("fn main() { %p = call ptr @ss_secret_malloc(i64 8)\n ret i64 0 }")
    with pytest.raises(UnsupportedInstruction):
        transform_program(prog, Policy("annotated"))


def test_unknown_callee_rejected():
    fn = FunctionDef("main", (), (Block("entry", (
        Instr("call", "void", args=(), callee="mystery"), Instr("ret", "i64", args=(Imm(0),)))),))
    with pytest.raises(TransformError):
        transform_program(Program((), (fn,)), Policy("annotated"))
    with pytest.raises(UnknownIntrinsic):
        intercept_intrinsics(Program((), (fn,)))


def test_reserved_ctor_name():
    prog = parse_program(f"fn {GLOBAL_CTOR}() {{ ret void }}\nfn main() {{ ret i64 0 }}")
    with pytest.raises(UnsupportedInstruction):
        transform_program(prog, Policy("annotated"))


@pytest.mark.parametrize("name", corpus.KERNELS)
def test_differential_with_secret_globals(name):
    prog = corpus.load(name)
    variants = transformed_variants(prog, globals_secret=True)
    rng = random.Random(name)
    for _ in range(5):
        r = diff_run(variants, corpus.random_args(prog, rng))
        assert r.agree, r.to_json()
        assert all(o.fault is None for o in r.outcomes)


def test_differential_detects_mismatch():
    a = parse_program("fn main(%x: i64) { ret i64 %x }")
    b = parse_program("fn main(%x: i64) { %y = add i64 %x, 1\n ret i64 %y }")
    assert not diff_run({"a": a, "b": b}, [1]).agree
