from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from splitsec import corpus
from splitsec.cli import main
from splitsec.ir import parse_program, print_program

CORPUS = Path(corpus.__file__).parent
GOLDEN = Path(__file__).parent / "golden"


def k(name):
    return str(CORPUS / f"{name}.ir")


def test_transform_golden(tmp_path):
    out = tmp_path / "ctswap.ss.ir"
    assert main(["transform", k("ctswap"), "--policy", "annotated", "-o", str(out)]) == 0
    assert out.read_text() == (GOLDEN / "ctswap.annotated.ir").read_text()


def test_transform_none_prints_canonical(capsys):
    assert main(["transform", k("hmac"), "--policy", "none"]) == 0
    assert capsys.readouterr().out == print_program(corpus.load("hmac"))


def test_transform_bad_prefix(capsys):
    assert main(["transform", k("ctswap"), "--prefix", "0x00000000"]) == 1
    assert "prefix" in capsys.readouterr().err


def test_prefix_from_env(monkeypatch, capsys):
    monkeypatch.setenv("SS_PREFIX", "cafebabe")
    assert main(["transform", k("ctswap")]) == 0
    assert "meta ss_prefix = 0xcafebabe" in capsys.readouterr().out
    monkeypatch.setenv("SS_PREFIX", "zz")
    assert main(["transform", k("ctswap")]) == 1


def test_transform_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.ir"
    bad.write_text("fn main() { ret i64 %x }")
    assert main(["transform", str(bad)]) == 1
    assert "%x" in capsys.readouterr().err


def test_run_transformed_ctswap(tmp_path, capsys):
    src = tmp_path / "ss.ir"
    main(["transform", k("ctswap"), "--policy", "all_secret", "-o", str(src)])
    trace = tmp_path / "t.json"
    assert main(["run", str(src), "--args", "1,7,9", "--trace", str(trace)]) == 0
    out = capsys.readouterr().out
    assert "out 09000000000000000700000000000000" in out
    doc = json.loads(trace.read_text())
    assert doc["exit"] == 0 and doc["faults"] == []


def test_run_wrong_arity(capsys):
    assert main(["run", k("ctswap"), "--args", "1 2"]) == 1


def test_run_step_limit_exit_code():
    assert main(["run", k("arx"), "--step-limit", "50"]) == 3


def test_run_fault_exit_code(tmp_path):
    src = tmp_path / "uaf.ir"
    src.write_text("fn main() { %p = call ptr @malloc(i64 8)\n call void @free(ptr %p)\n"
                   " %v = load i64, ptr %p\n ret i64 %v }")
    trace = tmp_path / "t.json"
    assert main(["run", str(src), "--trace", str(trace)]) == 2
    assert json.loads(trace.read_text())["faults"][0]["kind"] == "Unmapped"


def test_audit_planted(tmp_path):
    report = tmp_path / "r.json"
    code = main(["audit", k("planted"), "--mode", "both", "-o", str(report)])
    doc = json.loads(report.read_text())
    assert code == doc["tainted_findings"] >= 1
    assert {r["mode"] for r in doc["reports"]} == {"heuristic", "aggressive"}


@pytest.mark.parametrize("mode", ["heuristic", "aggressive"])
def test_audit_planted_single_mode(tmp_path, mode):
    assert main(["audit", k("planted"), "--mode", mode, "-o", str(tmp_path / "r.json")]) >= 1


@pytest.mark.parametrize("name", corpus.KERNELS)
def test_audit_transformed_corpus_clean(tmp_path, name):
    report = tmp_path / "r.json"
    assert main(["audit", k(name), "--policy", "annotated", "-o", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["tainted_findings"] == 0 and doc["store_audit"]["violation"] == 0


def test_audit_empty_program(tmp_path):
    src = tmp_path / "empty.ir"
    src.write_text("fn main() { ret i64 0 }")
    report = tmp_path / "r.json"
    assert main(["audit", str(src), "--mode", "both", "-o", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert all(r["findings"] == [] for r in doc["reports"])


def test_diff_agrees(capsys):
    assert main(["diff", k("memops"), "--inputs", "5"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["runs"] == 5 and doc["mismatches"] == 0


def test_diff_bad_policy():
    assert main(["diff", k("memops"), "--policies", "none,magic"]) == 1


def test_bench_outputs(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bench", "--out", str(out), "--repeat", "2"]) == 0
    assert {p.name for p in out.iterdir()} == {"bench.csv", "bench.json", "icount.png", "memory.png"}
    assert (out / "icount.png").read_bytes()[:4] == b"\x89PNG"
    assert "ctswap" in capsys.readouterr().out


def test_bench_skips_invalid(tmp_path):
    d = tmp_path / "c"
    d.mkdir()
    (d / "good.ir").write_text(corpus.source("ctswap"))
    (d / "broken.ir").write_text("fn main() { ret i64 %nope }")
    out = tmp_path / "o"
    assert main(["bench", str(d), "--out", str(out), "--no-plots"]) == 0
    doc = json.loads((out / "bench.json").read_text())
    assert {r["program"] for r in doc["rows"]} == {"good"}
    assert any("broken" in w for w in doc["warnings"])


def test_usage_error():
    assert main(["frobnicate"]) == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "splitsec", "run", k("ctswap"), "--args", "1 2 3"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "exit 0" in r.stdout
