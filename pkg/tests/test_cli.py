import contextlib
import io
import json

import pytest

from oxide.cli import main
from oxide.conformance import DEFAULT_MANIFEST

CORPUS = DEFAULT_MANIFEST.parent


def cli(*argv):
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(list(argv))
    return code, buf.getvalue()


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_check_move_error():
    code, out = cli("check", str(CORPUS / "move_twice.ox"))
    assert code == 1
    assert out.startswith("error[E-MOVED]") and "move_twice.ox:5:" in out


def test_check_trace_env():
    code, out = cli("check", "--trace-env", str(CORPUS / "provenances.ox"))
    assert code == 0
    assert "'x = {uniq pt.0}" in out.splitlines()
    assert out.splitlines()[0].startswith("Γ₀ = ∅")
    assert out.splitlines()[-1] == "ok: u32"


def test_check_unit(tmp_path):
    assert cli("check", write(tmp_path, "u.ox", "()")) == (0, "ok: unit\n")


def test_run_outcomes(tmp_path):
    assert cli("run", write(tmp_path, "v.ox", "let x: u32 = 5; x")) == (0, "value: 5\n")
    assert cli("run", write(tmp_path, "a.ox", 'abort("oops")')) == (2, "abort: oops\n")
    code, out = cli("run", "--fuel", "0", write(tmp_path, "f.ox", "let x: u32 = 5; x"))
    assert code == 3 and "fuel exhausted" in out


def test_run_force_stuck():
    path = str(CORPUS / "uniq_twice.ox")
    code, out = cli("run", path)
    assert code == 1 and "E-LOAN-CONFLICT" in out
    assert cli("run", "--force", path) == (3, "stuck: dynamic uniq-safety violation\n")
    assert cli("run", "--force", "--unchecked", path) == (0, "value: ()\n")


def test_io_errors(tmp_path):
    code, out = cli("check", str(tmp_path / "missing.ox"))
    assert code == 4 and "cannot read" in out
    assert cli("corpus", str(tmp_path / "missing.toml"))[0] == 4
    assert cli("bogus")[0] == 4


def test_corpus_full():
    code, out = cli("corpus")
    lines = out.splitlines()
    assert code == 0 and lines[-1] == f"{len(lines) - 1}/{len(lines) - 1} passed"
    assert all(l.startswith("PASS ") for l in lines[:-1])


def test_corpus_empty(tmp_path):
    assert cli("corpus", write(tmp_path, "m.toml", "")) == (0, "0/0 passed\n")


def test_corpus_wrong_expectation(tmp_path):
    write(tmp_path, "bad.ox", "let x: u32 = 1;\nx\n//~ VALUE 2\n")
    write(tmp_path, "good.ox", "()\n")
    manifest = write(tmp_path, "m.toml", '[[program]]\nfile = "bad.ox"\n\n[[program]]\nfile = "good.ox"\n')
    code, out = cli("corpus", manifest)
    assert code == 1
    assert "FAIL bad (bad.ox): value: 1" in out and "1/2 passed" in out


def test_probe_json(tmp_path):
    write(tmp_path, "one.ox", "let x: u32 = 1;\nx\n//~ VALUE 1\n")
    manifest = write(tmp_path, "m.toml", '[[program]]\nfile = "one.ox"\nid = "one"\n')
    code, out = cli("probe", manifest, "--progress", "--erasure")
    rows = [json.loads(l) for l in out.splitlines()]
    assert code == 0
    assert [(r["id"], r["probe"], r["outcome"]) for r in rows] == [("one", "progress", "pass"), ("one", "erasure", "pass")]


def test_output_is_deterministic():
    assert cli("corpus") == cli("corpus")
