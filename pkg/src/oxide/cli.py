"""Command-line driver: ``oxide check|run|corpus|probe``.

Exit codes: 0 ok or value, 1 type error, 2 abort, 3 stuck, 4 I/O or usage.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import List, Optional, Tuple

from oxide.ast import pretty_env, pretty_expr, pretty_type
from oxide.conformance import (
    DEFAULT_MANIFEST, CorpusProgram, erasure_probe, load_manifest, preservation_probe,
    progress_probe, smallcheck_suite,
)
from oxide.interp import DEFAULT_FUEL, Aborted, Finished, Stuck, run
from oxide.parser import OxideError, parse_program
from oxide.typeck import check_program, solved_lines

EXIT_OK, EXIT_TYPE, EXIT_ABORT, EXIT_STUCK, EXIT_IO = 0, 1, 2, 3, 4

_SUBSCRIPTS = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")


class _Out:
    def __init__(self, stream):
        self.stream = stream
        mode = os.environ.get("OXIDE_COLOR", "auto")
        self.color = mode != "never" and mode == "auto" and hasattr(stream, "isatty") and stream.isatty()

    def paint(self, text: str, code: str) -> str:
        return f"\x1b[{code}m{text}\x1b[0m" if self.color else text

    def line(self, text: str = "") -> None:
        self.stream.write(text + "\n")


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def trace_lines(trace, solved) -> List[str]:
    out = [f"Γ{str(i).translate(_SUBSCRIPTS)} = {pretty_env(env)}    // {label}" for i, (label, env) in enumerate(trace)]
    return out + solved_lines(solved)


def cmd_check(path: str, trace_env: bool = False, out: Optional[_Out] = None) -> int:
    out = out or _Out(sys.stdout)
    try:
        src = _read(path)
    except OSError as err:
        out.line(f"error: cannot read {path}: {err.strerror}")
        return EXIT_IO
    try:
        globals, body = parse_program(src, path)
        outcome = check_program(globals, body)
    except OxideError as err:
        if trace_env:
            for line in trace_lines(getattr(err, "trace", []), getattr(err, "solved", {})):
                out.line(line)
        out.line(out.paint(err.diagnostic.render(), "31"))
        return EXIT_TYPE
    if trace_env:
        for line in trace_lines(outcome.trace, outcome.solved):
            out.line(line)
    out.line(out.paint("ok: ", "32") + pretty_type(outcome.ty))
    return EXIT_OK


def report_result(r, out: _Out) -> int:
    if isinstance(r, Finished):
        out.line(f"value: {pretty_expr(r.value)}")
        return EXIT_OK
    if isinstance(r, Aborted):
        out.line(f"abort: {r.message}")
        return EXIT_ABORT
    if r.fuel_exhausted:
        out.line(f"stuck: fuel exhausted after {r.steps} steps")
    else:
        out.line(f"stuck: {r.reason}")
    return EXIT_STUCK


def cmd_run(path: str, unchecked: bool = False, force: bool = False, fuel: int = DEFAULT_FUEL,
            out: Optional[_Out] = None) -> int:
    out = out or _Out(sys.stdout)
    try:
        src = _read(path)
    except OSError as err:
        out.line(f"error: cannot read {path}: {err.strerror}")
        return EXIT_IO
    try:
        globals, body = parse_program(src, path)
    except OxideError as err:
        out.line(out.paint(err.diagnostic.render(), "31"))
        return EXIT_TYPE
    try:
        check_program(globals, body)
    except OxideError as err:
        if not force:
            out.line(out.paint(err.diagnostic.render(), "31"))
            return EXIT_TYPE
    return report_result(run(globals, body, not unchecked, fuel), out)


def judge(prog: CorpusProgram) -> Tuple[bool, str]:
    """Compare one corpus program with its annotated expectation."""
    exp = prog.expect
    try:
        globals, body = prog.parse()
        outcome = check_program(globals, body)
    except OxideError as err:
        line = err.span.start_line if err.span is not None else None
        if prog.force:
            if err.code == "E-PARSE":
                return False, f"cannot force a program that does not parse: {err.code}"
            checked = run(globals, body, True)
            unchecked = run(globals, body, False)
            ok = isinstance(checked, Stuck) and not checked.fuel_exhausted and not isinstance(unchecked, Stuck)
            return ok, f"forced: checked run stuck ({getattr(checked, 'reason', type(checked).__name__)}), " \
                       f"unchecked run {type(unchecked).__name__.lower()}"
        got = f"error[{err.code}] on line {line}"
        if exp.error == err.code and exp.error_line == line:
            return True, got
        want = f"error[{exp.error}] on line {exp.error_line}" if exp.error else "acceptance"
        return False, f"expected {want}, got {got}: {err.message}"
    if not exp.accepted:
        return False, f"expected error[{exp.error}] on line {exp.error_line}, got ok: {pretty_type(outcome.ty)}"
    if exp.value is None and exp.abort is None:
        return True, f"ok: {pretty_type(outcome.ty)}"
    r = run(globals, body, True)
    if exp.value is not None:
        got = f"value: {pretty_expr(r.value)}" if isinstance(r, Finished) else type(r).__name__.lower()
        return got == f"value: {exp.value}", got
    got = f"abort: {r.message}" if isinstance(r, Aborted) else type(r).__name__.lower()
    return got == f"abort: {exp.abort}", got


def cmd_corpus(manifest: str, out: Optional[_Out] = None) -> int:
    out = out or _Out(sys.stdout)
    try:
        progs = load_manifest(manifest)
    except (OSError, ValueError, KeyError) as err:
        out.line(f"error: cannot load manifest {manifest}: {err}")
        return EXIT_IO
    passed = 0
    for prog in progs:
        ok, detail = judge(prog)
        passed += ok
        tag = out.paint("PASS", "32") if ok else out.paint("FAIL", "31")
        out.line(f"{tag} {prog.id} ({prog.path.name}): {detail}")
    out.line(f"{passed}/{len(progs)} passed")
    return EXIT_OK if passed == len(progs) else EXIT_TYPE


PROBES = {"progress": progress_probe, "preservation": preservation_probe, "erasure": erasure_probe}


def cmd_probe(manifest: str, which: List[str], out: Optional[_Out] = None) -> int:
    out = out or _Out(sys.stdout)
    reports = []
    program_probes = [w for w in which if w in PROBES]
    if program_probes:
        try:
            progs = [p for p in load_manifest(manifest) if p.expect.accepted and not p.force]
        except (OSError, ValueError, KeyError) as err:
            out.line(f"error: cannot load manifest {manifest}: {err}")
            return EXIT_IO
        for prog in progs:
            globals, body = prog.parse()
            for name in program_probes:
                reports.append(PROBES[name](globals, body, prog.id))
    if "smallcheck" in which:
        reports += smallcheck_suite()
    for rep in reports:
        out.line(rep.to_json())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_TYPE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oxide", description="Type checker and interpreter for Oxide programs.")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("check", help="type-check a program")
    p.add_argument("file")
    p.add_argument("--trace-env", action="store_true", help="print the place environment at each boundary")
    p = sub.add_parser("run", help="type-check and evaluate a program")
    p.add_argument("file")
    p.add_argument("--unchecked", action="store_true", help="skip the dynamic safety checks")
    p.add_argument("--force", action="store_true", help="evaluate even if type checking fails")
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL, help="maximum number of steps")
    p = sub.add_parser("corpus", help="check every program of a manifest against its annotations")
    p.add_argument("manifest", nargs="?", default=str(DEFAULT_MANIFEST))
    p = sub.add_parser("probe", help="run metatheory probes, one JSON object per line")
    p.add_argument("manifest", nargs="?", default=str(DEFAULT_MANIFEST))
    for name in ("progress", "preservation", "erasure", "smallcheck"):
        p.add_argument(f"--{name}", action="store_true")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_IO
    if args.command == "check":
        return cmd_check(args.file, args.trace_env)
    if args.command == "run":
        if args.fuel < 0:
            sys.stderr.write("error: --fuel must be non-negative\n")
            return EXIT_IO
        return cmd_run(args.file, args.unchecked, args.force, args.fuel)
    if args.command == "corpus":
        return cmd_corpus(args.manifest)
    which = [n for n in ("progress", "preservation", "erasure", "smallcheck") if getattr(args, n)]
    return cmd_probe(args.manifest, which or ["progress", "preservation", "erasure", "smallcheck"])


if __name__ == "__main__":
    sys.exit(main())
