"""Desk-scale metatheory: progress, preservation and erasure probes run over
concrete programs, plus exhaustive small-instance checks of the core
relations.  Also loads the annotated example corpus."""

from __future__ import annotations

import itertools
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from oxide.ast import (
    BOOL, SHRD, UNIQ, U32_T, BoolLit, Concrete, Deref, Expr, GlobalEnv, Loan, NumLit, Place, PlaceEnv,
    Proj, ProvVar, RefTy, Store, TupleExpr, TupleTy, overlaps, pretty_env, pretty_expr, pretty_type,
)
from oxide.interp import DEFAULT_FUEL, Aborted, Finished, Stuck, places_val, pretty_config, run, store_satisfies, valuify
from oxide.parser import OxideError, parse_program
from oxide.typeck import Checker, check_program, subtype, unify, unify_or_none

CORPUS_DIR = Path(__file__).with_name("corpus")
DEFAULT_MANIFEST = CORPUS_DIR / "manifest.toml"


@dataclass
class ProbeReport:
    program_id: str
    probe: str
    steps: int = 0
    outcome: str = "pass"
    failures: List[Tuple[int, str, str]] = field(default_factory=list)
    cases: int = 0

    def fail(self, step: int, prop: str, detail: str) -> None:
        self.failures.append((step, prop, detail))
        self.outcome = "fail"

    @property
    def passed(self) -> bool:
        return self.outcome == "pass"

    def to_json(self) -> str:
        return json.dumps({"id": self.program_id, "probe": self.probe, "outcome": self.outcome,
                           "steps": self.steps, "cases": self.cases,
                           "failures": [list(f) for f in self.failures]}, ensure_ascii=False)


# --------------------------------------------------------------------------
# probes


def progress_probe(globals: GlobalEnv, e: Expr, program_id: str = "<expr>", fuel: int = DEFAULT_FUEL) -> ProbeReport:
    """Run with dynamic checks on; any stuck state other than running out of
    fuel is a failure."""
    rep = ProbeReport(program_id, "progress")
    r = run(globals, e, True, fuel)
    rep.steps = r.steps
    if isinstance(r, Stuck) and not r.fuel_exhausted:
        rep.fail(r.steps, "progress", r.reason)
    return rep


def preservation_probe(globals: GlobalEnv, e: Expr, program_id: str = "<expr>", fuel: int = 10_000) -> ProbeReport:
    """Re-type every intermediate configuration under an environment rebuilt
    from its store and compare with the original type and output env."""
    rep = ProbeReport(program_id, "preservation")
    try:
        base = check_program(globals, e)
    except OxideError as err:
        rep.fail(0, "typed", err.diagnostic.render())
        return rep
    index = [0]

    def observe(store: Store, expr: Expr) -> None:
        i = index[0]
        index[0] += 1
        if i == 0 or rep.failures:
            return
        ck = Checker(globals, start_gen=store.next_gen + 1, lenient=True)
        try:
            env = ck.store_env(store)
        except OxideError as err:
            rep.fail(i, "store-typing", f"{err.code}: {err.message} in {pretty_config(store, expr)}")
            return
        if not store_satisfies(globals, env, store):
            rep.fail(i, "store-satisfies", f"{pretty_env(env)} vs {pretty_config(store, expr)}")
            return
        try:
            ty, out = ck.check(env, expr)
        except OxideError as err:
            rep.fail(i, "retype", f"{err.code}: {err.message} under {pretty_env(env)} for {pretty_expr(expr)}")
            return
        try:
            subtype(globals, ty, base.ty)
        except OxideError:
            rep.fail(i, "subtype", f"`{pretty_type(ty)}` is not a subtype of `{pretty_type(base.ty)}`")
            return
        if not related_env(globals, out, base.env_out):
            rep.fail(i, "related-env", f"{pretty_env(out)} vs {pretty_env(base.env_out)}")

    r = run(globals, e, True, fuel, observe=observe)
    rep.steps = r.steps
    if isinstance(r, Stuck) and not r.fuel_exhausted:
        rep.fail(r.steps, "progress", r.reason)
    return rep


def related_env(globals: GlobalEnv, specific: PlaceEnv, general: PlaceEnv) -> bool:
    """Domain inclusion plus per-place subtyping."""
    for x in general:
        t = specific.lookup(x.place)
        if t is None:
            return False
        try:
            subtype(globals, t, x.item)
        except OxideError:
            return False
    return True


def erasure_probe(globals: GlobalEnv, e: Expr, program_id: str = "<expr>", fuel: int = DEFAULT_FUEL) -> ProbeReport:
    """Checked and unchecked runs must visit identical configurations."""
    rep = ProbeReport(program_id, "erasure")
    seqs: Dict[bool, List[str]] = {True: [], False: []}
    results = {}
    for checks in (True, False):
        results[checks] = run(globals, e, checks, fuel, observe=lambda s, x, c=checks: seqs[c].append(pretty_config(s, x)))
    rep.steps = results[True].steps
    checked, unchecked = results[True], results[False]
    if isinstance(checked, Stuck) and not checked.fuel_exhausted:
        rep.fail(checked.steps, "dynamic-check", checked.reason)
    for i, (a, b) in enumerate(zip(seqs[True], seqs[False])):
        if a != b:
            rep.fail(i, "pointwise", f"{a} != {b}")
            break
    else:
        if len(seqs[True]) != len(seqs[False]):
            n = min(len(seqs[True]), len(seqs[False]))
            rep.fail(n, "length", f"{len(seqs[True])} vs {len(seqs[False])} configurations")
    if type(checked) is not type(unchecked) and not rep.failures:
        rep.fail(rep.steps, "outcome", f"{type(checked).__name__} vs {type(unchecked).__name__}")
    return rep


# --------------------------------------------------------------------------
# exhaustive small instances

BASE_TYPES = (U32_T, BOOL)
LOAN_ATOMS = (Loan(SHRD, Place("a")), Loan(UNIQ, Place("b")))


def small_types(depth: int = 3) -> List:
    provs = [Concrete(c) for n in range(len(LOAN_ATOMS) + 1) for c in itertools.combinations(LOAN_ATOMS, n)]
    provs.append(ProvVar("v"))
    levels = [list(BASE_TYPES)]
    for _ in range(depth - 1):
        prev = levels[-1]
        nxt = list(BASE_TYPES)
        nxt += [RefTy(r, q, t) for t in prev for r in provs for q in (SHRD, UNIQ)]
        nxt += [TupleTy((t,)) for t in prev]
        nxt += [TupleTy((a, b)) for a in prev for b in prev]
        levels.append(nxt)
    return levels[-1]


def small_values(depth: int = 4) -> List:
    leaves = [NumLit(5), BoolLit(True)]
    level = list(leaves)
    for _ in range(depth - 1):
        level = leaves + [TupleExpr((v,)) for v in level] + [TupleExpr((a, b)) for a in level for b in level]
    return level


def small_places(depth: int) -> List[Place]:
    elems = (Proj(0), Proj(1), Deref())
    out = []
    for root in ("a", "b"):
        for n in range(depth + 1):
            out += [Place(root, path) for path in itertools.product(elems, repeat=n)]
    return out


def _try(f, *args):
    try:
        return ("ok", f(*args))
    except OxideError as err:
        return ("err", err.code)


def smallcheck_suite() -> List[ProbeReport]:
    """Brute-force the algebraic laws of unify, subtype, places_val/valuify
    and overlaps over every small instance."""
    g = GlobalEnv()
    reports = []
    tys = small_types(3)
    rep = ProbeReport("smallcheck", "unify-commutative")
    for a, b in itertools.product(tys, repeat=2):
        rep.cases += 1
        if unify_or_none(a, b) != unify_or_none(b, a):
            rep.fail(rep.cases, "unify-commutative", f"{pretty_type(a)} / {pretty_type(b)}")
            break
    reports.append(rep)

    rep = ProbeReport("smallcheck", "unify-idempotent")
    for a in tys:
        rep.cases += 1
        if _try(unify, g, a, a) != ("ok", a):
            rep.fail(rep.cases, "unify-idempotent", pretty_type(a))
    reports.append(rep)

    rep = ProbeReport("smallcheck", "subtype-reflexive")
    for a in tys:
        rep.cases += 1
        if _try(subtype, g, a, a)[0] != "ok":
            rep.fail(rep.cases, "subtype-reflexive", pretty_type(a))
    reports.append(rep)

    rep = ProbeReport("smallcheck", "valuify-places-val")
    root = Place("x")
    for v in small_values(4):
        rep.cases += 1
        store = Store().extend(places_val(root, v), 0)
        if valuify(store, root) != v:
            rep.fail(rep.cases, "round-trip", pretty_expr(v))
    reports.append(rep)

    rep = ProbeReport("smallcheck", "overlaps-symmetric")
    places = small_places(3)
    for p, q in itertools.product(places, repeat=2):
        rep.cases += 1
        if overlaps(p, q) != overlaps(q, p):
            rep.fail(rep.cases, "overlaps-symmetric", f"{p} / {q}")
    reports.append(rep)

    rep = ProbeReport("smallcheck", "overlaps-reflexive")
    for p in small_places(6):
        rep.cases += 1
        if not overlaps(p, p):
            rep.fail(rep.cases, "overlaps-reflexive", str(p))
    reports.append(rep)
    return reports


# --------------------------------------------------------------------------
# the corpus

_ANNOT = re.compile(r"//~\s*(ERROR|VALUE|ABORT|STUCK)\b\s*(.*?)\s*$")


@dataclass
class Expectation:
    error: Optional[str] = None
    error_line: Optional[int] = None
    value: Optional[str] = None
    abort: Optional[str] = None
    stuck: bool = False

    @property
    def accepted(self) -> bool:
        return self.error is None


@dataclass
class CorpusProgram:
    id: str
    path: Path
    source: str
    expect: Expectation
    force: bool = False

    def parse(self):
        return parse_program(self.source, str(self.path.name))


def read_expectation(source: str) -> Expectation:
    exp = Expectation()
    for lineno, line in enumerate(source.splitlines(), 1):
        m = _ANNOT.search(line)
        if not m:
            continue
        kind, arg = m.groups()
        if kind == "ERROR":
            exp.error, exp.error_line = arg.split()[0], lineno
        elif kind == "VALUE":
            exp.value = arg
        elif kind == "ABORT":
            exp.abort = arg
        else:
            exp.stuck = True
    return exp


def load_manifest(path=DEFAULT_MANIFEST) -> List[CorpusProgram]:
    path = Path(path)
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    out = []
    for entry in data.get("program", []):
        f = path.parent / entry["file"]
        src = f.read_text(encoding="utf-8")
        out.append(CorpusProgram(entry.get("id", f.stem), f, src, read_expectation(src), bool(entry.get("force", False))))
    return out


def accepted_programs(path=DEFAULT_MANIFEST) -> List[CorpusProgram]:
    return [p for p in load_manifest(path) if p.expect.accepted and not p.force]
