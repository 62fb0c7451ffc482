"""Syntax trees, environments and the place algebra shared by the checker
and the interpreter.

All nodes are frozen dataclasses.  Source spans are carried on expression
nodes but excluded from equality and hashing, so two trees parsed from
differently formatted text compare equal.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Tuple, Union


@dataclass(frozen=True)
class SourceSpan:
    file: str
    start_line: int
    start_col: int
    end_line: int
    end_col: int

    def __str__(self) -> str:
        return f"{self.file}:{self.start_line}:{self.start_col}"


def _span():
    return field(default=None, compare=False, repr=False, kw_only=True)


# --------------------------------------------------------------------------
# qualifiers, places, loans, provenances


@functools.total_ordering
class OwnQual(enum.Enum):
    SHRD = "shrd"
    UNIQ = "uniq"

    def __lt__(self, other: "OwnQual") -> bool:
        return self is OwnQual.SHRD and other is OwnQual.UNIQ

    def __str__(self) -> str:
        return self.value


SHRD = OwnQual.SHRD
UNIQ = OwnQual.UNIQ


class Kind(enum.Enum):
    TYPE = "TYPE"
    PROV = "PROV"


@dataclass(frozen=True)
class Proj:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("tuple projection index must be >= 0")


@dataclass(frozen=True)
class FieldProj:
    name: str


@dataclass(frozen=True)
class Deref:
    pass


DEREF = Deref()
PathElem = Union[Proj, FieldProj, Deref]


@dataclass(frozen=True)
class Place:
    root: str
    path: Tuple[PathElem, ...] = ()

    def proj(self, index: int) -> "Place":
        return Place(self.root, self.path + (Proj(index),))

    def field(self, name: str) -> "Place":
        return Place(self.root, self.path + (FieldProj(name),))

    def deref(self) -> "Place":
        return Place(self.root, self.path + (DEREF,))

    def extend(self, path: Iterable[PathElem]) -> "Place":
        return Place(self.root, self.path + tuple(path))

    def has_deref(self) -> bool:
        return any(isinstance(p, Deref) for p in self.path)

    def __str__(self) -> str:
        return pretty_place(self)


def prefix_of(p1: Place, p2: Place) -> bool:
    """True iff ``p1`` names ``p2`` or an enclosing region of it."""
    n = len(p1.path)
    return p1.root == p2.root and n <= len(p2.path) and p2.path[:n] == p1.path


def overlaps(p1: Place, p2: Place) -> bool:
    return prefix_of(p1, p2) or prefix_of(p2, p1)


@dataclass(frozen=True)
class Loan:
    qual: OwnQual
    place: Place

    def __str__(self) -> str:
        return f"{self.qual} {pretty_place(self.place)}"


def _loan_key(loan: Loan):
    return (pretty_place(loan.place), loan.qual.value)


@dataclass(frozen=True)
class ProvVar:
    name: str


@dataclass(frozen=True)
class Concrete:
    loans: frozenset = frozenset()

    def __init__(self, loans: Iterable[Loan] = ()):
        object.__setattr__(self, "loans", frozenset(loans))

    def sorted(self) -> list:
        return sorted(self.loans, key=_loan_key)

    def union(self, other: "Concrete") -> "Concrete":
        return Concrete(self.loans | other.loans)


Provenance = Union[ProvVar, Concrete]


# --------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class Unit:
    pass


@dataclass(frozen=True)
class U32:
    pass


@dataclass(frozen=True)
class Bool:
    pass


@dataclass(frozen=True)
class Str:
    pass


UNIT, U32_T, BOOL, STR = Unit(), U32(), Bool(), Str()


@dataclass(frozen=True)
class TyVar:
    name: str


@dataclass(frozen=True)
class TupleTy:
    elems: Tuple["Type", ...]


@dataclass(frozen=True)
class StructTy:
    name: str
    provs: Tuple[Provenance, ...] = ()
    tys: Tuple["Type", ...] = ()


@dataclass(frozen=True)
class RefTy:
    prov: Provenance
    qual: OwnQual
    ty: "Type"


@dataclass(frozen=True)
class ArrayTy:
    elem: "Type"
    length: int


@dataclass(frozen=True)
class SliceTy:
    elem: "Type"


@dataclass(frozen=True)
class FnTy:
    prov_params: Tuple[str, ...]
    ty_params: Tuple[str, ...]
    params: Tuple["Type", ...]
    ret: "Type"
    # captured places of a closure; empty for top-level functions
    captured: Tuple[Tuple[Place, "Type"], ...] = ()


Type = Union[Unit, U32, Bool, Str, TyVar, TupleTy, StructTy, RefTy, ArrayTy, SliceTy, FnTy]
BASE_TYPES = (Unit, U32, Bool, Str)


def ref_ty(loans, qual: OwnQual, ty: Type) -> RefTy:
    return RefTy(Concrete(loans), qual, ty)


# --------------------------------------------------------------------------
# expressions (source level)


@dataclass(frozen=True)
class UnitLit:
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class NumLit:
    value: int
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class BoolLit:
    value: bool
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class StrLit:
    value: str
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Use:
    place: Place
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Borrow:
    qual: OwnQual
    place: Place
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class BorrowIdx:
    qual: OwnQual
    place: Place
    index: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class BorrowSlice:
    qual: OwnQual
    place: Place
    lo: "Expr"
    hi: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Seq:
    first: "Expr"
    second: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    else_: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Assign:
    place: Place
    rhs: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Let:
    name: str
    annot: Type
    rhs: "Expr"
    body: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class App:
    fn: "Expr"
    provs: Tuple[Provenance, ...]
    tys: Tuple[Type, ...]
    args: Tuple["Expr", ...]
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Closure:
    prov_params: Tuple[str, ...]
    ty_params: Tuple[str, ...]
    params: Tuple[Tuple[str, Type], ...]
    body: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class TupleExpr:
    elems: Tuple["Expr", ...]
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class StructExpr:
    name: str
    provs: Tuple[Provenance, ...]
    tys: Tuple[Type, ...]
    args: Tuple["Expr", ...]
    # None for positional structs; otherwise the field name of each arg
    field_names: Optional[Tuple[str, ...]] = None
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ArrayExpr:
    elems: Tuple["Expr", ...]
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Abort:
    message: str
    span: Optional[SourceSpan] = _span()


# --------------------------------------------------------------------------
# runtime-only syntax


@dataclass(frozen=True)
class Pop:
    """Evaluate ``body``, then pop the most recent binding group of ``name``."""

    name: str
    body: "Expr"
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Hole:
    span: Optional[SourceSpan] = _span()


HOLE = Hole()


@dataclass(frozen=True)
class Loc:
    """A runtime location: a stack place of a specific binding generation,
    optionally followed by value-level steps into an array element."""

    place: Place
    gen: int
    steps: Tuple[Union[int, PathElem], ...] = ()


@dataclass(frozen=True)
class PtrVal:
    qual: OwnQual
    loc: Loc
    # (lo, hi) for slice pointers
    slice: Optional[Tuple[int, int]] = None
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ClosureVal:
    captured: Tuple[Tuple[Place, "Expr"], ...]
    prov_params: Tuple[str, ...]
    ty_params: Tuple[str, ...]
    params: Tuple[Tuple[str, Type], ...]
    body: "Expr"
    # set for top-level functions packaged as values
    fn_name: Optional[str] = None
    span: Optional[SourceSpan] = _span()


Expr = Union[
    UnitLit, NumLit, BoolLit, StrLit, Use, Borrow, BorrowIdx, BorrowSlice, Seq, If,
    Assign, Let, App, Closure, TupleExpr, StructExpr, ArrayExpr, Abort, Pop, Hole,
    PtrVal, ClosureVal,
]
RUNTIME_NODES = (Pop, Hole, PtrVal, ClosureVal)
LITERALS = (UnitLit, NumLit, BoolLit, StrLit)


def is_value(e: Expr) -> bool:
    if isinstance(e, LITERALS + (PtrVal, ClosureVal)):
        return True
    if isinstance(e, (TupleExpr, ArrayExpr, StructExpr)):
        return all(is_value(x) for x in (e.elems if not isinstance(e, StructExpr) else e.args))
    return False


# --------------------------------------------------------------------------
# global definitions


@dataclass(frozen=True)
class StructDef:
    name: str
    prov_params: Tuple[str, ...]
    ty_params: Tuple[str, ...]
    field_types: Tuple[Type, ...]
    # None for positional structs
    field_names: Optional[Tuple[str, ...]] = None
    span: Optional[SourceSpan] = _span()

    def path_elem(self, i: int) -> PathElem:
        if self.field_names is None:
            return Proj(i)
        return FieldProj(self.field_names[i])


@dataclass(frozen=True)
class FnDef:
    name: str
    prov_params: Tuple[str, ...]
    ty_params: Tuple[str, ...]
    params: Tuple[Tuple[str, Type], ...]
    ret: Type
    body: Expr
    span: Optional[SourceSpan] = _span()

    def fn_type(self) -> FnTy:
        return FnTy(self.prov_params, self.ty_params, tuple(t for _, t in self.params), self.ret)


@dataclass(frozen=True)
class GlobalEnv:
    fns: Tuple[Tuple[str, FnDef], ...] = ()
    structs: Tuple[Tuple[str, StructDef], ...] = ()

    def fn(self, name: str) -> Optional[FnDef]:
        for n, d in self.fns:
            if n == name:
                return d
        return None

    def struct(self, name: str) -> Optional[StructDef]:
        for n, d in self.structs:
            if n == name:
                return d
        return None


TyVarEnv = Tuple[Tuple[str, Kind], ...]


# --------------------------------------------------------------------------
# binding stacks: the static place environment and the runtime store share
# one representation, an ordered sequence of (place, item, generation).


@dataclass(frozen=True)
class Entry:
    place: Place
    item: object
    gen: int


@dataclass(frozen=True)
class _Stack:
    entries: Tuple[Entry, ...] = ()

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def current_gen(self, root: str) -> Optional[int]:
        gens = [e.gen for e in self.entries if e.place.root == root]
        return max(gens) if gens else None

    def find(self, place: Place, gen: Optional[int] = None) -> Optional[Entry]:
        if gen is None:
            gen = self.current_gen(place.root)
            if gen is None:
                return None
        for e in reversed(self.entries):
            if e.gen == gen and e.place == place:
                return e
        return None

    def lookup(self, place: Place):
        e = self.find(place)
        return None if e is None else e.item

    def places(self) -> list:
        return [e.place for e in self.entries]

    def roots(self) -> set:
        return {e.place.root for e in self.entries}

    def _with(self, entries):
        return dataclasses.replace(self, entries=tuple(entries))

    def extend(self, pairs: Iterable[Tuple[Place, object]], gen: int):
        return self._with(self.entries + tuple(Entry(p, t, gen) for p, t in pairs))

    def remove_group(self, root: str, gen: Optional[int] = None):
        """Drop the most recent group rooted at ``root`` (or the given generation)."""
        if gen is None:
            gen = self.current_gen(root)
        return self._with(e for e in self.entries if not (e.place.root == root and e.gen == gen))

    def remove_prefixed(self, place: Place, gen: int):
        return self._with(e for e in self.entries if not (e.gen == gen and prefix_of(place, e.place)))

    def replace_prefixed(self, place: Place, gen: int, pairs: Iterable[Tuple[Place, object]]):
        """Replace every entry under ``place`` with ``pairs``, keeping its position."""
        new = tuple(Entry(p, t, gen) for p, t in pairs)
        out, done = [], False
        for e in self.entries:
            if e.gen == gen and prefix_of(place, e.place):
                if not done:
                    out.extend(new)
                    done = True
                continue
            out.append(e)
        if not done:
            out.extend(new)
        return self._with(out)

    def set_item(self, place: Place, gen: int, item):
        return self._with(Entry(e.place, item, e.gen) if (e.place == place and e.gen == gen) else e
                          for e in self.entries)


@dataclass(frozen=True)
class PlaceEnv(_Stack):
    """Flow-sensitive typing state: places mapped to types.

    ``moved`` remembers places (with their generation) that were moved out,
    so a later use reports a move error rather than an unbound name.
    """

    moved: Tuple[Tuple[Place, int], ...] = ()

    def current_gen(self, root: str) -> Optional[int]:
        gens = [e.gen for e in self.entries if e.place.root == root]
        gens += [g for p, g in self.moved if p.root == root]
        return max(gens) if gens else None

    def remove_group(self, root, gen=None):
        if gen is None:
            gen = self.current_gen(root)
        entries = tuple(e for e in self.entries if not (e.place.root == root and e.gen == gen))
        moved = tuple(m for m in self.moved if not (m[0].root == root and m[1] == gen))
        return PlaceEnv(entries, moved)

    def with_moved(self, place: Place, gen: int) -> "PlaceEnv":
        return PlaceEnv(self.entries, self.moved + ((place, gen),))

    def moved_overlapping(self, place: Place) -> Optional[Place]:
        gen = self.current_gen(place.root)
        for p, g in self.moved:
            if g == gen and overlaps(p, place):
                return p
        return None

    def pairs(self) -> list:
        return [(e.place, e.item) for e in self.entries]


@dataclass(frozen=True)
class Store(_Stack):
    """Runtime stack mapping places to one-level shapes."""

    next_gen: int = 0

    def fresh(self) -> Tuple[int, "Store"]:
        return self.next_gen, Store(self.entries, self.next_gen + 1)


def env_of(pairs: Iterable[Tuple[Place, Type]], gen: int = 0) -> PlaceEnv:
    return PlaceEnv(tuple(Entry(p, t, gen) for p, t in pairs))


# --------------------------------------------------------------------------
# pretty printing


def pretty_place(p: Place) -> str:
    s = p.root
    last_deref = False
    for elem in p.path:
        if isinstance(elem, Deref):
            s = "*" + s
            last_deref = True
            continue
        if last_deref:
            s = f"({s})"
        s += f".{elem.index}" if isinstance(elem, Proj) else f".{elem.name}"
        last_deref = False
    return s


def pretty_prov(r: Provenance) -> str:
    if isinstance(r, ProvVar):
        return "'" + r.name
    return "{" + ", ".join(str(l) for l in r.sorted()) + "}"


def _generics(provs, tys) -> str:
    items = ["'" + p for p in provs] + list(tys)
    return "<" + ", ".join(items) + ">" if items else ""


def _targs(provs, tys) -> str:
    items = [pretty_prov(p) for p in provs] + [pretty_type(t) for t in tys]
    return ", ".join(items)


def pretty_type(t: Type) -> str:
    if isinstance(t, Unit):
        return "unit"
    if isinstance(t, U32):
        return "u32"
    if isinstance(t, Bool):
        return "bool"
    if isinstance(t, Str):
        return "String"
    if isinstance(t, TyVar):
        return t.name
    if isinstance(t, TupleTy):
        inner = ", ".join(pretty_type(x) for x in t.elems)
        return f"({inner},)" if len(t.elems) == 1 else f"({inner})"
    if isinstance(t, StructTy):
        args = _targs(t.provs, t.tys)
        return f"{t.name}<{args}>" if args else t.name
    if isinstance(t, RefTy):
        return f"&{pretty_prov(t.prov)} {t.qual} {pretty_type(t.ty)}"
    if isinstance(t, ArrayTy):
        return f"[{pretty_type(t.elem)}; {t.length}]"
    if isinstance(t, SliceTy):
        return f"[{pretty_type(t.elem)}]"
    if isinstance(t, FnTy):
        s = "fn" + _generics(t.prov_params, t.ty_params)
        s += "(" + ", ".join(pretty_type(x) for x in t.params) + ") -> " + pretty_type(t.ret)
        if t.captured:
            s += " captures {" + ", ".join(f"{pretty_place(p)}: {pretty_type(ty)}" for p, ty in t.captured) + "}"
        return s
    raise TypeError(f"not a type: {t!r}")


def pretty_env(env: _Stack) -> str:
    if not len(env):
        return "∅"
    render = pretty_type if isinstance(env, PlaceEnv) else pretty_expr
    return ", ".join(f"{pretty_place(e.place)}: {render(e.item)}" for e in env)


def _braced(e: Expr) -> str:
    return "{ " + pretty_expr(e) + " }"


def _sub(e: Expr) -> str:
    if isinstance(e, (Seq, Let)):
        return _braced(e)
    return pretty_expr(e)


def pretty_loc(loc: Loc) -> str:
    s = pretty_place(loc.place)
    for st in loc.steps:
        if isinstance(st, int):
            s += f"[{st}]"
        elif isinstance(st, Proj):
            s += f".{st.index}"
        elif isinstance(st, FieldProj):
            s += f".{st.name}"
    return s


def pretty_expr(e: Expr) -> str:
    if isinstance(e, UnitLit):
        return "()"
    if isinstance(e, NumLit):
        return str(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, StrLit):
        return json.dumps(e.value, ensure_ascii=False)
    if isinstance(e, Use):
        return pretty_place(e.place)
    if isinstance(e, Borrow):
        return f"&{e.qual} {pretty_place(e.place)}"
    if isinstance(e, BorrowIdx):
        return f"&{e.qual} {_idx_place(e.place)}[{pretty_expr(e.index)}]"
    if isinstance(e, BorrowSlice):
        return f"&{e.qual} {_idx_place(e.place)}[{pretty_expr(e.lo)}..{pretty_expr(e.hi)}]"
    if isinstance(e, Seq):
        first = _braced(e.first) if isinstance(e.first, (Seq, Let)) else pretty_expr(e.first)
        return f"{first}; {pretty_expr(e.second)}"
    if isinstance(e, If):
        return f"if {_sub(e.cond)} {_braced(e.then)} else {_braced(e.else_)}"
    if isinstance(e, Assign):
        return f"{pretty_place(e.place)} = {_sub(e.rhs)}"
    if isinstance(e, Let):
        return f"let {e.name}: {pretty_type(e.annot)} = {_sub(e.rhs)}; {pretty_expr(e.body)}"
    if isinstance(e, App):
        if isinstance(e.fn, Use) and not e.fn.place.path:
            f = e.fn.place.root
        else:
            f = "(" + pretty_expr(e.fn) + ")"
        targs = _targs(e.provs, e.tys)
        if targs:
            f += f"::<{targs}>"
        return f + "(" + ", ".join(_sub(a) for a in e.args) + ")"
    if isinstance(e, Closure):
        g = _generics(e.prov_params, e.ty_params)
        params = ", ".join(f"{n}: {pretty_type(t)}" for n, t in e.params)
        return (g + " " if g else "") + f"|{params}| {_braced(e.body)}"
    if isinstance(e, TupleExpr):
        inner = ", ".join(_sub(x) for x in e.elems)
        return f"({inner},)" if len(e.elems) == 1 else f"({inner})"
    if isinstance(e, StructExpr):
        targs = _targs(e.provs, e.tys)
        head = e.name + (f"::<{targs}>" if targs else "")
        if e.field_names is None:
            return head + "(" + ", ".join(_sub(a) for a in e.args) + ")"
        fields = ", ".join(f"{n}: {_sub(a)}" for n, a in zip(e.field_names, e.args))
        return head + " { " + fields + " }"
    if isinstance(e, ArrayExpr):
        return "[" + ", ".join(_sub(x) for x in e.elems) + "]"
    if isinstance(e, Abort):
        return f"abort({json.dumps(e.message, ensure_ascii=False)})"
    if isinstance(e, Pop):
        return f"pop {e.name} {_braced(e.body)}"
    if isinstance(e, Hole):
        return "□"
    if isinstance(e, PtrVal):
        target = pretty_loc(e.loc)
        if e.slice is not None:
            target += f"[{e.slice[0]}..{e.slice[1]}]"
        return f"ptr {e.qual} {target}"
    if isinstance(e, ClosureVal):
        if e.fn_name is not None:
            return f"fn {e.fn_name}"
        params = ", ".join(f"{n}: {pretty_type(t)}" for n, t in e.params)
        cap = ", ".join(f"{pretty_place(p)} ↦ {pretty_expr(s)}" for p, s in e.captured)
        return f"closure[{cap}] |{params}| {_braced(e.body)}"
    raise TypeError(f"not an expression: {e!r}")


def _idx_place(p: Place) -> str:
    s = pretty_place(p)
    return f"({s})" if p.path and isinstance(p.path[-1], Deref) else s


def pretty(x) -> str:
    """Render a place, type, environment or expression."""
    if isinstance(x, Place):
        return pretty_place(x)
    if isinstance(x, _Stack):
        return pretty_env(x)
    if isinstance(x, (ProvVar, Concrete)):
        return pretty_prov(x)
    if isinstance(x, Loan):
        return str(x)
    try:
        return pretty_type(x)
    except TypeError:
        return pretty_expr(x)


def pretty_program(globals: GlobalEnv, body: Expr) -> str:
    """Render declarations followed by the body, one declaration per line."""
    out = []
    for _, d in globals.structs:
        head = f"struct {d.name}{_generics(d.prov_params, d.ty_params)}"
        if d.field_names is None:
            out.append(f"{head}({', '.join(pretty_type(t) for t in d.field_types)});")
        else:
            fields = ", ".join(f"{n}: {pretty_type(t)}" for n, t in zip(d.field_names, d.field_types))
            out.append(f"{head} {{ {fields} }}")
    for _, f in globals.fns:
        params = ", ".join(f"{n}: {pretty_type(t)}" for n, t in f.params)
        out.append(f"fn {f.name}{_generics(f.prov_params, f.ty_params)}({params}) -> {pretty_type(f.ret)} "
                   f"{{ {pretty_expr(f.body)} }}")
    out.append(pretty_expr(body))
    return "\n".join(out)
