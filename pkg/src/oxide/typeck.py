"""Flow-sensitive substructural type checking.

The central judgment threads a place environment through every expression:
checking ``e`` under ``env`` yields its type together with the environment
that holds afterwards.  Moves remove places, borrows produce references whose
provenance is a concrete set of loans, and branches join by unifying types and
intersecting environments.

Non-lexical lifetimes are realised lazily: when a use conflicts with a live
loan, bindings that hold the conflicting loans and are never mentioned again
are dropped from the environment and the use is retried once.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from oxide.ast import (
    Abort, App, ArrayExpr, ArrayTy, Assign, BOOL, Bool, BoolLit, Borrow, BorrowIdx,
    BorrowSlice, Closure, ClosureVal, Concrete, Deref, Entry, Expr, FieldProj, FnTy,
    GlobalEnv, Hole, If, Kind, Let, Loan, NumLit, OwnQual, Place, PlaceEnv, Pop, Proj,
    ProvVar, PtrVal, RefTy, Seq, SHRD, SliceTy, Store, Str, STR, StrLit, StructDef,
    StructExpr, StructTy, TupleExpr, TupleTy, TyVar, TyVarEnv, Type, U32, U32_T, UNIQ,
    UNIT, Unit, UnitLit, Use, overlaps, prefix_of, pretty_expr, pretty_place, pretty_prov,
    pretty_type,
)
from oxide.parser import OxideError

Substitution = Dict[str, object]


@dataclass
class CheckOutcome:
    ty: Type
    env_out: PlaceEnv
    solved: Dict[str, Concrete] = field(default_factory=dict)
    trace: List[Tuple[str, PlaceEnv]] = field(default_factory=list)


# --------------------------------------------------------------------------
# small helpers over types


def struct_def(globals: GlobalEnv, name: str) -> StructDef:
    d = globals.struct(name)
    if d is None:
        raise OxideError("E-UNBOUND", f"unknown struct `{name}`")
    return d


def struct_fields(globals: GlobalEnv, ty: StructTy) -> List[Tuple[object, Type]]:
    """Field path elements and instantiated field types of a struct type."""
    d = struct_def(globals, ty.name)
    if len(ty.provs) != len(d.prov_params) or len(ty.tys) != len(d.ty_params):
        raise OxideError("E-ARITY", f"wrong number of arguments for struct `{ty.name}`")
    provs = dict(zip(d.prov_params, ty.provs))
    tys = dict(zip(d.ty_params, ty.tys))
    return [(d.path_elem(i), apply_subst(provs, t, tys)) for i, t in enumerate(d.field_types)]


def collect_loans(ty: Type) -> Iterator[Loan]:
    """Every loan in a concrete provenance inside ``ty``, closures included."""
    if isinstance(ty, RefTy):
        if isinstance(ty.prov, Concrete):
            yield from ty.prov.loans
        yield from collect_loans(ty.ty)
    elif isinstance(ty, TupleTy):
        for t in ty.elems:
            yield from collect_loans(t)
    elif isinstance(ty, StructTy):
        for r in ty.provs:
            if isinstance(r, Concrete):
                yield from r.loans
        for t in ty.tys:
            yield from collect_loans(t)
    elif isinstance(ty, (ArrayTy, SliceTy)):
        yield from collect_loans(ty.elem)
    elif isinstance(ty, FnTy):
        for _, t in ty.captured:
            yield from collect_loans(t)


def is_copyable(globals: GlobalEnv, ty: Type) -> bool:
    if isinstance(ty, (Unit, U32, Bool)):
        return True
    if isinstance(ty, (Str, TyVar, SliceTy, StructTy)):
        return False
    if isinstance(ty, TupleTy):
        return all(is_copyable(globals, t) for t in ty.elems)
    if isinstance(ty, ArrayTy):
        return is_copyable(globals, ty.elem)
    if isinstance(ty, RefTy):
        return ty.qual is SHRD
    if isinstance(ty, FnTy):
        return not ty.captured
    return False


def places_typ(globals: GlobalEnv, root: Place, ty: Type) -> List[Tuple[Place, Type]]:
    """The place ``root`` and every place reachable from it at type ``ty``."""
    out = [(root, ty)]
    if isinstance(ty, TupleTy):
        for i, t in enumerate(ty.elems):
            out += places_typ(globals, root.proj(i), t)
    elif isinstance(ty, StructTy):
        for elem, t in struct_fields(globals, ty):
            out += places_typ(globals, root.extend([elem]), t)
    elif isinstance(ty, RefTy):
        out += places_typ(globals, root.deref(), ty.ty)
    return out


# --------------------------------------------------------------------------
# substitution


def _subst_prov(s, r):
    if isinstance(r, ProvVar) and r.name in s:
        return s[r.name]
    return r


def apply_subst(s: Substitution, x, tys: Optional[Dict[str, Type]] = None):
    """Replace provenance variables (and optionally type variables) in a type
    or an expression."""
    tys = tys or {}
    if not s and not tys:
        return x
    return _subst(x, s, tys)


def _without(s, names):
    if not any(n in s for n in names):
        return s
    return {k: v for k, v in s.items() if k not in names}


def _subst(x, s, tys):
    if isinstance(x, RefTy):
        return RefTy(_subst_prov(s, x.prov), x.qual, _subst(x.ty, s, tys))
    if isinstance(x, TyVar):
        return tys.get(x.name, x)
    if isinstance(x, TupleTy):
        return TupleTy(tuple(_subst(t, s, tys) for t in x.elems))
    if isinstance(x, StructTy):
        return StructTy(x.name, tuple(_subst_prov(s, r) for r in x.provs), tuple(_subst(t, s, tys) for t in x.tys))
    if isinstance(x, ArrayTy):
        return ArrayTy(_subst(x.elem, s, tys), x.length)
    if isinstance(x, SliceTy):
        return SliceTy(_subst(x.elem, s, tys))
    if isinstance(x, FnTy):
        s2, t2 = _without(s, x.prov_params), _without(tys, x.ty_params)
        return FnTy(x.prov_params, x.ty_params, tuple(_subst(t, s2, t2) for t in x.params),
                    _subst(x.ret, s2, t2), tuple((p, _subst(t, s, tys)) for p, t in x.captured))
    if isinstance(x, (Unit, U32, Bool, Str)):
        return x
    # expressions
    if isinstance(x, Let):
        return Let(x.name, _subst(x.annot, s, tys), _subst(x.rhs, s, tys), _subst(x.body, s, tys), span=x.span)
    if isinstance(x, Seq):
        return Seq(_subst(x.first, s, tys), _subst(x.second, s, tys), span=x.span)
    if isinstance(x, If):
        return If(_subst(x.cond, s, tys), _subst(x.then, s, tys), _subst(x.else_, s, tys), span=x.span)
    if isinstance(x, Assign):
        return Assign(x.place, _subst(x.rhs, s, tys), span=x.span)
    if isinstance(x, BorrowIdx):
        return BorrowIdx(x.qual, x.place, _subst(x.index, s, tys), span=x.span)
    if isinstance(x, BorrowSlice):
        return BorrowSlice(x.qual, x.place, _subst(x.lo, s, tys), _subst(x.hi, s, tys), span=x.span)
    if isinstance(x, App):
        return App(_subst(x.fn, s, tys), tuple(_subst_prov(s, r) for r in x.provs),
                   tuple(_subst(t, s, tys) for t in x.tys), tuple(_subst(a, s, tys) for a in x.args), span=x.span)
    if isinstance(x, Closure):
        s2, t2 = _without(s, x.prov_params), _without(tys, x.ty_params)
        return Closure(x.prov_params, x.ty_params, tuple((n, _subst(t, s2, t2)) for n, t in x.params),
                       _subst(x.body, s2, t2), span=x.span)
    if isinstance(x, TupleExpr):
        return TupleExpr(tuple(_subst(a, s, tys) for a in x.elems), span=x.span)
    if isinstance(x, ArrayExpr):
        return ArrayExpr(tuple(_subst(a, s, tys) for a in x.elems), span=x.span)
    if isinstance(x, StructExpr):
        return StructExpr(x.name, tuple(_subst_prov(s, r) for r in x.provs), tuple(_subst(t, s, tys) for t in x.tys),
                          tuple(_subst(a, s, tys) for a in x.args), x.field_names, span=x.span)
    if isinstance(x, Pop):
        return Pop(x.name, _subst(x.body, s, tys), span=x.span)
    if isinstance(x, ClosureVal):
        s2, t2 = _without(s, x.prov_params), _without(tys, x.ty_params)
        return ClosureVal(x.captured, x.prov_params, x.ty_params,
                          tuple((n, _subst(t, s2, t2)) for n, t in x.params), _subst(x.body, s2, t2),
                          x.fn_name, span=x.span)
    return x


# --------------------------------------------------------------------------
# unification and subtyping


def _unify_prov(r1, r2):
    if isinstance(r1, Concrete) and isinstance(r2, Concrete):
        return r1.union(r2)
    return r1 if r1 == r2 else None


def unify_or_none(t1: Type, t2: Type) -> Optional[Type]:
    """The unifier of two types, or None when their shapes disagree."""
    if t1 == t2:
        return t1
    if type(t1) is not type(t2):
        return None
    if isinstance(t1, RefTy):
        prov = _unify_prov(t1.prov, t2.prov)
        inner = None if prov is None else unify_or_none(t1.ty, t2.ty)
        if inner is None:
            return None
        return RefTy(prov, t1.qual if t1.qual is t2.qual else SHRD, inner)
    if isinstance(t1, (TupleTy, StructTy)):
        if isinstance(t1, StructTy) and t1.name != t2.name:
            return None
        a, b = (t1.elems, t2.elems) if isinstance(t1, TupleTy) else (t1.tys, t2.tys)
        if len(a) != len(b):
            return None
        parts = [unify_or_none(x, y) for x, y in zip(a, b)]
        if any(p is None for p in parts):
            return None
        if isinstance(t1, TupleTy):
            return TupleTy(tuple(parts))
        if len(t1.provs) != len(t2.provs):
            return None
        provs = [_unify_prov(x, y) for x, y in zip(t1.provs, t2.provs)]
        if any(p is None for p in provs):
            return None
        return StructTy(t1.name, tuple(provs), tuple(parts))
    if isinstance(t1, ArrayTy):
        elem = unify_or_none(t1.elem, t2.elem) if t1.length == t2.length else None
        return None if elem is None else ArrayTy(elem, t1.length)
    if isinstance(t1, SliceTy):
        elem = unify_or_none(t1.elem, t2.elem)
        return None if elem is None else SliceTy(elem)
    if isinstance(t1, FnTy):
        if (t1.prov_params, t1.ty_params, t1.params, t1.ret) != (t2.prov_params, t2.ty_params, t2.params, t2.ret):
            return None
        merged = dict(t1.captured)
        for p, t in t2.captured:
            if p in merged:
                t = unify_or_none(merged[p], t)
                if t is None:
                    return None
            merged[p] = t
        return FnTy(t1.prov_params, t1.ty_params, t1.params, t1.ret, tuple(merged.items()))
    return None


def unify(globals: GlobalEnv, t1: Type, t2: Type) -> Type:
    """Combine two types that agree up to the loans in their provenances;
    references of differing qualifiers meet at shrd."""
    out = unify_or_none(t1, t2)
    if out is None:
        raise OxideError("E-UNIFY", f"cannot unify `{pretty_type(t1)}` with `{pretty_type(t2)}`")
    return out


def subtype(globals: GlobalEnv, actual: Type, annotated: Type, rigid: Iterable[str] = ()) -> Substitution:
    """Check ``actual`` against ``annotated``, solving the provenance variables
    of ``annotated`` that are not ``rigid`` from the concrete provenances of
    ``actual``."""
    s: Substitution = {}
    _subtype(globals, actual, annotated, s, frozenset(rigid), actual, annotated)
    return s


def _sub_fail(a, b):
    return OxideError("E-SUBTYPE", f"expected `{pretty_type(b)}`, found `{pretty_type(a)}`")


def _sub_prov(ra, rb, s, rigid, ta, tb):
    if isinstance(rb, ProvVar):
        if rb.name in rigid:
            if ra != rb:
                raise _sub_fail(ta, tb)
            return
        prev = s.get(rb.name)
        if prev is None:
            s[rb.name] = ra
        elif isinstance(prev, Concrete) and isinstance(ra, Concrete):
            s[rb.name] = prev.union(ra)
        elif prev != ra:
            raise _sub_fail(ta, tb)
        return
    if not (isinstance(ra, Concrete) and ra.loans <= rb.loans):
        raise _sub_fail(ta, tb)


def _subtype(globals, a, b, s, rigid, ta, tb):
    if a == b and not isinstance(b, (RefTy, StructTy, TupleTy, FnTy, ArrayTy, SliceTy)):
        return
    if type(a) is not type(b):
        raise _sub_fail(ta, tb)
    if isinstance(b, RefTy):
        if a.qual is not b.qual:
            raise _sub_fail(ta, tb)
        _sub_prov(a.prov, b.prov, s, rigid, ta, tb)
        _subtype(globals, a.ty, b.ty, s, rigid, ta, tb)
    elif isinstance(b, TupleTy):
        if len(a.elems) != len(b.elems):
            raise _sub_fail(ta, tb)
        for x, y in zip(a.elems, b.elems):
            _subtype(globals, x, y, s, rigid, ta, tb)
    elif isinstance(b, ArrayTy):
        if a.length != b.length:
            raise _sub_fail(ta, tb)
        _subtype(globals, a.elem, b.elem, s, rigid, ta, tb)
    elif isinstance(b, SliceTy):
        _subtype(globals, a.elem, b.elem, s, rigid, ta, tb)
    elif isinstance(b, StructTy):
        if a.name != b.name or len(a.provs) != len(b.provs) or len(a.tys) != len(b.tys):
            raise _sub_fail(ta, tb)
        for x, y in zip(a.provs, b.provs):
            _sub_prov(x, y, s, rigid, ta, tb)
        for x, y in zip(a.tys, b.tys):
            _subtype(globals, x, y, s, rigid, ta, tb)
    elif isinstance(b, FnTy):
        if (len(a.prov_params), len(a.ty_params), len(a.params)) != (len(b.prov_params), len(b.ty_params), len(b.params)):
            raise _sub_fail(ta, tb)
        ren = {p: ProvVar(q) for p, q in zip(a.prov_params, b.prov_params)}
        tren = {p: TyVar(q) for p, q in zip(a.ty_params, b.ty_params)}
        a_params = [apply_subst(ren, t, tren) for t in a.params]
        a_ret = apply_subst(ren, a.ret, tren)
        inner = rigid | set(b.prov_params)
        for x, y in zip(a_params, b.params):
            _subtype(globals, y, x, s, inner, ta, tb)
        _subtype(globals, a_ret, b.ret, s, inner, ta, tb)
    elif a != b:
        raise _sub_fail(ta, tb)


def match_type(pattern: Type, actual: Type, binds: Dict[str, Type]) -> None:
    """Bind type variables of ``pattern`` against ``actual`` (first binding wins)."""
    if isinstance(pattern, TyVar):
        binds.setdefault(pattern.name, actual)
        return
    if type(pattern) is not type(actual):
        return
    if isinstance(pattern, RefTy):
        match_type(pattern.ty, actual.ty, binds)
    elif isinstance(pattern, TupleTy):
        for p, a in zip(pattern.elems, actual.elems):
            match_type(p, a, binds)
    elif isinstance(pattern, (ArrayTy, SliceTy)):
        match_type(pattern.elem, actual.elem, binds)
    elif isinstance(pattern, StructTy):
        for p, a in zip(pattern.tys, actual.tys):
            match_type(p, a, binds)


def infer_struct_type(globals: GlobalEnv, d: StructDef, field_tys: List[Type], provs=(), tys=(),
                      rigid: Iterable[str] = ()) -> StructTy:
    """Instantiate ``d`` so that its fields accept ``field_tys``."""
    if provs and len(provs) != len(d.prov_params):
        raise OxideError("E-ARITY", f"struct `{d.name}` takes {len(d.prov_params)} provenance arguments")
    if tys and len(tys) != len(d.ty_params):
        raise OxideError("E-ARITY", f"struct `{d.name}` takes {len(d.ty_params)} type arguments")
    if len(field_tys) != len(d.field_types):
        raise OxideError("E-ARITY", f"struct `{d.name}` has {len(d.field_types)} fields, got {len(field_tys)}")
    fresh = {p: ProvVar(f"{p}%{d.name}") for p in d.prov_params}
    tsub = dict(zip(d.ty_params, tys))
    if not tys:
        for pat, act in zip(d.field_types, field_tys):
            match_type(pat, act, tsub)
        missing = [t for t in d.ty_params if t not in tsub]
        if missing:
            raise OxideError("E-ARITY", f"cannot infer type argument `{missing[0]}` of `{d.name}`")
    psub = dict(zip(d.prov_params, provs)) if provs else fresh
    s: Substitution = {}
    for pat, act in zip(d.field_types, field_tys):
        expected = apply_subst(psub, pat, tsub)
        _subtype(globals, act, expected, s, frozenset(rigid), act, expected)
    if provs:
        out_provs = tuple(provs)
    else:
        out_provs = tuple(s.get(fresh[p].name, Concrete()) for p in d.prov_params)
    return StructTy(d.name, out_provs, tuple(tsub[t] for t in d.ty_params))


# --------------------------------------------------------------------------
# environments


def env_intersect(globals: GlobalEnv, g1: PlaceEnv, g2: PlaceEnv) -> PlaceEnv:
    """Keep the places bound in both environments, unifying their types."""
    other = {(e.place, e.gen): e.item for e in g2}
    entries = tuple(Entry(e.place, unify(globals, e.item, other[(e.place, e.gen)]), e.gen)
                    for e in g1 if (e.place, e.gen) in other)
    moved = tuple(dict.fromkeys(g1.moved + g2.moved))
    return PlaceEnv(entries, moved)


def well_formed_type(globals: GlobalEnv, tyvars: TyVarEnv, env: PlaceEnv, ty: Type, sized: bool = True,
                     open_provs: bool = False) -> None:
    """Every variable is bound at its kind, every loan names a place of
    ``env`` and unsized types occur only behind references.  With
    ``open_provs`` unbound provenance variables are tolerated."""
    def prov(r, kinds):
        if isinstance(r, ProvVar):
            k = kinds.get(r.name)
            if k is Kind.TYPE:
                raise OxideError("E-KIND", f"`{r.name}` is a type variable, not a provenance")
            if k is None and not open_provs:
                raise OxideError("E-WF", f"unbound provenance variable `'{r.name}`")
        else:
            for loan in r.sorted():
                if env.lookup(loan.place) is None:
                    raise OxideError("E-WF", f"`{pretty_place(loan.place)}` does not live long enough")

    def go(t, sized, kinds):
        if isinstance(t, TyVar):
            k = kinds.get(t.name)
            if k is Kind.PROV:
                raise OxideError("E-KIND", f"`'{t.name}` is a provenance variable, not a type")
            if k is None:
                raise OxideError("E-UNBOUND", f"unknown type `{t.name}`")
        elif isinstance(t, RefTy):
            prov(t.prov, kinds)
            go(t.ty, False, kinds)
        elif isinstance(t, TupleTy):
            for x in t.elems:
                go(x, True, kinds)
        elif isinstance(t, ArrayTy):
            go(t.elem, True, kinds)
        elif isinstance(t, SliceTy):
            if sized:
                raise OxideError("E-WF", f"`{pretty_type(t)}` is unsized and may only appear behind a reference")
            go(t.elem, True, kinds)
        elif isinstance(t, StructTy):
            d = struct_def(globals, t.name)
            if len(t.provs) != len(d.prov_params) or len(t.tys) != len(d.ty_params):
                raise OxideError("E-ARITY", f"wrong number of arguments for struct `{t.name}`")
            for r in t.provs:
                prov(r, kinds)
            for x in t.tys:
                go(x, True, kinds)
        elif isinstance(t, FnTy):
            inner = {**kinds, **{p: Kind.PROV for p in t.prov_params}, **{p: Kind.TYPE for p in t.ty_params}}
            for x in t.params:
                go(x, True, inner)
            go(t.ret, True, inner)
            for _, x in t.captured:
                go(x, True, kinds)

    go(ty, sized, dict(tyvars))


def _aliases(env: PlaceEnv, place: Place, depth: int = 0) -> set:
    """``place`` plus the places it may stand for once dereferences are
    resolved through the concrete provenances of the references involved."""
    out = {place}
    if depth > 6:
        return out
    for i, elem in enumerate(place.path):
        if isinstance(elem, Deref):
            ty = env.lookup(Place(place.root, place.path[:i]))
            if isinstance(ty, RefTy) and isinstance(ty.prov, Concrete):
                rest = place.path[i + 1:]
                for loan in ty.prov.sorted():
                    out |= _aliases(env, loan.place.extend(rest), depth + 1)
    return out


def _access_holders(place: Place) -> List[Place]:
    return [Place(place.root, place.path[:i]) for i, e in enumerate(place.path) if isinstance(e, Deref)]


def loan_conflicts(env: PlaceEnv, qual: OwnQual, place: Place) -> List[Tuple[Place, Loan]]:
    """Live loans in ``env`` that forbid using ``place`` ``qual``-ly, with the
    place of the binding holding each."""
    holders = _access_holders(place)
    targets = _aliases(env, place)
    out = []
    for e in env:
        if any(prefix_of(e.place, h) for h in holders):
            continue
        for loan in sorted(set(collect_loans(e.item)), key=lambda l: (pretty_place(l.place), l.qual.value)):
            if qual is SHRD and loan.qual is SHRD:
                continue
            if any(overlaps(lp, t) for lp in _aliases(env, loan.place) for t in targets):
                out.append((e.place, loan))
    return out


def _lookup(env: PlaceEnv, place: Place) -> Type:
    moved = env.moved_overlapping(place)
    if moved is not None:
        if moved == place:
            raise OxideError("E-MOVED", f"use of moved value: `{pretty_place(place)}` was already moved")
        raise OxideError("E-MOVED", f"use of moved value: `{pretty_place(moved)}` was already moved")
    ty = env.lookup(place)
    if ty is None:
        raise OxideError("E-UNBOUND", f"unbound place `{pretty_place(place)}`")
    return ty


def _conflict_error(qual: OwnQual, place: Place, conflicts) -> OxideError:
    holder, loan = conflicts[0]
    how = "uniquely" if qual is UNIQ else "sharedly"
    return OxideError("E-LOAN-CONFLICT",
                      f"cannot use `{pretty_place(place)}` {how}: loan `{loan}` is still live in `{pretty_place(holder)}`")


def mu_safety(env: PlaceEnv, qual: OwnQual, place: Place) -> Type:
    """Type of ``place`` if it is safe to use ``qual``-ly in ``env``."""
    ty = _lookup(env, place)
    if qual is UNIQ:
        for h in _access_holders(place):
            hty = env.lookup(h)
            if isinstance(hty, RefTy) and hty.qual is SHRD:
                raise OxideError("E-LOAN-CONFLICT",
                                 f"cannot use `{pretty_place(place)}` uniquely: it is behind the shared reference `{pretty_place(h)}`")
    conflicts = loan_conflicts(env, qual, place)
    if conflicts:
        raise _conflict_error(qual, place, conflicts)
    return ty


def mutually_safe(env: PlaceEnv, types: List[Type]) -> None:
    loans = [sorted(set(collect_loans(t)), key=lambda l: (pretty_place(l.place), l.qual.value)) for t in types]
    for i, j in itertools.combinations(range(len(types)), 2):
        for a in loans[i]:
            for b in loans[j]:
                if a.qual is SHRD and b.qual is SHRD:
                    continue
                if any(overlaps(x, y) for x in _aliases(env, a.place) for y in _aliases(env, b.place)):
                    raise OxideError("E-LOAN-CONFLICT", f"loans `{a}` and `{b}` cannot be live at the same time")


def apply_weakening(env: PlaceEnv, holders: Iterable[Place], live: Iterable[str]) -> PlaceEnv:
    """Drop the bindings of ``holders`` whose root name is not in ``live``."""
    live = set(live)
    for root in dict.fromkeys(h.root for h in holders):
        if root not in live:
            env = env.remove_group(root)
    return env


@functools.lru_cache(maxsize=None)
def free_vars(e) -> frozenset:
    """Root identifiers an expression may mention, including loan places in
    its annotations."""
    if isinstance(e, Use):
        return frozenset([e.place.root])
    if isinstance(e, Borrow):
        return frozenset([e.place.root])
    if isinstance(e, BorrowIdx):
        return frozenset([e.place.root]) | free_vars(e.index)
    if isinstance(e, BorrowSlice):
        return frozenset([e.place.root]) | free_vars(e.lo) | free_vars(e.hi)
    if isinstance(e, Seq):
        return free_vars(e.first) | free_vars(e.second)
    if isinstance(e, If):
        return free_vars(e.cond) | free_vars(e.then) | free_vars(e.else_)
    if isinstance(e, Assign):
        return frozenset([e.place.root]) | free_vars(e.rhs)
    if isinstance(e, Let):
        return free_vars(e.rhs) | (free_vars(e.body) - {e.name}) | _type_roots(e.annot)
    if isinstance(e, App):
        out = free_vars(e.fn)
        for a in e.args:
            out |= free_vars(a)
        for r in e.provs:
            out |= _prov_roots(r)
        return out
    if isinstance(e, Closure):
        return free_vars(e.body) - {n for n, _ in e.params}
    if isinstance(e, (TupleExpr, ArrayExpr)):
        return frozenset().union(*(free_vars(a) for a in e.elems))
    if isinstance(e, StructExpr):
        return frozenset().union(*(free_vars(a) for a in e.args), *(_prov_roots(r) for r in e.provs))
    if isinstance(e, Pop):
        return free_vars(e.body)
    if isinstance(e, ClosureVal):
        return free_vars(e.body) - {n for n, _ in e.params} - {p.root for p, _ in e.captured}
    return frozenset()


def _prov_roots(r) -> frozenset:
    if isinstance(r, Concrete):
        return frozenset(l.place.root for l in r.loans)
    return frozenset()


def _type_roots(t) -> frozenset:
    return frozenset(l.place.root for l in collect_loans(t))


def _tail(e: Expr) -> Expr:
    while isinstance(e, (Let, Seq)):
        e = e.body if isinstance(e, Let) else e.second
    return e


# --------------------------------------------------------------------------
# the checker


class Checker:
    """One run of the typing judgment; holds the generation counter used to
    tell apart shadowed bindings, the solved provenance variables and an
    optional trace of environments at binding and branch boundaries."""

    def __init__(self, globals: GlobalEnv, tyvars: TyVarEnv = (), start_gen: int = 1, lenient: bool = False):
        self.globals = globals
        # residual programs may mention provenance variables of inlined calls
        self.lenient = lenient
        self.tyvars: TyVarEnv = tuple(tyvars)
        self._gens = itertools.count(start_gen)
        self.solved: Dict[str, object] = {}
        self.trace: List[Tuple[str, PlaceEnv]] = []

    def fresh_gen(self) -> int:
        return next(self._gens)

    def rigid(self) -> frozenset:
        return frozenset(n for n, k in self.tyvars if k is Kind.PROV)

    def wf(self, env: PlaceEnv, ty: Type, sized: bool = True) -> None:
        well_formed_type(self.globals, self.tyvars, env, ty, sized, self.lenient)

    def note(self, label: str, env: PlaceEnv) -> None:
        self.trace.append((label, env))

    # -- entry points

    def check(self, env: PlaceEnv, e: Expr, live: frozenset = frozenset()) -> Tuple[Type, PlaceEnv]:
        try:
            method = getattr(self, "_" + type(e).__name__)
        except AttributeError:
            raise OxideError("E-PARSE", f"cannot type `{pretty_expr(e)}`", getattr(e, "span", None))
        try:
            return method(env, e, live)
        except OxideError as err:
            if err.span is None:
                err.span = getattr(e, "span", None)
            raise

    def safe(self, env: PlaceEnv, qual: OwnQual, place: Place, live: frozenset) -> Tuple[Type, PlaceEnv]:
        """mu-safety with one round of weakening on conflict."""
        try:
            return mu_safety(env, qual, place), env
        except OxideError as err:
            if err.code != "E-LOAN-CONFLICT":
                raise
            conflicts = loan_conflicts(env, qual, place)
            if not conflicts:
                raise
            pruned = apply_weakening(env, [h for h, _ in conflicts], live)
            if pruned == env or loan_conflicts(pruned, qual, place):
                raise
            dropped = sorted({h.root for h, _ in conflicts})
            self.note("weaken " + ", ".join(dropped), pruned)
            return mu_safety(pruned, qual, place), pruned

    # -- literals

    def _UnitLit(self, env, e, live):
        return UNIT, env

    def _NumLit(self, env, e, live):
        if not 0 <= e.value < 2 ** 32:
            raise OxideError("E-WF", f"literal `{e.value}` does not fit in u32")
        return U32_T, env

    def _BoolLit(self, env, e, live):
        return BOOL, env

    def _StrLit(self, env, e, live):
        return STR, env

    def _Abort(self, env, e, live):
        return UNIT, env

    # -- places

    def _global_fn(self, env: PlaceEnv, place: Place):
        if place.path or env.current_gen(place.root) is not None:
            return None
        d = self.globals.fn(place.root)
        return None if d is None else d.fn_type()

    def _Use(self, env, e, live):
        ft = self._global_fn(env, e.place)
        if ft is not None:
            return ft, env
        ty = _lookup(env, e.place)
        if isinstance(ty, SliceTy):
            raise OxideError("E-WF", f"cannot use unsized place `{pretty_place(e.place)}` by value")
        if is_copyable(self.globals, ty):
            return self.safe(env, SHRD, e.place, live)
        if e.place.has_deref():
            raise OxideError("E-MOVED", f"cannot move out of `{pretty_place(e.place)}`, which is behind a reference")
        ty, env = self.safe(env, UNIQ, e.place, live)
        gen = env.current_gen(e.place.root)
        return ty, env.remove_prefixed(e.place, gen).with_moved(e.place, gen)

    def _Borrow(self, env, e, live):
        ty, env = self.safe(env, e.qual, e.place, live)
        return RefTy(Concrete([Loan(e.qual, e.place)]), e.qual, ty), env

    def _expect(self, actual: Type, expected: Type, what: str):
        if actual != expected:
            raise OxideError("E-UNIFY", f"{what}: expected `{pretty_type(expected)}`, found `{pretty_type(actual)}`")

    def _indexable(self, place: Place, ty: Type) -> Type:
        if isinstance(ty, (ArrayTy, SliceTy)):
            return ty.elem
        raise OxideError("E-UNIFY", f"cannot index into `{pretty_place(place)}` of type `{pretty_type(ty)}`")

    def _BorrowIdx(self, env, e, live):
        ity, env = self.check(env, e.index, live | {e.place.root})
        self._expect(ity, U32_T, "array index")
        ty, env = self.safe(env, e.qual, e.place, live)
        elem = self._indexable(e.place, ty)
        return RefTy(Concrete([Loan(e.qual, e.place)]), e.qual, elem), env

    def _BorrowSlice(self, env, e, live):
        lty, env = self.check(env, e.lo, live | {e.place.root} | free_vars(e.hi))
        self._expect(lty, U32_T, "slice bound")
        hty, env = self.check(env, e.hi, live | {e.place.root})
        self._expect(hty, U32_T, "slice bound")
        ty, env = self.safe(env, e.qual, e.place, live)
        elem = self._indexable(e.place, ty)
        return RefTy(Concrete([Loan(e.qual, e.place)]), e.qual, SliceTy(elem)), env

    # -- control

    def _Seq(self, env, e, live):
        # the value of a statement is discarded, whatever its type
        _, env = self.check(env, e.first, live | free_vars(e.second))
        self.note("seq", env)
        return self.check(env, e.second, live)

    def _If(self, env, e, live):
        tc, env = self.check(env, e.cond, live | free_vars(e.then) | free_vars(e.else_))
        self._expect(tc, BOOL, "if condition")
        t1, g1 = self.check(env, e.then, live)
        t2, g2 = self.check(env, e.else_, live)
        ty = unify(self.globals, t1, t2)
        out = env_intersect(self.globals, g1, g2)
        self.note("branch", out)
        return ty, out

    def _Assign(self, env, e, live):
        live = live | {e.place.root}
        tr, env = self.check(env, e.rhs, live)
        tp, env = self.safe(env, UNIQ, e.place, live)
        unify(self.globals, tr, tp)
        gen = env.current_gen(e.place.root)
        env = env.replace_prefixed(e.place, gen, places_typ(self.globals, e.place, tr))
        return UNIT, self._update_ancestors(env, e.place, gen)

    def _update_ancestors(self, env: PlaceEnv, place: Place, gen: int) -> PlaceEnv:
        for k in range(len(place.path) - 1, -1, -1):
            parent = Place(place.root, place.path[:k])
            pty = env.find(parent, gen)
            child = env.find(Place(place.root, place.path[:k + 1]), gen)
            if pty is None or child is None:
                continue
            pty, elem = pty.item, place.path[k]
            if isinstance(pty, RefTy) and isinstance(elem, Deref):
                new = RefTy(pty.prov, pty.qual, child.item)
            elif isinstance(pty, TupleTy) and isinstance(elem, Proj):
                elems = list(pty.elems)
                elems[elem.index] = child.item
                new = TupleTy(tuple(elems))
            elif isinstance(pty, StructTy):
                d = struct_def(self.globals, pty.name)
                fields = []
                for i, (pe, ft) in enumerate(struct_fields(self.globals, pty)):
                    got = env.find(parent.extend([pe]), gen)
                    fields.append(ft if got is None else got.item)
                new = infer_struct_type(self.globals, d, fields, (), pty.tys, self.rigid())
            else:
                continue
            env = env.set_item(parent, gen, new)
        return env

    # -- binding

    def _reroot(self, env: PlaceEnv, name: str, ty: Type) -> Type:
        """Loans that reach through a reference bound to ``name`` are moved
        onto the places that reference points to, so reborrows outlive it."""

        def fix(r):
            if not isinstance(r, Concrete) or not any(l.place.root == name and l.place.has_deref() for l in r.loans):
                return r
            out = []
            for loan in r.loans:
                if loan.place.root == name and loan.place.has_deref():
                    alts = [a for a in _aliases(env, loan.place) if a.root != name]
                    out += [Loan(loan.qual, a) for a in alts] or [loan]
                else:
                    out.append(loan)
            return Concrete(out)

        def go(t):
            if isinstance(t, RefTy):
                return RefTy(fix(t.prov), t.qual, go(t.ty))
            if isinstance(t, TupleTy):
                return TupleTy(tuple(go(x) for x in t.elems))
            if isinstance(t, StructTy):
                return StructTy(t.name, tuple(fix(r) for r in t.provs), tuple(go(x) for x in t.tys))
            if isinstance(t, ArrayTy):
                return ArrayTy(go(t.elem), t.length)
            if isinstance(t, SliceTy):
                return SliceTy(go(t.elem))
            if isinstance(t, FnTy):
                return FnTy(t.prov_params, t.ty_params, t.params, t.ret, tuple((p, go(x)) for p, x in t.captured))
            return t

        return go(ty)

    def _exit_scope(self, name: str, gen: int, ty: Type, env: PlaceEnv) -> Tuple[Type, PlaceEnv]:
        ty = self._reroot(env, name, ty)
        entries = tuple(Entry(x.place, self._reroot(env, name, x.item), x.gen) if x.place.root != name else x
                        for x in env)
        env = PlaceEnv(entries, env.moved).remove_group(name, gen)
        return ty, env

    def _escape_check(self, name: str, ty: Type, env: PlaceEnv, body: Expr) -> None:
        for loan in sorted(collect_loans(ty), key=lambda l: pretty_place(l.place)):
            if loan.place.root == name:
                raise OxideError("E-WF", f"`{pretty_place(loan.place)}` does not live long enough",
                                 _tail(body).span)
        for ent in env:
            for loan in collect_loans(ent.item):
                if loan.place.root == name:
                    raise OxideError("E-WF", f"`{pretty_place(loan.place)}` does not live long enough "
                                             f"(still borrowed by `{pretty_place(ent.place)}`)", _tail(body).span)

    def _record(self, name: str, prov) -> None:
        prev = self.solved.get(name)
        self.solved[name] = prev.union(prov) if isinstance(prev, Concrete) and isinstance(prov, Concrete) else prov

    def _bind_annot(self, actual: Type, annot: Type) -> Tuple[Type, Substitution]:
        s = subtype(self.globals, actual, annot, self.rigid())
        for k, v in s.items():
            self._record(k, v)
        ty = apply_subst(s, annot)
        if isinstance(ty, FnTy) and isinstance(actual, FnTy):
            ty = FnTy(ty.prov_params, ty.ty_params, ty.params, ty.ret, actual.captured)
        return ty, s

    def _Let(self, env, e, live):
        t1, env = self.check(env, e.rhs, live | (free_vars(e.body) - {e.name}))
        try:
            annot, s = self._bind_annot(t1, e.annot)
            self.wf(env, annot)
        except OxideError as err:
            err.span = err.span or e.span
            raise
        body = apply_subst(s, e.body)
        gen = self.fresh_gen()
        env = env.extend(places_typ(self.globals, Place(e.name), annot), gen)
        self.note(f"let {e.name}", env)
        t2, env = self.check(env, body, live)
        t2, env = self._exit_scope(e.name, gen, t2, env)
        self._escape_check(e.name, t2, env, body)
        self.wf(env, t2)
        self.note(f"end {e.name}", env)
        return t2, env

    def _Pop(self, env, e, live):
        gen = env.current_gen(e.name)
        t, env = self.check(env, e.body, live)
        t, env = self._exit_scope(e.name, gen, t, env)
        self._escape_check(e.name, t, env, e.body)
        return t, env

    # -- functions

    def _App(self, env, e, live):
        rest = frozenset().union(*(free_vars(a) for a in e.args))
        ft = self._global_fn(env, e.fn.place) if isinstance(e.fn, Use) else None
        if ft is None:
            p = e.fn.place if isinstance(e.fn, Use) else None
            if p is not None and not p.path and env.lookup(p) is None and env.moved_overlapping(p) is None:
                raise OxideError("E-UNBOUND", f"cannot find function or struct `{p.root}`")
            ft, env = self.check(env, e.fn, live | rest)
        if not isinstance(ft, FnTy):
            raise OxideError("E-UNIFY", f"`{pretty_expr(e.fn)}` is not a function (type `{pretty_type(ft)}`)")
        if len(e.args) != len(ft.params):
            raise OxideError("E-ARITY", f"function takes {len(ft.params)} arguments, got {len(e.args)}")
        if e.provs and len(e.provs) != len(ft.prov_params):
            raise OxideError("E-ARITY", f"function takes {len(ft.prov_params)} provenance arguments, got {len(e.provs)}")
        if len(e.tys) != len(ft.ty_params):
            raise OxideError("E-ARITY", f"function takes {len(ft.ty_params)} type arguments, got {len(e.tys)}")
        bound = {n for n, _ in self.tyvars}
        for r in e.provs:
            if not (isinstance(r, ProvVar) and r.name not in bound):
                self.wf(env, RefTy(r, SHRD, UNIT))
        for t in e.tys:
            self.wf(env, t)
        if e.provs:
            psub = dict(zip(ft.prov_params, e.provs))
            # variables named at the call site but not in scope are solved here
            solvable = {r.name: r.name for r in e.provs if isinstance(r, ProvVar) and r.name not in bound}
        else:
            solvable = {p: f"{p}%{id(e)}" for p in ft.prov_params}
            psub = {p: ProvVar(n) for p, n in solvable.items()}
        tsub = dict(zip(ft.ty_params, e.tys))
        params = [apply_subst(psub, t, tsub) for t in ft.params]
        ret = apply_subst(psub, ft.ret, tsub)
        arg_tys = []
        for i, a in enumerate(e.args):
            later = frozenset().union(*(free_vars(x) for x in e.args[i + 1:]))
            t, env = self.check(env, a, live | later)
            arg_tys.append(t)
        mutually_safe(env, arg_tys)
        s: Substitution = {}
        for at, pt in zip(arg_tys, params):
            _subtype(self.globals, at, pt, s, self.rigid(), at, pt)
        for n in solvable:
            if n in s and "%" not in n:
                self._record(n, s[n])
        s = {**{n: Concrete() for n in solvable.values()}, **s}
        ret = apply_subst(s, ret)
        self.wf(env, ret)
        return ret, env

    def _Closure(self, env, e, live):
        names = sorted(free_vars(e) & env.roots())
        captured = []
        for name in names:
            root = Place(name)
            ty = _lookup(env, root)
            copy = is_copyable(self.globals, ty)
            _, env = self.safe(env, SHRD if copy else UNIQ, root, live | frozenset(names))
            gen = env.current_gen(name)
            captured += [(x.place, x.item) for x in env if x.place.root == name and x.gen == gen]
            if not copy:
                env = env.remove_group(name, gen).with_moved(root, gen)
        ty = self._closure_type(e.prov_params, e.ty_params, e.params, e.body, tuple(captured))
        return ty, env

    def _closure_type(self, pp, tp, params, body, captured) -> FnTy:
        saved = self.tyvars
        self.tyvars = saved + tuple((p, Kind.PROV) for p in pp) + tuple((t, Kind.TYPE) for t in tp)
        try:
            inner = PlaceEnv()
            gen = self.fresh_gen()
            inner = inner.extend(captured, gen)
            for name, pty in params:
                self.wf(PlaceEnv(), pty)
                inner = inner.extend(places_typ(self.globals, Place(name), pty), self.fresh_gen())
            param_tys = [t for _, t in params]
            mutually_safe(inner, param_tys)
            ret, _ = self.check(inner, body, frozenset())
            local = {n for n, _ in params} | {p.root for p, _ in captured}
            for loan in collect_loans(ret):
                if loan.place.root in local:
                    raise OxideError("E-WF", f"`{pretty_place(loan.place)}` does not live long enough",
                                     _tail(body).span)
        finally:
            self.tyvars = saved
        return FnTy(tuple(pp), tuple(tp), tuple(param_tys), ret, tuple(captured))

    # -- aggregates

    def _components(self, env, elems, live):
        tys = []
        for i, a in enumerate(elems):
            later = frozenset().union(*(free_vars(x) for x in elems[i + 1:]))
            t, env = self.check(env, a, live | later)
            tys.append(t)
        mutually_safe(env, tys)
        return tys, env

    def _TupleExpr(self, env, e, live):
        tys, env = self._components(env, e.elems, live)
        return TupleTy(tuple(tys)), env

    def _ArrayExpr(self, env, e, live):
        if not e.elems:
            raise OxideError("E-UNIFY", "cannot infer the element type of an empty array")
        tys, env = self._components(env, e.elems, live)
        elem = tys[0]
        for t in tys[1:]:
            elem = unify(self.globals, elem, t)
        return ArrayTy(elem, len(tys)), env

    def _StructExpr(self, env, e, live):
        d = struct_def(self.globals, e.name)
        tys, env = self._components(env, e.args, live)
        if e.field_names is not None:
            if d.field_names is None or sorted(e.field_names) != sorted(d.field_names) \
                    or len(set(e.field_names)) != len(e.field_names):
                raise OxideError("E-ARITY", f"fields of `{e.name}` do not match its definition")
            by_name = dict(zip(e.field_names, tys))
            tys = [by_name[n] for n in d.field_names]
        elif d.field_names is not None:
            raise OxideError("E-ARITY", f"struct `{e.name}` has named fields")
        for r in e.provs:
            self.wf(env, RefTy(r, SHRD, UNIT))
        return infer_struct_type(self.globals, d, tys, e.provs, e.tys, self.rigid()), env

    # -- runtime values (residual programs)

    def _PtrVal(self, env, e, live):
        ty = self.loc_type(env, e.loc)
        if e.slice is not None:
            ty = SliceTy(self._indexable(e.loc.place, ty))
        return RefTy(Concrete([Loan(e.qual, e.loc.place)]), e.qual, ty), env

    def loc_type(self, env: PlaceEnv, loc) -> Type:
        ty = env.lookup(loc.place)
        if ty is None:
            raise OxideError("E-UNBOUND", f"dangling pointer to `{pretty_place(loc.place)}`")
        for st in loc.steps:
            if isinstance(st, int):
                ty = self._indexable(loc.place, ty)
            elif isinstance(ty, TupleTy) and isinstance(st, Proj):
                ty = ty.elems[st.index]
            elif isinstance(ty, StructTy):
                ty = dict(struct_fields(self.globals, ty))[st]
        return ty

    def _ClosureVal(self, env, e, live):
        if e.fn_name is not None:
            return self.globals.fn(e.fn_name).fn_type(), env
        captured = self.store_env(e.captured, outer=env).pairs()
        return self._closure_type(e.prov_params, e.ty_params, e.params, e.body, tuple(captured)), env

    def _Hole(self, env, e, live):
        raise OxideError("E-WF", "holes only appear inside store shapes")

    # -- typing a runtime store

    def store_env(self, entries, outer: Optional[PlaceEnv] = None) -> PlaceEnv:
        """Reconstruct a place environment satisfied by a store (or by the
        captured entries of a closure).  References get the singleton
        provenance of the location they point to."""
        if isinstance(entries, Store):
            items = [(e.place, e.item, e.gen) for e in entries]
        else:
            items = [(p, s, 0) for p, s in entries]
        shapes = {}
        for p, s, g in items:
            shapes[(p, g)] = s
        latest = {}
        for p, s, g in items:
            latest[p.root] = max(latest.get(p.root, g), g)
        memo: Dict[Tuple[Place, int], Type] = {}
        env_so_far = PlaceEnv()

        def place_type(place: Place, gen: Optional[int]) -> Optional[Type]:
            if gen is None:
                gen = latest.get(place.root)
            key = (place, gen)
            if key in memo:
                return memo[key]
            shape = shapes.get(key)
            if shape is None:
                if outer is not None:
                    return outer.lookup(place)
                return None
            memo[key] = ty = shape_type(place, gen, shape)
            return ty

        def shape_type(place, gen, s) -> Type:
            if isinstance(s, NumLit):
                return U32_T
            if isinstance(s, BoolLit):
                return BOOL
            if isinstance(s, StrLit):
                return STR
            if isinstance(s, UnitLit):
                return UNIT
            if isinstance(s, TupleExpr):
                return TupleTy(tuple(component(place.proj(i), gen, c) for i, c in enumerate(s.elems)))
            if isinstance(s, StructExpr):
                d = struct_def(self.globals, s.name)
                fields = [component(place.extend([d.path_elem(i)]), gen, c) for i, c in enumerate(s.args)]
                return infer_struct_type(self.globals, d, fields, s.provs, s.tys)
            if isinstance(s, PtrVal):
                target = place_type(s.loc.place, s.loc.gen)
                if target is None:
                    raise OxideError("E-UNBOUND", f"dangling pointer to `{pretty_place(s.loc.place)}`")
                probe = PlaceEnv((Entry(s.loc.place, target, 0),))
                ty = self.loc_type(probe, s.loc)
                if s.slice is not None:
                    ty = SliceTy(self._indexable(s.loc.place, ty))
                return RefTy(Concrete([Loan(s.qual, s.loc.place)]), s.qual, ty)
            t, _ = self.check(env_so_far if outer is None else outer, s, frozenset())
            return t

        def component(place, gen, c):
            if isinstance(c, Hole):
                t = place_type(place, gen)
                return UNIT if t is None else t
            return shape_type(place, gen, c)

        env = PlaceEnv()
        seen = set()
        for p, s, g in items:
            if (p.root, g) in seen:
                continue
            seen.add((p.root, g))
            root = Place(p.root)
            rty = place_type(root, g)
            if rty is None:
                continue
            present = {q for q, _, gg in items if gg == g and q.root == p.root}
            pairs = []
            for q, t in places_typ(self.globals, root, rty):
                base = Place(q.root, tuple(itertools.takewhile(lambda x: not isinstance(x, Deref), q.path)))
                if base in present:
                    pairs.append((q, t))
            env = env.extend(pairs, g)
            for q in places_typ(self.globals, root, rty):
                if not q[0].has_deref() and q[0] not in present:
                    env = env.with_moved(q[0], g)
            env_so_far = env
        return env


# --------------------------------------------------------------------------
# public entry points


def type_check(globals: GlobalEnv, tyvars: TyVarEnv, env: PlaceEnv, e: Expr) -> CheckOutcome:
    start = max([x.gen for x in env] + [0]) + 1
    ck = Checker(globals, tyvars, start)
    ty, out = ck.check(env, e)
    return CheckOutcome(ty, out, dict(ck.solved), ck.trace)


def _check_globals(ck: Checker) -> None:
    g = ck.globals
    seen = set()
    for name, d in g.structs:
        if name in seen:
            raise OxideError("E-WF", f"struct `{name}` is defined twice", d.span)
        seen.add(name)
    seen = set()
    for name, d in g.fns:
        if name in seen:
            raise OxideError("E-WF", f"function `{name}` is defined twice", d.span)
        seen.add(name)

    def params_env(pp, tp, span):
        names = list(pp) + list(tp)
        if len(set(names)) != len(names):
            raise OxideError("E-KIND", "duplicate generic parameter", span)
        return tuple((p, Kind.PROV) for p in pp) + tuple((t, Kind.TYPE) for t in tp)

    def mentions(t, acc):
        if isinstance(t, StructTy):
            acc.add(t.name)
            for x in t.tys:
                mentions(x, acc)
        elif isinstance(t, RefTy):
            mentions(t.ty, acc)
        elif isinstance(t, TupleTy):
            for x in t.elems:
                mentions(x, acc)
        elif isinstance(t, (ArrayTy, SliceTy)):
            mentions(t.elem, acc)
        elif isinstance(t, FnTy):
            for x in t.params + (t.ret,):
                mentions(x, acc)
        return acc

    graph = {name: set().union(*[mentions(t, set()) for t in d.field_types]) for name, d in g.structs}
    for name, d in g.structs:
        if d.field_names is not None and len(set(d.field_names)) != len(d.field_names):
            raise OxideError("E-WF", f"struct `{name}` repeats a field name", d.span)
        ck.tyvars = params_env(d.prov_params, d.ty_params, d.span)
        for t in d.field_types:
            try:
                ck.wf(PlaceEnv(), t)
            except OxideError as err:
                err.span = err.span or d.span
                raise
        stack, reach = list(graph[name]), set()
        while stack:
            n = stack.pop()
            if n == name:
                raise OxideError("E-WF", f"struct `{name}` is recursive", d.span)
            if n not in reach and n in graph:
                reach.add(n)
                stack.extend(graph[n])

    for name, d in g.fns:
        ck.tyvars = params_env(d.prov_params, d.ty_params, d.span)
        env = PlaceEnv()
        try:
            for pname, pty in d.params:
                ck.wf(PlaceEnv(), pty)
                env = env.extend(places_typ(g, Place(pname), pty), ck.fresh_gen())
            ck.wf(PlaceEnv(), d.ret)
            mutually_safe(env, [t for _, t in d.params])
        except OxideError as err:
            err.span = err.span or d.span
            raise
        ty, out = ck.check(env, d.body)
        ty = abstract_loans(env, ty)
        try:
            subtype(g, ty, d.ret, ck.rigid())
        except OxideError as err:
            err.span = _tail(d.body).span or d.span
            raise
        for pname, _ in reversed(d.params):
            out = out.remove_group(pname)
            ck._escape_check(pname, ty, out, d.body)
    ck.tyvars = ()


def abstract_loans(env: PlaceEnv, ty: Type) -> Type:
    """Rewrite concrete provenances whose loans all go through references of
    one abstract provenance ``'a`` into ``'a`` itself (reborrows of
    parameters)."""

    def abstract(r):
        if not isinstance(r, Concrete) or not r.loans:
            return r
        found = set()
        for loan in r.loans:
            holders = _access_holders(loan.place)
            hty = env.lookup(holders[0]) if holders else None
            if not (isinstance(hty, RefTy) and isinstance(hty.prov, ProvVar)):
                return r
            found.add(hty.prov)
        return found.pop() if len(found) == 1 else r

    if isinstance(ty, RefTy):
        return RefTy(abstract(ty.prov), ty.qual, abstract_loans(env, ty.ty))
    if isinstance(ty, TupleTy):
        return TupleTy(tuple(abstract_loans(env, t) for t in ty.elems))
    if isinstance(ty, StructTy):
        return StructTy(ty.name, tuple(abstract(r) for r in ty.provs), tuple(abstract_loans(env, t) for t in ty.tys))
    if isinstance(ty, ArrayTy):
        return ArrayTy(abstract_loans(env, ty.elem), ty.length)
    if isinstance(ty, SliceTy):
        return SliceTy(abstract_loans(env, ty.elem))
    return ty


def check_program(globals: GlobalEnv, body: Expr) -> CheckOutcome:
    """Validate the global definitions, then type the program body under empty
    environments."""
    ck = Checker(globals)
    try:
        _check_globals(ck)
        ck.trace.clear()
        ck.solved.clear()
        ck.note("start", PlaceEnv())
        ty, out = ck.check(PlaceEnv(), body)
        ck.wf(out, ty)
    except OxideError as err:
        # keep what was learned up to the failure for --trace-env
        err.trace, err.solved = ck.trace, dict(ck.solved)
        raise
    return CheckOutcome(ty, out, dict(ck.solved), ck.trace)


def solved_lines(solved: Dict[str, object]) -> List[str]:
    return [f"'{k} = {pretty_prov(v)}" for k, v in sorted(solved.items()) if "%" not in k]
