"""Small-step evaluation of configurations ``(store, expr)``.

Values are expression nodes with no redex left.  The store maps places to
one-level shapes: tuples and structs keep ``Hole`` at each component, whose
contents live at the extended place.  Arrays are kept whole, so pointers into
them carry value-level index steps in their ``Loc``.

Every move, copy, borrow and assignment runs the dynamic safety check unless
``checks`` is off (erasure mode).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import List, Optional, Tuple

from oxide.ast import (
    HOLE, SHRD, UNIQ, Abort, App, ArrayExpr, ArrayTy, Assign, Bool, BoolLit, Borrow,
    BorrowIdx, BorrowSlice, Closure, ClosureVal, Concrete, Deref, Expr, FieldProj, FnTy,
    GlobalEnv, Hole, If, Let, Loc, NumLit, OwnQual, Place, PlaceEnv, Pop, Proj, PtrVal,
    RefTy, Seq, SliceTy, Store, Str, StrLit, StructExpr, StructTy, TupleExpr, TupleTy,
    U32, Unit, UnitLit, Use, is_value, overlaps, pretty, pretty_expr, pretty_place, prefix_of,
)
from oxide.parser import OxideError
from oxide.typeck import _aliases, apply_subst, free_vars, struct_def

DEFAULT_FUEL = 10 ** 6


@dataclass(frozen=True)
class Stepped:
    store: Store
    expr: Expr


@dataclass(frozen=True)
class Finished:
    value: Expr
    store: Store = Store()
    steps: int = 0


@dataclass(frozen=True)
class Aborted:
    message: str
    steps: int = 0


@dataclass(frozen=True)
class Stuck:
    reason: str
    fuel_exhausted: bool = False
    steps: int = 0


StepResult = (Stepped, Finished, Aborted, Stuck)


class _Abort(Exception):
    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class _Stuck(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# --------------------------------------------------------------------------
# values and shapes


def _components(v) -> Tuple:
    return v.args if isinstance(v, StructExpr) else v.elems


def _elem_paths(v) -> list:
    if isinstance(v, StructExpr) and v.field_names is not None:
        return [FieldProj(n) for n in v.field_names]
    return [Proj(i) for i in range(len(_components(v)))]


def _with_components(v, comps):
    if isinstance(v, StructExpr):
        return StructExpr(v.name, v.provs, v.tys, tuple(comps), v.field_names)
    return TupleExpr(tuple(comps))


def places_val(root: Place, v: Expr) -> List[Tuple[Place, Expr]]:
    """Flatten a value into one-level shapes rooted at ``root``."""
    if isinstance(v, (TupleExpr, StructExpr)):
        comps = _components(v)
        out = [(root, _with_components(v, [HOLE] * len(comps)))]
        for elem, c in zip(_elem_paths(v), comps):
            out += places_val(root.extend([elem]), c)
        return out
    return [(root, v)]


def valuify(store: Store, place: Place, gen: Optional[int] = None) -> Expr:
    """Reassemble the value stored at ``place`` from its component shapes."""
    e = store.find(place, gen)
    if e is None:
        raise OxideError("E-UNBOUND-RT", f"no value at `{pretty_place(place)}`")
    shape = e.item
    if isinstance(shape, (TupleExpr, StructExpr)):
        comps = [valuify(store, place.extend([elem]), e.gen) if isinstance(c, Hole) else c
                 for elem, c in zip(_elem_paths(shape), _components(shape))]
        return _with_components(shape, comps)
    return shape


def value_copyable(v: Expr) -> bool:
    if isinstance(v, (NumLit, BoolLit, UnitLit)):
        return True
    if isinstance(v, PtrVal):
        return v.qual is SHRD
    if isinstance(v, (TupleExpr, ArrayExpr)):
        return all(value_copyable(x) for x in v.elems)
    if isinstance(v, ClosureVal):
        return not v.captured
    return False


def _pointers(v):
    if isinstance(v, PtrVal):
        yield v
    elif isinstance(v, (TupleExpr, ArrayExpr)):
        for x in v.elems:
            yield from _pointers(x)
    elif isinstance(v, StructExpr):
        for x in v.args:
            yield from _pointers(x)
    elif isinstance(v, ClosureVal):
        for _, s in v.captured:
            yield from _pointers(s)


# --------------------------------------------------------------------------
# locations


def loc_overlaps(a: Loc, b: Loc) -> bool:
    if a.gen != b.gen or not overlaps(a.place, b.place):
        return False
    if a.place != b.place:
        return True
    n = min(len(a.steps), len(b.steps))
    return a.steps[:n] == b.steps[:n]


def _step_into(v, st, what):
    if isinstance(st, int):
        if not isinstance(v, ArrayExpr):
            raise _Stuck(f"cannot index into `{what}`")
        return v.elems[st]
    if isinstance(v, StructExpr) and isinstance(st, FieldProj) and v.field_names:
        return v.args[v.field_names.index(st.name)]
    if isinstance(v, (TupleExpr, StructExpr)) and isinstance(st, Proj):
        return _components(v)[st.index]
    raise _Stuck(f"cannot project `{what}`")


def read(store: Store, loc: Loc) -> Expr:
    try:
        v = valuify(store, loc.place, loc.gen)
    except OxideError as err:
        raise _Stuck(err.message)
    for st in loc.steps:
        v = _step_into(v, st, pretty_place(loc.place))
    return v


def _update(v, steps, new):
    if not steps:
        return new
    st, rest = steps[0], steps[1:]
    if isinstance(st, int):
        elems = list(v.elems)
        elems[st] = _update(elems[st], rest, new)
        return ArrayExpr(tuple(elems))
    comps = list(_components(v))
    i = v.field_names.index(st.name) if isinstance(st, FieldProj) else st.index
    comps[i] = _update(comps[i], rest, new)
    return _with_components(v, comps)


def write(store: Store, loc: Loc, v: Expr) -> Store:
    if loc.steps:
        v = _update(read(store, Loc(loc.place, loc.gen)), loc.steps, v)
    return store.replace_prefixed(loc.place, loc.gen, places_val(loc.place, v))


def resolve(store: Store, place: Place, holders: Optional[list] = None) -> Tuple[Loc, Optional[Tuple[int, int]]]:
    """Follow the pointers along ``place``.  Returns the target location and,
    for a dereferenced slice pointer, its window."""
    gen = store.current_gen(place.root)
    if gen is None:
        raise _Stuck(f"unbound place `{pretty_place(place)}`")
    cur, window = Loc(Place(place.root), gen, ()), None
    for elem in place.path:
        if isinstance(elem, Deref):
            ptr = read(store, cur)
            if not isinstance(ptr, PtrVal):
                raise _Stuck(f"dereference of non-pointer at `{pretty_place(place)}`")
            if holders is not None:
                holders.append(cur)
            cur, window = ptr.loc, ptr.slice
        elif cur.steps or store.find(cur.place.extend([elem]), cur.gen) is None:
            cur, window = Loc(cur.place, cur.gen, cur.steps + (elem,)), None
        else:
            cur, window = Loc(cur.place.extend([elem]), cur.gen, ()), None
    return cur, window


def _exempt(entry_place: Place, entry_gen: int, holders: List[Loc]) -> bool:
    return any(h.gen == entry_gen and prefix_of(entry_place, h.place) for h in holders)


def _dyn_conflict(store: Store, qual: OwnQual, target: Loc, holders: List[Loc], live) -> Optional[PtrVal]:
    for e in store:
        if live is not None and e.place.root not in live:
            continue
        if _exempt(e.place, e.gen, holders):
            continue
        for ptr in _pointers(e.item):
            if qual is SHRD and ptr.qual is SHRD:
                continue
            if loc_overlaps(ptr.loc, target):
                return ptr
    return None


def dyn_mu_safety(store: Store, qual: OwnQual, place: Place, live=None) -> bool:
    """Whether no pointer in ``store`` forbids using ``place`` ``qual``-ly.
    Pointers followed to reach ``place`` are exempt; with ``live`` given, so
    are pointers held by bindings whose name is not in it."""
    holders: list = []
    try:
        target, _ = resolve(store, place, holders)
    except _Stuck:
        return False
    return _dyn_conflict(store, qual, target, holders, live) is None


# --------------------------------------------------------------------------
# stepping


class _Machine:
    def __init__(self, globals: GlobalEnv, store: Store, checks: bool, live):
        self.globals = globals
        self.store = store
        self.checks = checks
        self.live = live

    def access(self, qual: OwnQual, place: Place):
        holders: list = []
        target, window = resolve(self.store, place, holders)
        if self.checks and _dyn_conflict(self.store, qual, target, holders, self.live) is not None:
            raise _Stuck(f"dynamic {qual.value}-safety violation")
        return target, window

    def global_fn(self, place: Place):
        if place.path or self.store.current_gen(place.root) is not None:
            return None
        d = self.globals.fn(place.root)
        if d is None:
            return None
        return ClosureVal((), d.prov_params, d.ty_params, d.params, d.body, d.name)

    def step(self, e: Expr) -> Expr:
        if isinstance(e, Abort):
            raise _Abort(e.message)
        if isinstance(e, Use):
            fv = self.global_fn(e.place)
            if fv is not None:
                return fv
            holders: list = []
            target, window = resolve(self.store, e.place, holders)
            v = read(self.store, target)
            qual = SHRD if value_copyable(v) else UNIQ
            if self.checks and _dyn_conflict(self.store, qual, target, holders, self.live) is not None:
                raise _Stuck(f"dynamic {qual.value}-safety violation")
            if qual is UNIQ:
                if e.place.has_deref() or target.steps:
                    raise _Stuck(f"move out of `{pretty_place(e.place)}` through a reference")
                self.store = self.store.remove_prefixed(target.place, target.gen)
            return v
        if isinstance(e, Borrow):
            target, window = self.access(e.qual, e.place)
            return PtrVal(e.qual, target, window)
        if isinstance(e, BorrowIdx):
            if not is_value(e.index):
                return BorrowIdx(e.qual, e.place, self.step(e.index), span=e.span)
            target, window = self.access(e.qual, e.place)
            arr = read(self.store, target)
            lo, hi = window if window is not None else (0, len(arr.elems))
            i = e.index.value
            if not 0 <= i < hi - lo:
                raise _Abort(f"index out of bounds: the length is {hi - lo} but the index is {i}")
            return PtrVal(e.qual, Loc(target.place, target.gen, target.steps + (lo + i,)))
        if isinstance(e, BorrowSlice):
            if not is_value(e.lo):
                return BorrowSlice(e.qual, e.place, self.step(e.lo), e.hi, span=e.span)
            if not is_value(e.hi):
                return BorrowSlice(e.qual, e.place, e.lo, self.step(e.hi), span=e.span)
            target, window = self.access(e.qual, e.place)
            arr = read(self.store, target)
            base, top = window if window is not None else (0, len(arr.elems))
            lo, hi = e.lo.value, e.hi.value
            if not lo <= hi <= top - base:
                raise _Abort(f"slice index out of bounds: {lo}..{hi} of length {top - base}")
            return PtrVal(e.qual, target, (base + lo, base + hi))
        if isinstance(e, Seq):
            if not is_value(e.first):
                return Seq(self.step(e.first), e.second, span=e.span)
            return e.second
        if isinstance(e, If):
            if not is_value(e.cond):
                return If(self.step(e.cond), e.then, e.else_, span=e.span)
            return e.then if e.cond.value else e.else_
        if isinstance(e, Assign):
            if not is_value(e.rhs):
                return Assign(e.place, self.step(e.rhs), span=e.span)
            target, _ = self.access(UNIQ, e.place)
            self.store = write(self.store, target, e.rhs)
            return UnitLit()
        if isinstance(e, Let):
            if not is_value(e.rhs):
                return Let(e.name, e.annot, self.step(e.rhs), e.body, span=e.span)
            gen, self.store = self.store.fresh()
            self.store = self.store.extend(places_val(Place(e.name), e.rhs), gen)
            return Pop(e.name, e.body, span=e.span)
        if isinstance(e, Pop):
            if not is_value(e.body):
                return Pop(e.name, self.step(e.body), span=e.span)
            self.store = self.store.remove_group(e.name)
            return e.body
        if isinstance(e, (TupleExpr, ArrayExpr, StructExpr)):
            comps = list(_components(e))
            for i, c in enumerate(comps):
                if not is_value(c):
                    comps[i] = self.step(c)
                    break
            if isinstance(e, ArrayExpr):
                return ArrayExpr(tuple(comps), span=e.span)
            if isinstance(e, TupleExpr):
                return TupleExpr(tuple(comps), span=e.span)
            return StructExpr(e.name, e.provs, e.tys, tuple(comps), e.field_names, span=e.span)
        if isinstance(e, Closure):
            return self.close(e)
        if isinstance(e, App):
            return self.apply(e)
        raise _Stuck(f"no rule applies to `{pretty_expr(e)}`")

    def close(self, e: Closure) -> ClosureVal:
        names = sorted(free_vars(e) & self.store.roots())
        captured = []
        for name in names:
            root = Place(name)
            target, _ = resolve(self.store, root)
            v = read(self.store, target)
            copy = value_copyable(v)
            self.access(SHRD if copy else UNIQ, root)
            gen = self.store.current_gen(name)
            captured += [(x.place, x.item) for x in self.store if x.place.root == name and x.gen == gen]
            if not copy:
                self.store = self.store.remove_group(name, gen)
        return ClosureVal(tuple(captured), e.prov_params, e.ty_params, e.params, e.body, span=e.span)

    def apply(self, e: App) -> Expr:
        if not is_value(e.fn):
            return App(self.step(e.fn), e.provs, e.tys, e.args, span=e.span)
        args = list(e.args)
        for i, a in enumerate(args):
            if not is_value(a):
                args[i] = self.step(a)
                return App(e.fn, e.provs, e.tys, tuple(args), span=e.span)
        f = e.fn
        if not isinstance(f, ClosureVal) or len(f.params) != len(args):
            raise _Stuck(f"cannot apply `{pretty_expr(f)}`")
        psub = dict(zip(f.prov_params, e.provs)) if e.provs else {}
        tsub = dict(zip(f.ty_params, e.tys))
        body = apply_subst(psub, f.body, tsub)
        pushed = []
        groups = {}
        for p, s in f.captured:
            groups.setdefault(p.root, []).append((p, s))
        for name, pairs in groups.items():
            gen, self.store = self.store.fresh()
            self.store = self.store.extend(pairs, gen)
            pushed.append(name)
        for (name, _), v in zip(f.params, args):
            gen, self.store = self.store.fresh()
            self.store = self.store.extend(places_val(Place(name), v), gen)
            pushed.append(name)
        for name in reversed(pushed):
            body = Pop(name, body, span=e.span)
        return body


@functools.lru_cache(maxsize=1 << 16)
def _live(e: Expr) -> frozenset:
    return free_vars(e)


def step(globals: GlobalEnv, store: Store, e: Expr, checks: bool = True):
    """One reduction step of the configuration ``(store, e)``."""
    if is_value(e):
        return Finished(e, store)
    m = _Machine(globals, store, checks, _live(e))
    try:
        e2 = m.step(e)
    except _Abort as a:
        return Aborted(a.message)
    except _Stuck as s:
        return Stuck(s.reason)
    return Stepped(m.store, e2)


def run(globals: GlobalEnv, e: Expr, checks: bool = True, fuel: int = DEFAULT_FUEL, store: Store = Store(),
        observe=None):
    """Iterate ``step``; ``observe(store, expr)`` sees every configuration."""
    n = 0
    while True:
        if observe is not None:
            observe(store, e)
        if is_value(e):
            return Finished(e, store, n)
        if n >= fuel:
            return Stuck("fuel exhausted", True, n)
        r = step(globals, store, e, checks)
        if isinstance(r, Aborted):
            return Aborted(r.message, n + 1)
        if isinstance(r, Stuck):
            return Stuck(r.reason, False, n)
        store, e = r.store, r.expr
        n += 1


def eval(globals: GlobalEnv, e: Expr, checks: bool = True, fuel: int = DEFAULT_FUEL):
    return run(globals, e, checks, fuel)


# --------------------------------------------------------------------------
# store typing


def _pair_gens(env_gens, store_gens):
    return dict(zip(sorted(store_gens), sorted(env_gens)))


def store_satisfies(globals: GlobalEnv, env: PlaceEnv, store: Store) -> bool:
    """Whether ``store`` has exactly the deref-free places of ``env`` (binding
    groups matched in order) with shapes that fit their types."""
    env_gens, store_gens = {}, {}
    for x in env:
        env_gens.setdefault(x.place.root, set()).add(x.gen)
    for x in store:
        store_gens.setdefault(x.place.root, set()).add(x.gen)
    if env_gens.keys() != store_gens.keys():
        return False
    gmap = {}
    for root in env_gens:
        if len(env_gens[root]) != len(store_gens[root]):
            return False
        gmap[root] = _pair_gens(env_gens[root], store_gens[root])
    env_keys = {(x.place, x.gen) for x in env if not x.place.has_deref()}
    store_keys = {(x.place, gmap[x.place.root][x.gen]) for x in store}
    if env_keys != store_keys:
        return False
    for x in store:
        ty = env.find(x.place, gmap[x.place.root][x.gen]).item
        if not _fits(globals, env, x.item, ty, hole_ok=True):
            return False
    return True


def _fits(globals, env, s, ty, hole_ok=False) -> bool:
    if isinstance(s, Hole):
        return hole_ok
    if isinstance(s, NumLit):
        return isinstance(ty, U32)
    if isinstance(s, BoolLit):
        return isinstance(ty, Bool)
    if isinstance(s, StrLit):
        return isinstance(ty, Str)
    if isinstance(s, UnitLit):
        return isinstance(ty, Unit)
    if isinstance(s, TupleExpr):
        return isinstance(ty, TupleTy) and len(ty.elems) == len(s.elems) and \
            all(_fits(globals, env, c, t, hole_ok) for c, t in zip(s.elems, ty.elems))
    if isinstance(s, StructExpr):
        return isinstance(ty, StructTy) and ty.name == s.name and \
            len(s.args) == len(struct_def(globals, s.name).field_types)
    if isinstance(s, ArrayExpr):
        return isinstance(ty, ArrayTy) and ty.length == len(s.elems) and \
            all(_fits(globals, env, c, ty.elem) for c in s.elems)
    if isinstance(s, PtrVal):
        if not isinstance(ty, RefTy) or ty.qual is not s.qual:
            return False
        if isinstance(ty.prov, Concrete):
            return any(prefix_of(a, s.loc.place) for loan in ty.prov.loans for a in _aliases(env, loan.place))
        return True
    if isinstance(s, ClosureVal):
        return isinstance(ty, FnTy) and len(ty.params) == len(s.params)
    return False


def pretty_config(store: Store, e: Expr) -> str:
    return pretty(store) + " ⊢ " + pretty_expr(e)


def render_value(v: Expr) -> str:
    return pretty_expr(v)
