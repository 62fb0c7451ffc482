import itertools

import pytest

from oxide.ast import (
    HOLE, SHRD, U32_T, UNIQ, GlobalEnv, Loc, NumLit, Place, PtrVal, Store, StructTy, TupleExpr, TupleTy,
    UnitLit, env_of, ref_ty, Loan,
)
from oxide.conformance import small_values
from oxide.interp import (
    Aborted, Finished, Stepped, Stuck, dyn_mu_safety, eval, places_val, run, step, store_satisfies, valuify,
)
from oxide.parser import parse_expr, parse_place, parse_program

G = GlobalEnv()
X = Place("x")


def tup(*xs):
    return TupleExpr(tuple(NumLit(x) if isinstance(x, int) else x for x in xs))


def store_of(pairs, gen=0):
    return Store().extend(pairs, gen)


def test_places_val_examples():
    assert places_val(X, tup(5)) == [(X, tup(HOLE)), (X.proj(0), NumLit(5))]
    assert places_val(X, NumLit(5)) == [(X, NumLit(5))]
    assert len(places_val(X, tup(tup(1, 2), 3))) == 5


def test_valuify_examples():
    assert valuify(store_of([(X, tup(HOLE)), (X.proj(0), NumLit(5))]), X) == tup(5)
    assert valuify(store_of([(X, NumLit(5))]), X) == NumLit(5)


def _count_oracle(v):
    # one entry per node of the value tree
    if isinstance(v, TupleExpr):
        return 1 + sum(_count_oracle(c) for c in v.elems)
    return 1


def test_places_val_round_trip_depth_3():
    for v in small_values(3):
        pairs = places_val(X, v)
        assert len(pairs) == _count_oracle(v)
        assert valuify(store_of(pairs), X) == v


def test_pop_removes_one_group():
    g, body = parse_program("let x: (u32, (u32, u32)) = (1, (2, 3)); x.1.0")
    sizes = []
    run(g, body, observe=lambda s, e: sizes.append(len(s)))
    assert max(sizes) == 5 and sizes[-1] == 0


def _pt_store(*ptrs):
    pt = Place("pt")
    pairs = places_val(pt, tup(6, 9))
    s = store_of(pairs, 0)
    for i, (qual, target) in enumerate(ptrs):
        s = s.extend([(Place(f"r{i}"), PtrVal(qual, Loc(parse_place(target), 0)))], i + 1)
    return s


def test_dyn_mu_safety_examples():
    assert not dyn_mu_safety(_pt_store((UNIQ, "pt")), SHRD, Place("pt"))
    assert dyn_mu_safety(store_of([(X, NumLit(1))]), UNIQ, X)
    assert dyn_mu_safety(_pt_store((UNIQ, "pt.1")), UNIQ, parse_place("pt.0"))
    assert dyn_mu_safety(_pt_store((SHRD, "pt")), SHRD, Place("pt"))
    assert not dyn_mu_safety(_pt_store((SHRD, "pt")), UNIQ, parse_place("pt.0"))


def test_dyn_mu_safety_through_holder():
    s = _pt_store((UNIQ, "pt"))
    assert dyn_mu_safety(s, UNIQ, parse_place("(*r0).1"))


def test_step_let_copy_pop():
    e = parse_expr("let x: u32 = 5; x")
    seen = []
    r = run(G, e, observe=lambda s, x: seen.append(type(x).__name__))
    assert r == Finished(NumLit(5), Store(next_gen=1), 3)
    assert seen == ["Let", "Pop", "Pop", "NumLit"]


def test_step_if_and_abort():
    r = step(G, Store(), parse_expr("if true { 1 } else { 2 }"))
    assert isinstance(r, Stepped) and r.expr == NumLit(1)
    r = step(G, Store(), parse_expr('let x: u32 = abort("oops"); x'))
    assert r == Aborted("oops")


def test_eval_disjoint_program():
    src = ("struct Point(u32, u32);\nlet pt: Point = Point(6, 9);\n"
           "let x: &'x uniq u32 = &uniq pt.0;\nlet y: &'y uniq u32 = &uniq pt.1;\n*x")
    g, body = parse_program(src)
    r = eval(g, body)
    assert isinstance(r, Finished) and r.value == NumLit(6) and len(r.store) == 0


def test_eval_trivial_and_fuel():
    assert eval(G, UnitLit()) == Finished(UnitLit(), Store(), 0)
    r = eval(G, parse_expr("let x: u32 = 5; x"), fuel=0)
    assert isinstance(r, Stuck) and r.fuel_exhausted


def test_index_out_of_bounds_aborts():
    r = eval(G, parse_expr("let a: [u32; 2] = [1, 2]; let r: &'r shrd u32 = &shrd a[5]; *r"))
    assert isinstance(r, Aborted) and "out of bounds" in r.message


def test_checked_run_catches_double_uniq():
    src = ("struct Point(u32, u32);\nlet mut pt: Point = Point(6, 9);\n"
           "let x: &'a uniq Point = &uniq pt;\nlet y: &'b uniq Point = &uniq pt;\n"
           "(*x).0 = 1;\n(*y).1 = 2;\n()")
    g, body = parse_program(src)
    r = run(g, body, True)
    assert isinstance(r, Stuck) and r.reason == "dynamic uniq-safety violation"
    assert isinstance(run(g, body, False), Finished)


def test_store_satisfies_examples():
    g, _ = parse_program("struct Point(u32, u32); ()")
    assert store_satisfies(G, env_of([(X, U32_T)]), store_of([(X, NumLit(5))]))
    point = StructTy("Point")
    pt = Place("pt")
    env = env_of([(pt, point), (pt.proj(0), U32_T), (pt.proj(1), U32_T)], 0)
    env = env.extend([(X, ref_ty([Loan(UNIQ, pt)], UNIQ, point)), (X.deref(), point)], 1)
    from oxide.ast import StructExpr
    store = store_of([(pt, StructExpr("Point", (), (), (HOLE, HOLE))), (pt.proj(0), NumLit(6)),
                      (pt.proj(1), NumLit(9))], 0)
    store = store.extend([(X, PtrVal(UNIQ, Loc(pt, 0)))], 1)
    assert store_satisfies(g, env, store)
    assert not store_satisfies(G, env_of([(X, TupleTy((U32_T, U32_T)))]), store_of([(X, tup(5))]))


def test_step_is_deterministic():
    e = parse_expr("let x: (u32, u32) = (1, 2); let y: &'a shrd u32 = &shrd x.1; *y")
    assert run(G, e) == run(G, e)
