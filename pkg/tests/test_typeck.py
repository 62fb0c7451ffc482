import itertools

import pytest

from oxide.ast import (
    BOOL, SHRD, U32_T, UNIQ, Concrete, FnTy, GlobalEnv, Kind, Loan, Place, ProvVar, RefTy, Str, StructTy,
    TupleTy, TyVar, env_of, pretty_type,
)
from oxide.conformance import small_types
from oxide.parser import OxideError, parse_expr, parse_place, parse_program
from oxide.typeck import (
    apply_subst, apply_weakening, check_program, env_intersect, is_copyable, mu_safety, mutually_safe,
    places_typ, subtype, type_check, unify, unify_or_none, well_formed_type,
)

G = GlobalEnv()
POINT_SRC = "struct Point(u32, u32); ()"
PG, _ = parse_program(POINT_SRC)
POINT = StructTy("Point")


def pl(s):
    return parse_place(s)


def loans(*items):
    return Concrete([Loan(SHRD if q == "shrd" else UNIQ, pl(p)) for q, p in (i.split() for i in items)])


def ref(qual, ty, *items):
    return RefTy(loans(*items), qual, ty)


def env(*pairs):
    return env_of([(pl(p), t) for p, t in pairs])


# -- mu_safety ---------------------------------------------------------------


def test_mu_safety_conflict_with_uniq_loan():
    g = env(("pt", POINT), ("x", ref(UNIQ, POINT, "uniq pt")))
    with pytest.raises(OxideError) as info:
        mu_safety(g, SHRD, pl("pt"))
    assert info.value.code == "E-LOAN-CONFLICT"


def test_mu_safety_disjoint_projection():
    g = env(("pt", POINT), ("pt.0", U32_T), ("pt.1", U32_T), ("y", ref(UNIQ, U32_T, "uniq pt.1")))
    assert mu_safety(g, UNIQ, pl("pt.0")) == U32_T


def test_mu_safety_trivial_and_shared_loans():
    assert mu_safety(env(("x", U32_T)), UNIQ, pl("x")) == U32_T
    g = env(("m", U32_T), ("n", U32_T), ("x", ref(SHRD, U32_T, "shrd m", "shrd n")))
    assert mu_safety(g, SHRD, pl("m")) == U32_T
    with pytest.raises(OxideError) as info:
        mu_safety(g, UNIQ, pl("m"))
    assert info.value.code == "E-LOAN-CONFLICT"


def test_mu_safety_unbound():
    with pytest.raises(OxideError) as info:
        mu_safety(env(), SHRD, pl("x"))
    assert info.value.code == "E-UNBOUND"


def test_mu_safety_through_own_reference():
    # writing (*p).1 goes through the loan p holds, so it does not conflict
    g = env(("pt", POINT), ("p", ref(UNIQ, POINT, "uniq pt")), ("*p", POINT), ("(*p).1", U32_T))
    assert mu_safety(g, UNIQ, pl("(*p).1")) == U32_T


# -- copyability -------------------------------------------------------------


def _copy_oracle(t):
    if isinstance(t, RefTy):
        return t.qual is SHRD
    if isinstance(t, TupleTy):
        return all(_copy_oracle(x) for x in t.elems)
    return t in (U32_T, BOOL)


def test_is_copyable_examples():
    assert is_copyable(G, U32_T)
    assert not is_copyable(G, RefTy(ProvVar("r"), UNIQ, U32_T))
    assert is_copyable(G, TupleTy((U32_T, RefTy(ProvVar("r"), SHRD, U32_T))))
    assert not is_copyable(G, Str())
    assert not is_copyable(G, TyVar("T"))
    assert not is_copyable(PG, POINT)


def test_is_copyable_matches_oracle():
    for t in small_types(3):
        assert is_copyable(G, t) == _copy_oracle(t), pretty_type(t)


def test_closure_copyability():
    assert is_copyable(G, FnTy((), (), (U32_T,), U32_T))
    assert not is_copyable(G, FnTy((), (), (U32_T,), U32_T, ((pl("k"), U32_T),)))


# -- unify -------------------------------------------------------------------


def test_unify_examples():
    a, b = ref(SHRD, U32_T, "shrd m"), ref(SHRD, U32_T, "shrd n")
    assert unify(G, a, b) == ref(SHRD, U32_T, "shrd m", "shrd n")
    assert unify(G, U32_T, U32_T) == U32_T
    mixed = unify(G, ref(UNIQ, U32_T, "uniq m"), ref(SHRD, U32_T, "shrd n"))
    assert mixed == ref(SHRD, U32_T, "uniq m", "shrd n")
    with pytest.raises(OxideError) as info:
        unify(G, U32_T, BOOL)
    assert info.value.code == "E-UNIFY"


def test_unify_qualifier_table():
    # brute force over qualifier pairs and loan subsets
    atoms = ["shrd a", "uniq b"]
    subsets = [s for n in range(3) for s in itertools.combinations(atoms, n)]
    for q1, q2 in itertools.product((SHRD, UNIQ), repeat=2):
        for s1, s2 in itertools.product(subsets, repeat=2):
            r = unify(G, ref(q1, U32_T, *s1), ref(q2, U32_T, *s2))
            want_q = q1 if q1 is q2 else SHRD
            assert r == ref(want_q, U32_T, *set(s1) | set(s2))
            assert r == unify(G, ref(q2, U32_T, *s2), ref(q1, U32_T, *s1))


def test_unify_arrays_and_tuples():
    from oxide.ast import ArrayTy
    assert unify_or_none(ArrayTy(U32_T, 2), ArrayTy(U32_T, 3)) is None
    assert unify_or_none(TupleTy((U32_T,)), TupleTy((U32_T, U32_T))) is None


# -- subtype and substitution -------------------------------------------------


def test_subtype_solves_provenance():
    s = subtype(G, ref(UNIQ, U32_T, "uniq pt.0"), RefTy(ProvVar("x"), UNIQ, U32_T))
    assert s == {"x": loans("uniq pt.0")}
    assert subtype(G, U32_T, U32_T) == {}


def test_subtype_positionwise():
    actual = TupleTy((ref(SHRD, U32_T, "shrd a"), ref(SHRD, U32_T, "shrd b")))
    annot = TupleTy((RefTy(ProvVar("p"), SHRD, U32_T), RefTy(ProvVar("q"), SHRD, U32_T)))
    assert subtype(G, actual, annot) == {"p": loans("shrd a"), "q": loans("shrd b")}


def test_subtype_unions_double_constraint():
    actual = TupleTy((ref(SHRD, U32_T, "shrd a"), ref(SHRD, U32_T, "shrd b")))
    annot = TupleTy((RefTy(ProvVar("p"), SHRD, U32_T), RefTy(ProvVar("p"), SHRD, U32_T)))
    assert subtype(G, actual, annot) == {"p": loans("shrd a", "shrd b")}


def test_subtype_rejects_mismatch():
    for a, b in [(U32_T, BOOL), (ref(SHRD, U32_T, "shrd a"), RefTy(ProvVar("p"), UNIQ, U32_T))]:
        with pytest.raises(OxideError) as info:
            subtype(G, a, b)
        assert info.value.code == "E-SUBTYPE"


def test_subtype_reflexive_on_small_types():
    for t in small_types(3):
        if "'" not in pretty_type(t):
            assert subtype(G, t, t) == {}


def test_apply_subst():
    s = {"x": loans("uniq pt.0")}
    assert apply_subst(s, RefTy(ProvVar("x"), UNIQ, U32_T)) == ref(UNIQ, U32_T, "uniq pt.0")
    t = TupleTy((RefTy(ProvVar("x"), UNIQ, U32_T), RefTy(ProvVar("y"), SHRD, BOOL)))
    assert apply_subst({}, t) is t
    assert apply_subst(s, t) == TupleTy(tuple(apply_subst(s, c) for c in t.elems))


# -- environments ------------------------------------------------------------


def test_places_typ():
    assert places_typ(G, pl("m"), TupleTy((Str(),))) == [(pl("m"), TupleTy((Str(),))), (pl("m.0"), Str())]
    r = ref(UNIQ, POINT, "uniq pt")
    assert [str(p) for p, _ in places_typ(PG, pl("p"), r)] == ["p", "*p", "(*p).0", "(*p).1"]
    assert places_typ(G, pl("x"), U32_T) == [(pl("x"), U32_T)]


def test_env_intersect():
    g = env(("m", U32_T), ("n", U32_T))
    assert env_intersect(G, g, g) == g
    a = env(("x", ref(SHRD, U32_T, "shrd m")))
    b = env(("x", ref(SHRD, U32_T, "shrd n")))
    assert env_intersect(G, a, b).lookup(pl("x")) == ref(SHRD, U32_T, "shrd m", "shrd n")
    assert len(env_intersect(G, g, env(("m", U32_T)))) == 1


def test_well_formed_type():
    with pytest.raises(OxideError) as info:
        well_formed_type(G, (), env(("n", U32_T)), ref(SHRD, Str(), "shrd m.0"))
    assert info.value.code == "E-WF" and "does not live long enough" in info.value.message
    well_formed_type(G, (), env(), U32_T)
    a = RefTy(ProvVar("a"), UNIQ, U32_T)
    well_formed_type(G, (("a", Kind.PROV),), env(), a)
    with pytest.raises(OxideError) as info:
        well_formed_type(G, (), env(), a)
    assert info.value.code == "E-WF"


def test_mutually_safe():
    mutually_safe(env(), [ref(UNIQ, U32_T, "uniq pt.0"), ref(UNIQ, U32_T, "uniq pt.1")])
    mutually_safe(env(), [U32_T, BOOL])
    with pytest.raises(OxideError) as info:
        mutually_safe(env(), [ref(UNIQ, POINT, "uniq pt"), ref(SHRD, POINT, "shrd pt")])
    assert info.value.code == "E-LOAN-CONFLICT"


def test_apply_weakening():
    g = env(("pt", POINT), ("x", ref(UNIQ, POINT, "uniq pt")), ("*x", POINT))
    assert apply_weakening(g, [pl("x")], {"y"}).lookup(pl("x")) is None
    assert apply_weakening(g, [pl("x")], {"x"}) == g
    assert apply_weakening(g, [], set()) == g


# -- whole programs ----------------------------------------------------------


def verdict(src):
    g, body = parse_program(src)
    try:
        return check_program(g, body)
    except OxideError as err:
        return err.code


def test_double_move():
    src = "struct Point(u32, u32);\nlet pt: Point = Point(6, 9);\nlet x: Point = pt;\nlet y: Point = pt;\n()"
    assert verdict(src) == "E-MOVED"


def test_disjoint_borrows_solve_provenances():
    src = ("struct Point(u32, u32);\nlet pt: Point = Point(6, 9);\n"
           "let x: &'x uniq u32 = &uniq pt.0;\nlet y: &'y uniq u32 = &uniq pt.1;\n*x")
    out = verdict(src)
    assert out.ty == U32_T
    assert out.solved["x"] == loans("uniq pt.0") and out.solved["y"] == loans("uniq pt.1")


def test_nll_pair():
    head = ("struct Point(u32, u32);\nlet mut pt: Point = Point(6, 9);\n"
            "let x: &'a uniq Point = &uniq pt;\nlet y: &'b uniq Point = &uniq pt;\n")
    assert verdict(head + "(*y).0 = 1;\n()").ty is not None
    assert verdict(head + "(*x).0 = 1;\n(*y).0 = 2;\n()") == "E-LOAN-CONFLICT"


def test_escaping_reference():
    src = "let msg: &'m shrd String = {\n  let m: (String,) = (\"Hello\",);\n  &shrd m.0\n};\n()"
    assert verdict(src) == "E-WF"


def test_branch_disjoint_final_env():
    src = ("let mut m: u32 = 6;\nlet mut n: u32 = 5;\n"
           "if true { let x: &'a uniq u32 = &uniq m; *x = 1; () }"
           " else { let y: &'b uniq u32 = &uniq n; *y = 1; () };\n&uniq m; m")
    out = verdict(src)
    assert out.ty == U32_T and len(out.env_out) == 0


def test_fn_return_mismatch():
    assert verdict("fn f(x: u32) -> bool { x }\n()") == "E-SUBTYPE"
    assert verdict("fn f(x: u32) -> u32 { x }\nf(1)").ty == U32_T


def test_trivial_programs():
    assert verdict("()").ty == parse_program("let x: () = (); x")[1].annot
    assert verdict("let p: Point = Point(1, 2); ()") == "E-UNBOUND"


def test_copy_and_move_env_effects():
    g = env(("x", U32_T), ("s", Str()))
    out = type_check(G, (), g, parse_expr("x"))
    assert out.env_out == g
    out = type_check(G, (), g, parse_expr("s"))
    assert out.env_out.lookup(pl("s")) is None and out.env_out.lookup(pl("x")) == U32_T


def test_type_check_is_deterministic():
    src = ("struct Point(u32, u32);\nlet pt: Point = Point(6, 9);\n"
           "let x: &'x uniq u32 = &uniq pt.0;\n*x")
    a, b = verdict(src), verdict(src)
    assert (a.ty, a.env_out, a.solved) == (b.ty, b.env_out, b.solved)
