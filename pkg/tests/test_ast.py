import itertools

from hypothesis import given, strategies as st

from oxide.ast import (
    DEREF, SHRD, U32_T, UNIQ, Concrete, Loan, Place, Proj, RefTy, TupleTy, env_of, overlaps, prefix_of, pretty,
)


def P(root, *path):
    elems = tuple(DEREF if p == "*" else Proj(p) for p in path)
    return Place(root, elems)


def test_overlaps_examples():
    assert not overlaps(P("pt", 0), P("pt", 1))
    assert overlaps(P("pt"), P("pt", 0))
    assert not overlaps(P("x"), P("y"))


def test_prefix_examples():
    assert prefix_of(P("pt"), P("pt", 0))
    assert not prefix_of(P("pt", 0), P("pt"))
    assert not prefix_of(P("p", 0), P("p", "*", 0))
    assert prefix_of(P("p", "*"), P("p", "*", 0))


ELEMS = [0, 1, "*"]
ALL = [P(r, *path) for r in ("a", "b") for n in range(4) for path in itertools.product(ELEMS, repeat=n)]


def _prefix_oracle(p, q):
    # a place prefixes another iff some number of trailing steps can be
    # stripped from q to reach p
    steps = list(q.path)
    while True:
        if p.root == q.root and tuple(steps) == p.path:
            return True
        if not steps:
            return False
        steps.pop()


def test_prefix_table_matches_oracle():
    for p, q in itertools.product(ALL, repeat=2):
        assert prefix_of(p, q) == _prefix_oracle(p, q), (p, q)


def test_prefix_is_partial_order():
    for p in ALL:
        assert prefix_of(p, p)
    for p, q in itertools.product(ALL, repeat=2):
        if prefix_of(p, q) and prefix_of(q, p):
            assert p == q
    sample = ALL[::7]
    for p, q, r in itertools.product(sample, repeat=3):
        if prefix_of(p, q) and prefix_of(q, r):
            assert prefix_of(p, r)


places = st.builds(lambda r, path: P(r, *path), st.sampled_from("ab"), st.lists(st.sampled_from(ELEMS), max_size=5))


@given(places, places)
def test_overlaps_is_prefix_either_way(p, q):
    assert overlaps(p, q) == (prefix_of(p, q) or prefix_of(q, p))
    assert overlaps(p, q) == overlaps(q, p)


def test_pretty():
    assert pretty(RefTy(Concrete([Loan(UNIQ, P("pt", 0))]), UNIQ, U32_T)) == "&{uniq pt.0} uniq u32"
    assert pretty(P("pt", 0)) == "pt.0"
    assert pretty(TupleTy((U32_T, U32_T))) == "(u32, u32)"
    assert pretty(P("p", "*", 1)) == "(*p).1"


def test_concrete_is_a_set():
    a, b = Loan(SHRD, P("m")), Loan(SHRD, P("n"))
    assert Concrete([a, b]) == Concrete([b, a, b])
    assert pretty(Concrete([b, a])) == "{shrd m, shrd n}"


def test_env_shadowing_and_removal():
    x = P("x")
    env = env_of([(x, U32_T)], gen=0)
    assert env.lookup(x) == U32_T
    inner = RefTy(Concrete(), SHRD, U32_T)
    env2 = env.extend([(x, inner)], 1)
    assert env2.lookup(x) == inner
    assert env2.remove_group("x").lookup(x) == U32_T
    assert env2.remove_group("x").remove_group("x").lookup(x) is None
