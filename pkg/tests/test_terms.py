from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from crashscope.terms import (
    BOTTOM, ROOT, STAR, WILDCARD, Arrow, Base, Nonterminal, Position, PositionError, RankedAlphabet,
    Sym, TREE, Var, arity, canonical_vars, check_arities, depth, free_vars, from_peano, ground_terms,
    order, parse_term, paths_to, peano, plist, positions, render, render_applicative, rename_vars,
    replace_at, subterm_at, substitute, substitute_many, unifiable, unify,
)

P = Position.parse


def t(text, *variables):
    return parse_term(text, variables)


# ---------------------------------------------------------------- types

def test_order_and_arity_of_base_and_first_order():
    assert order(TREE) == 0 and arity(TREE) == 0
    ty = Arrow(TREE, Arrow(TREE, TREE))
    assert order(ty) == 1 and arity(ty) == 2
    assert order(Arrow(Arrow(TREE, TREE), TREE)) == 2


simple_types = st.recursive(st.just(TREE), lambda inner: st.builds(Arrow, inner, inner), max_leaves=12)


def _order_oracle(ty):
    if isinstance(ty, Base):
        return 0
    return max(_order_oracle(ty.domain) + 1, _order_oracle(ty.codomain))


def _arity_oracle(ty):
    n = 0
    while isinstance(ty, Arrow):
        n, ty = n + 1, ty.codomain
    return n


@given(simple_types)
def test_order_and_arity_match_structural_recursion(ty):
    assert order(ty) == _order_oracle(ty)
    assert arity(ty) == _arity_oracle(ty)


def test_alphabet_terminal_check():
    sigma = RankedAlphabet.from_arities({"zero": 0, "succ": 1, "pair": 2})
    assert sigma.is_terminal()
    assert sigma.arity("pair") == 2
    assert not RankedAlphabet({"h": Arrow(Arrow(TREE, TREE), TREE)}).is_terminal()


# ---------------------------------------------------------------- positions

def test_positions_examples():
    assert positions(Var("x")) == {ROOT}
    assert positions(Sym("zero")) == {ROOT}
    assert positions(t("pair(succ(x), zero)", "x")) == {ROOT, P("pair.1"), P("pair.1.succ.1"), P("pair.2")}


def test_positions_rejects_nonterminals():
    with pytest.raises(TypeError):
        positions(Nonterminal("F", (Var("x"),)))


def test_subterm_at_examples():
    a = t("pair(succ(x), zero)", "x")
    assert subterm_at(a, ROOT) == a
    assert subterm_at(a, P("pair.1")) == t("succ(x)", "x")
    with pytest.raises(PositionError):
        subterm_at(a, P("pair.2.succ.1"))


def test_paths_to_examples():
    assert paths_to(t("pair(m, n)", "m", "n"), "m") == {P("pair.1")}
    assert paths_to(Var("x"), "x") == {ROOT}
    assert paths_to(t("cons(x, x)", "x"), "x") == {P("cons.1"), P("cons.2")}
    assert paths_to(Sym("zero"), "x") == set()


def test_position_text_and_order():
    p = P("pair.1.succ.1")
    assert str(p) == "pair.1.succ.1" and str(ROOT) == "ε"
    assert P("ε") == ROOT
    assert P("pair.1") <= p and not p <= P("pair.1")
    assert p.erase() == (1, 1)
    assert P("succ.1").is_suffix_of(p)
    assert p.strip_suffix(P("succ.1")) == P("pair.1")
    assert p.strip_prefix(P("pair.1")) == P("succ.1")


# ---------------------------------------------------------------- substitution

def test_substitute_examples():
    assert substitute(Nonterminal("F", (Var("x"),)), "x", Sym("zero")) == Nonterminal("F", (Sym("zero"),))
    assert substitute(t("succ(y)", "y"), "x", Sym("zero")) == t("succ(y)", "y")
    assert substitute(t("pair(x, succ(x))", "x"), "x", Sym("nil")) == t("pair(nil, succ(nil))")


def test_free_vars_examples():
    assert free_vars(Sym("zero")) == set()
    assert free_vars(t("pair(x, succ(y))", "x", "y")) == {"x", "y"}
    assert free_vars(Var("x")) == {"x"}


# ---------------------------------------------------------------- unification

def test_unifiable_examples():
    assert unifiable(t("pair(zero, x)", "x"), t("pair(y, succ(z))", "y", "z"))
    assert not unifiable(Sym("zero"), t("succ(x)", "x"))
    assert unifiable(WILDCARD, t("pair(zero, zero)"))
    assert unifiable(STAR, t("pair(zero, zero)"))
    assert unifiable(BOTTOM, Sym("zero"))


def test_unify_occurs_check_and_shared_variables():
    assert unify(Var("x"), t("succ(x)", "x")) is None
    assert not unifiable(t("pair(x, x)", "x"), t("pair(zero, succ(zero))"))
    assert unifiable(t("pair(x, x)", "x"), t("pair(zero, zero)"))


# ---------------------------------------------------------------- hypothesis strategies

ARITIES = {"zero": 0, "nil": 0, "succ": 1, "pair": 2}
VARS = ["x", "y", "z"]


def terms(with_vars=True, max_leaves=10):
    leaves = [st.sampled_from([Sym("zero"), Sym("nil")])]
    if with_vars:
        leaves.append(st.sampled_from([Var(v) for v in VARS]))
    base = st.one_of(*leaves)

    def extend(inner):
        return st.one_of(
            st.builds(lambda a: Sym("succ", (a,)), inner),
            st.builds(lambda a, b: Sym("pair", (a, b)), inner, inner),
        )

    return st.recursive(base, extend, max_leaves=max_leaves)


def _linear(term):
    return all(len(paths_to(term, v)) <= 1 for v in free_vars(term))


@given(terms())
def test_positions_are_prefix_closed(a):
    ps = positions(a)
    for q in ps:
        for k in range(len(q.steps) + 1):
            assert Position(q.steps[:k]) in ps


@given(terms())
def test_subterm_positions_rebase(a):
    ps = positions(a)
    for p in ps:
        sub = subterm_at(a, p)
        assert {p + q for q in positions(sub)} == {q for q in ps if p <= q}


@given(terms(), st.sampled_from(VARS))
def test_substitute_identity(a, x):
    assert substitute(a, x, Var(x)) == a


@given(terms(), st.sampled_from(VARS), terms(with_vars=False))
def test_substitute_removes_variable(a, x, ground):
    assert x not in free_vars(substitute(a, x, ground))


@given(terms(), terms())
def test_unifiable_symmetric_and_reflexive(a, b):
    assert unifiable(a, a)
    assert unifiable(a, b) == unifiable(b, a)


@given(terms(), terms())
def test_unifier_makes_terms_equal(a, b):
    s = unify(a, b)
    if s is not None:
        def apply(u):
            for _ in range(len(s) + 1):
                u = substitute_many(u, s)
            return u
        assert apply(a) == apply(b)


@given(terms(), st.data())
def test_replace_then_read_back(a, data):
    p = data.draw(st.sampled_from(sorted(positions(a), key=lambda q: q.steps)))
    assert subterm_at(replace_at(a, p, Sym("nil")), p) == Sym("nil")


@given(terms())
def test_render_parse_roundtrip(a):
    assert parse_term(render(a), VARS) == a


@given(terms())
def test_canonical_vars_idempotent(a):
    c = canonical_vars(a)
    assert canonical_vars(c) == c
    assert canonical_vars(rename_vars(a, "'")) == c


# ---------------------------------------------------------------- helpers

def test_peano_and_lists():
    assert render(peano(2)) == "succ(succ(zero))"
    assert from_peano(peano(7)) == 7
    assert from_peano(Sym("nil")) is None
    assert render(plist([Sym("zero")])) == "cons(zero, nil)"


def test_applicative_rendering():
    assert render_applicative(t("succ(Length(xs))", "xs")) == "succ (Length xs)"
    assert render_applicative(t("pair(x, succ(zero))", "x")) == "pair x (succ zero)"


def test_parse_term_wildcards_and_nonterminals():
    assert parse_term("pair(?, *)") == Sym("pair", (WILDCARD, STAR))
    assert parse_term("Ack(pair(zero, zero))") == Nonterminal("Ack", (t("pair(zero, zero)"),))
    with pytest.raises(ValueError):
        parse_term("pair(zero")


def test_check_arities():
    sigma = RankedAlphabet.from_arities(ARITIES)
    assert check_arities(t("pair(zero, nil)"), sigma) == []
    assert len(check_arities(Sym("succ"), sigma)) == 1


def _count_oracle(arities, d):
    """Terms of depth <= d counted by the recurrence N(d) = sum_c N(d-1)^arity(c)."""
    n = 0
    for _ in range(d):
        n = sum(n ** k for k in arities.values())
    return n


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_ground_term_enumeration_is_complete(d):
    arities = {"zero": 0, "succ": 1, "pair": 2}
    found = ground_terms(arities, d)
    assert len(found) == len(set(found)) == _count_oracle(arities, d)
    assert all(depth(u) <= d for u in found)


def test_ground_term_counts_frozen():
    # N(d) = 1 + N + N^2 over {zero, succ, pair}
    assert [len(ground_terms({"zero": 0, "succ": 1, "pair": 2}, d)) for d in range(1, 5)] == [1, 3, 13, 183]
