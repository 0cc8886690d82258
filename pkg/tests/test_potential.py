from math import comb

import pytest

from hypothesis import given, settings, strategies as st

from lrt import logic as L
from lrt import potential as P
from lrt import stdlib
from lrt import surface as S
from lrt import typesys as T

DTS = stdlib.library_signatures()
Y = L.RVar("y")


def _val(t, env=None):
    return L.eval_refinement(env or {}, t)


def test_vector_shift():
    sig = P.numeric_vector_list(2)
    (child,) = P.shift_children(sig, "VListCons", L.RInt(0), (L.RInt(2), L.RInt(3)))
    assert [_val(t) for t in child] == [5, 3]


def test_dependent_shift_and_extract():
    sig = P.dependent_nat_list()
    t1 = L.RLam((("x", L.NAT),), L.RVar("x"))
    t2 = L.RLam((("x1", L.NAT), ("x2", L.NAT)), L.Ite(L.Lt(L.RVar("x2"), L.RVar("x1")), L.ONE, L.ZERO))
    (child,) = P.shift_children(sig, "DListCons", L.RInt(4), (t1, t2))
    first, second = child
    # first' = λx. t1(x) + t2(4, x)
    assert _val(L.RApp(first, (L.RInt(2),))) == 2 + 1
    assert _val(L.RApp(first, (L.RInt(9),))) == 9
    assert L.beta(second) == t2
    assert _val(P.extract_constructor_potential(sig, "DListCons", L.RInt(4), (t1, t2))) == 4
    assert _val(P.extract_constructor_potential(sig, "DListNil", L.RStar(), (t1, t2))) == 0


def test_unannotated_constructor_defaults():
    prog = stdlib.S.parse_program("data Box where\n  Empty :: Box\n  Full :: x:Nat -> b:Box -> Box\n")
    sig = stdlib.S.elaborate_datatypes(prog.datatypes, prog.measures)["Box"]
    assert _val(P.extract_constructor_potential(sig, "Full", L.RInt(3), ())) == 0
    assert P.shift_children(sig, "Full", L.RInt(3), ()) == [()]


def test_polymorphic_list_carries_element_potential_in_content():
    lst = DTS["List"]
    q = L.RLam((("x1", L.NAT), ("x2", L.NAT)), L.ONE)
    assert _val(P.extract_constructor_potential(lst, "Cons", Y, (q,))) == 0


def test_selected_tree_path():
    tree = DTS["PTree"]
    p = L.RLam((("x1", L.NAT),), L.Lt(L.RInt(3), L.RVar("x1")))
    left, right = P.shift_children(tree, "PNode", L.RInt(5), (p, L.RInt(2)))
    assert _val(left[1]) == 2 and _val(right[1]) == 0


def test_potential_examples():
    lst = stdlib.instance_type("List Nat <\\x1 x2. 7>")
    assert P.potential_of_value(stdlib.list_value([]), lst, DTS) == 0
    vec = P.numeric_vector_list(2)
    ty = T.Scalar(T.DataB("VList", None, (L.ONE, L.ONE)))
    assert P.potential_of_value(P.nat_list_value(vec, [4, 5, 6]), ty, DTS | {"VList": vec}) == 6
    inv = stdlib.instance_type("List Nat <\\x1 x2. ite(x1 > x2, 1, 0)>")
    assert P.potential_of_value(stdlib.list_value([2, 1]), inv, DTS) == 1
    assert P.potential_of_value(stdlib.elist_value([0, 0, 0]), stdlib.instance_type("EList Nat <2>"), DTS) == 14
    assert P.potential_of_value(stdlib.ltree_value([1, 2, 3, 4]), stdlib.instance_type("LTree Nat <1>"), DTS) == 8
    assert P.potential_of_value(stdlib.bst_value([]), stdlib.instance_type("PTree Nat <\\x1. 0 < x1, 1>"), DTS) == 0


def test_top_level_potential_is_added():
    ty = stdlib.instance_type("{Nat | ν > 0}^{ν + 1}")
    assert P.potential_of_value(stdlib.to_value(4), ty, DTS) == 5


def test_closed_form_rejects_unbalanced_trees():
    try:
        P.closed_form_potential("LTree", {"n": 3, "q": 1})
    except P.UnsupportedShape:
        return
    raise AssertionError("expected UnsupportedShape")


_lists = st.lists(st.integers(0, 12), max_size=10)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=4), _lists)
def test_vector_potential_is_a_binomial_sum(qs, xs):
    sig = P.numeric_vector_list(len(qs))
    ty = T.Scalar(T.DataB("VList", None, tuple(L.RInt(q) for q in qs)))
    got = P.potential_of_value(P.nat_list_value(sig, xs), ty, {"VList": sig})
    assert got == sum(q * comb(len(xs), i + 1) for i, q in enumerate(qs))
    assert got == P.closed_form_potential("NumVec", {"n": len(xs), "qs": qs})


_unary = [(L.RLam((("x", L.NAT),), body), fn) for body, fn in (
    (L.ZERO, lambda a: 0), (L.RVar("x"), lambda a: a),
    (L.Ite(L.Lt(L.RInt(5), L.RVar("x")), L.RInt(2), L.ZERO), lambda a: 2 * (a > 5)),
)]
_binary = [(L.RLam((("x1", L.NAT), ("x2", L.NAT)), body), fn) for body, fn in (
    (L.ONE, lambda a, b: 1),
    (L.Ite(L.Lt(L.RVar("x2"), L.RVar("x1")), L.ONE, L.ZERO), lambda a, b: int(a > b)),
    (L.Add((L.RVar("x1"), L.RVar("x2"))), lambda a, b: a + b),
)]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(_unary), st.sampled_from(_binary), _lists)
def test_dependent_potential_is_a_double_sum(first, second, xs):
    sig = P.dependent_nat_list()
    ty = T.Scalar(T.DataB("DList", None, (first[0], second[0])))
    got = P.potential_of_value(P.nat_list_value(sig, xs), ty, {"DList": sig})
    want = P.closed_form_potential("DepList", {"elements": xs, "first": first[1], "second": second[1]})
    assert got == want


@settings(max_examples=100, deadline=None)
@given(_lists, st.integers(0, 3))
def test_quadratic_list_matches_its_polynomial(xs, p):
    ty = stdlib.instance_type(f"List Nat^{p} <\\x1 x2. 1>")
    n = len(xs)
    assert 2 * P.potential_of_value(stdlib.list_value(xs), ty, DTS) == n * (n + 2 * p - 1)


@settings(max_examples=100, deadline=None)
@given(_lists, st.integers(0, 3))
def test_constructor_decomposition(xs, p):
    ty = stdlib.instance_type(f"List Nat^{p} <\\x1 x2. ite(x1 > x2, 2, 0)>")
    v = stdlib.list_value(xs)
    if xs:
        assert P.constructor_sum_holds(DTS["List"], v, ty.base, DTS)


def test_library_validation():
    rep = stdlib.validate_library(instances=60, seed=3)
    assert rep.ok, rep.mismatches[:3]
    assert set(rep.checked) == {"List", "EList", "LTree", "PTree", "index consistency"}


def test_library_types_are_index_consistent():
    for sig in stdlib.library_signatures().values():
        assert P.index_consistency(sig) == ()
    assert P.index_consistency(P.numeric_vector_list(3)) == ()
    assert P.index_consistency(P.dependent_nat_list()) == ()


_COUNTED = """data Counted <q :: Nat> where
  CNil :: Counted <q>
  CCons :: x:Nat -> xs:Counted <{shift}> -> Counted <q>
"""


def test_non_monotone_shift_is_rejected():
    with pytest.raises(S.InconsistentDatatype, match="subtyping"):
        stdlib.load(_COUNTED.format(shift="ite(q > 0, 0, 1)"), "counted.lrt")


def test_non_additive_shift_is_flagged():
    with pytest.warns(UserWarning, match="not additive"):
        module = stdlib.load(_COUNTED.format(shift="q + 1"))
    kinds = {p[0] for p in P.index_consistency(module.datatypes["Counted"])}
    assert kinds == {"sharing"}
    assert P.index_consistency(stdlib.load(_COUNTED.format(shift="2 * q")).datatypes["Counted"]) == ()
