import pytest
from hypothesis import given, settings, strategies as st

from lrt import kernel as K
from lrt import logic as L
from lrt import stdlib
from lrt import typesys as T

x, y, nu = L.RVar("x"), L.RVar("y"), L.NU_VAR


def test_sorting():
    assert L.sort_of({L.NU: L.NAT}, L.Add((nu, L.ONE))) == L.NAT
    f = L.RLam((("a", L.NAT),), L.Le(L.RVar("a"), L.RInt(3)))
    assert L.sort_of({}, f) == L.SArrow((L.NAT,), L.BOOL)
    inv = L.RLam((("x1", L.NAT), ("x2", L.NAT)), L.Ite(L.Lt(L.RVar("x2"), L.RVar("x1")), L.ONE, L.ZERO))
    assert L.sort_of({}, inv) == L.SArrow((L.NAT, L.NAT), L.NAT)


def test_ill_sorted_terms_are_rejected():
    with pytest.raises(L.SortError):
        L.sort_of({}, L.Add((L.TRUE, L.ONE)))
    with pytest.raises(L.SortError):
        L.sort_of({}, L.RVar("unbound"))


def test_interpretation_of_atoms():
    dts = stdlib.library_signatures()
    assert L.interpret_atom(K.BoolLit(True), dts) == L.TRUE
    pair = L.interpret_atom(K.PairA(K.Nat(5), K.Triv()), dts)
    assert L.eval_refinement({}, pair) == (5, "⋆")
    assert L.eval_refinement({}, L.interpret_atom(stdlib.list_value([0]), dts)) == 1
    assert L.eval_refinement({}, L.interpret_atom(stdlib.list_value([]), dts)) == 0
    assert L.eval_refinement({}, L.interpret_atom(stdlib.list_value([7, 8, 9]), dts)) == 3


def test_evaluation():
    inc = L.RLam((("a", L.NAT),), L.Add((L.RVar("a"), L.ONE)))
    assert L.eval_refinement({}, L.RApp(inc, (L.RInt(2),))) == 3
    assert L.eval_refinement({}, L.Fst(L.RPair(L.ONE, L.RInt(2)))) == 1
    ite = L.Ite(L.Lt(nu, y), L.ONE, L.ZERO)
    assert L.eval_refinement({"y": 3, L.NU: 1}, ite) == 1


def test_logical_subtraction_is_integer_subtraction():
    # truncation lives in the program-level primitive, encoded with ite
    assert L.eval_refinement({}, L.Sub(L.RInt(2), L.RInt(5))) == -3


def test_validity():
    assert isinstance(L.check_validity(T.Context(), L.TRUE), L.Valid)
    assert isinstance(L.check_validity(T.Context(), L.FALSE), L.Invalid)
    # y:nat, h:nat, b = (y > h), b ⊢ ite(y > h, 1, 0) = 1
    ctx = T.Context((
        T.Bind("y", T.Scalar(T.NatB())), T.Bind("h", T.Scalar(T.NatB())),
        T.Bind("b", T.Scalar(T.BoolB(), L.Eq(nu, L.Lt(L.RVar("h"), L.RVar("y"))))),
        T.PathEntry(L.RVar("b")),
    ))
    goal = L.Eq(L.Ite(L.Lt(L.RVar("h"), L.RVar("y")), L.ONE, L.ZERO), L.ONE)
    assert isinstance(L.check_validity(ctx, goal), L.Valid)


def test_invalid_query_reports_counterexample():
    q = L.Query((("x", L.NAT),), (), L.Le(x, L.RInt(3)))
    r = L.decide(q)
    assert isinstance(r, L.Invalid) and r.counterexample["x"] > 3


def test_unknowns_are_evaluated_under_a_valuation():
    u = L.Unknown("u", (x,))
    val = {"u": L.RLam((("x", L.NAT),), L.Add((x, x)))}
    assert L.eval_refinement({"x": 4}, u, val) == 8


_nats = st.integers(0, 30)


@settings(max_examples=200, deadline=None)
@given(_nats, _nats, _nats)
def test_simplify_preserves_meaning(a, b, c):
    t = L.Add((L.Sub(L.Add((x, L.RInt(c))), L.RInt(c)), L.Ite(L.Lt(x, y), y, L.ZERO)))
    env = {"x": a, "y": b}
    assert L.eval_refinement(env, L.simplify(t)) == L.eval_refinement(env, t)


@settings(max_examples=200, deadline=None)
@given(_nats, _nats)
def test_substitution_then_evaluation_commutes(a, b):
    t = L.Add((x, L.Ite(L.Lt(x, y), L.ONE, L.ZERO)))
    sub = L.substitute(t, {"x": L.RInt(a)})
    assert L.eval_refinement({"y": b}, sub) == L.eval_refinement({"x": a, "y": b}, t)


def test_linear_forms():
    coeffs, const = L.linear_form(L.Add((x, x, L.RInt(3), L.Sub(y, L.ONE))))
    assert coeffs == {x: 2, y: 1} and const == 2


def test_smtlib_rendering():
    assert L.to_smtlib(L.Le(L.ZERO, L.Add((x, L.ONE)))) == "(<= 0 (+ x 1))"
