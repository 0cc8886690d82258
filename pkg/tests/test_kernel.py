import pytest
from hypothesis import given, settings, strategies as st

from lrt import kernel as K
from lrt import stdlib

from traces import terms

TRIV = K.Triv()


def test_tick_consumes_budget():
    s = K.step(K.MachineState(K.Tick(2, K.Nat(0)), 5))
    assert s == K.MachineState(K.Nat(0), 3)


def test_conditional_leaves_budget_alone():
    s = K.step(K.MachineState(K.Cond(K.BoolLit(True), K.Nat(1), K.Nat(2)), 4))
    assert s == K.MachineState(K.Nat(1), 4)


def test_tick_beyond_budget_is_refused():
    with pytest.raises(K.InsufficientResources):
        K.step(K.MachineState(K.Tick(3, K.Nat(0)), 2))


def test_evaluate_outcomes():
    assert K.evaluate(K.Tick(1, K.Tick(1, TRIV)), 2, 100) == K.Finished(TRIV, 0, 2)
    assert isinstance(K.evaluate(K.Tick(1, TRIV), 0, 100), K.ResourceExhausted)
    out = K.evaluate(K.Tick(-2, K.Tick(1, TRIV)), 0, 100)
    assert isinstance(out, K.Finished) and out.leftover == 1


def test_fuel_is_reported():
    loop = K.Fix("f", "x", K.App(K.Var("f"), K.Var("x")))
    assert isinstance(K.evaluate(K.App(loop, TRIV), 0, 50), K.FuelExhausted)


def test_impossible_is_stuck():
    assert isinstance(K.evaluate(K.Impossible(), 0, 10), K.Stuck)


def test_high_water_mark_examples():
    assert K.high_water_mark(K.Tick(2, K.Tick(-1, K.Tick(1, TRIV)))) == 2
    assert K.high_water_mark(TRIV) == 0


def test_reverse_sorted_insertion_sort_needs_six():
    module = stdlib.load(stdlib.CASES[3].source)
    e = stdlib.applied(module, "sort", (stdlib.list_value([3, 2, 1]),))
    assert K.high_water_mark(e) == 6
    out = K.evaluate(e, 6)
    assert isinstance(out, K.Finished) and stdlib.from_value(out.value) == [1, 2, 3]


def test_substitution():
    five = K.Nat(5)
    assert K.substitute_value(five, "x", K.Var("x")) == five
    assert K.substitute_value(five, "x", K.Lam("y", K.Var("x"))) == K.Lam("y", five)
    assert K.substitute_value(five, "x", K.Lam("x", K.Var("x"))) == K.Lam("x", K.Var("x"))


def test_fix_application_unrolls_once():
    fx = K.Fix("f", "x", K.Cond(K.Var("x"), K.Nat(1), K.App(K.Var("f"), K.BoolLit(True))))
    s = K.step(K.MachineState(K.App(fx, K.BoolLit(False)), 0))
    assert s.expr == K.Cond(K.BoolLit(False), K.Nat(1), K.App(fx, K.BoolLit(True)))


def test_cost_overflow_is_an_error():
    with pytest.raises(K.CostOverflow):
        K.step(K.MachineState(K.Tick(K.COST_LIMIT + 1, TRIV), 0))


def _trace(e, q, limit=200):
    states = [K.MachineState(e, q)]
    while len(states) < limit and not K.is_value(states[-1].expr):
        try:
            states.append(K.step(states[-1]))
        except K.InsufficientResources:
            break
    return states


@settings(max_examples=300, deadline=None)
@given(terms(), st.integers(0, 20))
def test_budget_never_negative(e, q):
    assert all(s.q >= 0 for s in _trace(e, q))


@settings(max_examples=300, deadline=None)
@given(terms(), st.integers(0, 10), st.integers(0, 10))
def test_net_cost_is_independent_of_budget(e, extra1, extra2):
    need = K.high_water_mark(e)
    t1, t2 = _trace(e, need + extra1), _trace(e, need + extra2)
    assert len(t1) == len(t2)
    for a, b in zip(t1, t2):
        assert a.expr == b.expr
        assert t1[0].q - a.q == t2[0].q - b.q


@settings(max_examples=300, deadline=None)
@given(terms(), st.integers(0, 10), st.integers(0, 10))
def test_extra_budget_carries_through_a_step(e, q, c):
    try:
        s = K.step(K.MachineState(e, q))
    except K.InsufficientResources:
        return
    if s is None:
        return
    assert K.step(K.MachineState(e, q + c)) == K.MachineState(s.expr, s.q + c)


@settings(max_examples=300, deadline=None)
@given(terms(), st.integers(0, 10))
def test_stepping_is_deterministic(e, q):
    assert _trace(e, q) == _trace(e, q)


@settings(max_examples=300, deadline=None)
@given(terms())
def test_high_water_mark_is_tight(e):
    hwm = K.high_water_mark(e)
    assert isinstance(K.evaluate(e, hwm), K.Finished)
    if hwm > 0:
        assert isinstance(K.evaluate(e, hwm - 1), K.ResourceExhausted)
