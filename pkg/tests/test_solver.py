import pytest
from hypothesis import given, settings, strategies as st

from lrt import checker as C
from lrt import logic as L
from lrt import solver as V
from lrt import stdlib

from golden import u

ONE, ZERO = L.ONE, L.ZERO


def ground(*formulas):
    names = set().union(*(L.unknowns_of(f) for f in formulas))
    decls = {n: L.UnknownDecl(n, ()) for n in names}
    return V.CLIASystem(decls, [V.Constraint((), (), f) for f in formulas])


def value(res, name):
    return L.simplify(res.valuation[name].body)


def test_ground_system_is_solved_with_integers():
    sys_ = ground(L.Eq(ONE, L.Add((u("p1"), u("p2")))), L.Le(ZERO, L.Sub(u("p2"), ONE)))
    res = V.solve(sys_)
    assert res.sat
    assert value(res, "p1") == ZERO and value(res, "p2") == ONE


def test_pigeonhole_is_unsat_with_a_core():
    sys_ = ground(
        L.Eq(ONE, L.Add((u("p1"), u("p2")))),
        L.Le(ONE, u("p1")),
        L.Le(ONE, u("p2")),
    )
    res = V.solve(sys_)
    assert res.status == "unsat"
    assert res.reason == "infeasible"


def test_unknowns_are_nonnegative():
    res = V.solve(ground(L.Le(u("a"), ZERO)))
    assert res.sat and value(res, "a") == ZERO


def test_empty_system_is_trivially_sat():
    sys_ = V.CLIASystem({"k": L.UnknownDecl("k", ())}, [])
    res = V.solve(sys_)
    assert res.sat and value(res, "k") == ZERO


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 6), st.integers(0, 6))
def test_ground_sum_constraints_match_arithmetic(total, lower):
    sys_ = ground(L.Eq(L.RInt(total), L.Add((u("a"), u("b")))), L.Le(L.RInt(lower), u("a")))
    res = V.solve(sys_)
    assert res.sat == (lower <= total)
    if res.sat:
        a, b = (value(res, n).value for n in ("a", "b"))
        assert a + b == total and a >= lower


def test_cegis_synthesizes_the_fine_sort_annotations(fine_sort):
    cs = C.check_binding(fine_sort, "sort")
    res = V.solve_constraints(cs)
    assert res.sat and res.iterations > 1
    assert V.reverify(cs, res.valuation, 16) == []
    nu, hd = L.NU_VAR, L.RVar("hd")
    env = {"hd": 5, "ν": 2}
    q = res.valuation
    [tail] = [o for o in cs.nontrivial() if o.label.endswith("tl elements")]
    # the recursive share receives at least the extra unit behind hd
    rec = next(n for n in L.unknowns_of(tail.formula)
               if any(n in L.unknowns_of(o.formula) for o in cs.nontrivial() if o.rule == "Sub-Dtype-Pot"
                      and "argument xs of sort" in o.label))
    app = L.Unknown(rec, tuple(L.RVar(p) for p, _ in q[rec].params))
    assert L.eval_refinement(env, app, q) >= 2
    assert L.eval_refinement({"hd": 1, "ν": 2}, app, q) >= 1
    assert L.eval_refinement(env, L.Ite(L.Lt(nu, hd), ONE, ZERO)) == 1


def test_reverify_flags_a_wrong_valuation(insert_sort):
    cs = C.check_binding(insert_sort, "insert")
    zero = {n: L.RLam((), ZERO) for n in cs.unknowns}
    assert V.reverify(cs, zero, 8)


def test_smtlib_ground_header(insert_sort):
    system = V.normalize_constraints(C.check_binding(insert_sort, "insert"))
    text = V.emit_smtlib(system)
    lines = text.splitlines()
    assert lines[0] == "(set-logic LIA)"
    assert sum(l.startswith("(declare-const") for l in lines) == 4
    assert lines[-1] == "(check-sat)"


def test_function_unknowns_need_a_valuation(fine_sort):
    system = V.normalize_constraints(C.check_binding(fine_sort, "sort"))
    with pytest.raises(V.SecondOrderUnencodable):
        V.emit_smtlib(system)


try:
    import z3
except ImportError:
    z3 = None

needs_z3 = pytest.mark.skipif(z3 is None, reason="z3-solver not installed")


def _z3_status(text):
    s = z3.Solver()
    s.from_string(text)
    return s.check()


@needs_z3
def test_z3_agrees_on_ground_systems(insert_sort):
    system = V.normalize_constraints(C.check_binding(insert_sort, "insert"))
    assert _z3_status(V.emit_smtlib(system)) == z3.sat
    pig = ground(L.Eq(ONE, L.Add((u("p1"), u("p2")))), L.Le(ONE, u("p1")), L.Le(ONE, u("p2")))
    assert _z3_status(V.emit_smtlib(pig)) == z3.unsat


@needs_z3
def test_z3_confirms_the_synthesized_fine_valuation(fine_sort):
    cs = C.check_binding(fine_sort, "sort")
    res = V.solve_constraints(cs)
    # with the valuation inlined, every universally closed assertion holds
    system = V.normalize_constraints(cs)
    text = V.emit_smtlib(system, res.valuation)
    assert _z3_status(text) == z3.sat


def test_solver_timeout_reports_unknown(fine_sort):
    cs = C.check_binding(fine_sort, "sort")
    res = V.solve_constraints(cs, V.SolverConfig(max_iterations=1))
    assert res.status == "unknown"


def test_uninterpreted_applications_are_rejected():
    with pytest.raises(V.NonLinear):
        V._check_linear(L.Le(L.RApp(L.RVar("f"), (ONE,)), ONE))
