import pytest

from lrt import checker as C
from lrt import kernel as K
from lrt import logic as L
from lrt import solver as V
from lrt import stdlib
from lrt import surface as S
from lrt import typesys as T

from golden import equal_up_to_renaming, u

ONE, ZERO, NU, HD = L.ONE, L.ZERO, L.NU_VAR, L.RVar("hd")


def conclusions(cs, skip_theta=False):
    return [o.formula for o in cs.nontrivial() if not (skip_theta and "θ" in o.label)]


def test_insert_system_is_the_four_constraint_golden(insert_sort):
    cs = C.check_binding(insert_sort, "insert")
    expected = [
        L.Eq(ONE, L.Add((u("p1"), u("p2")))),
        L.Eq(ONE, L.Add((u("q1"), u("q2")))),
        L.Le(ZERO, L.Sub(u("p2"), ONE)),
        L.Le(ONE, u("q2")),
    ]
    assert equal_up_to_renaming(conclusions(cs), expected)
    assert len(cs.referenced_unknowns()) == 4
    assert all(not d.params for d in cs.unknowns.values())


def test_coarse_sort_system_contains_the_pass_through_constraints(insert_sort):
    cs = C.check_binding(insert_sort, "sort")
    expected = [
        L.Eq(ONE, L.Add((u("p1"), u("p2")))),
        L.Le(ZERO, L.Sub(u("p2"), ONE)),
        L.Eq(L.RInt(2), L.Add((u("q1"), u("q2")))),
        L.Le(L.Add((u("s"), ONE)), u("q2")),
        L.Le(ONE, u("s")),
    ]
    assert equal_up_to_renaming(conclusions(cs, skip_theta=True), expected)
    res = V.solve_constraints(cs)
    assert res.sat


def test_fine_sort_yields_the_five_labeled_obligations(fine_sort):
    cs = C.check_binding(fine_sort, "sort")
    assert cs.dependent
    behind = L.Ite(L.Lt(NU, HD), ONE, ZERO)
    expected = [
        L.Eq(ONE, L.Add((u("p1"), u("p2")))),
        L.Le(ZERO, L.Sub(u("p2"), ONE)),
        L.Eq(L.Add((behind, ONE)), L.Add((u("q1"), u("q2")))),
        L.Le(L.Add((u("s"), ONE)), u("q2")),
        L.Le(behind, u("s")),
    ]
    assert equal_up_to_renaming(conclusions(cs, skip_theta=True), expected, drop_args=True)
    labels = {o.rule.split("-")[0] + ":" + o.label.split(":")[-1].strip() for o in cs.nontrivial()}
    assert {"Share:hd", "T:tick 1 from hd", "Share:tl elements"} <= labels


def test_fine_insert_unknowns_range_over_scope(fine_sort):
    cs = C.check_binding(fine_sort, "insert")
    params = {tuple(p for p, _ in d.params) for d in cs.unknowns.values()}
    assert ("x", "hd", "ν") in params


def test_matching_shifts_the_tail_annotation(fine_sort):
    cs = C.check_binding(fine_sort, "sort")
    (share_tl,) = [o for o in cs.nontrivial() if o.label.endswith("tl elements")]
    assert L.show(share_tl.formula.lhs) == "ite(ν < hd, 1, 0) + 1"


def test_every_obligation_has_provenance(fine_sort):
    for name in ("insert", "sort"):
        for o in C.check_binding(fine_sort, name).obligations:
            assert o.rule and o.span is not None


def test_negative_controls_fail():
    for _, file, entry in stdlib.NEGATIVE_CONTROLS:
        module = stdlib.load(stdlib.control_source(file), file)
        res = V.solve_constraints(C.check_binding(module, entry))
        assert res.status in ("unsat", "unknown") and not res.valuation


def test_linear_sort_failure_cites_the_recursive_call():
    module = stdlib.load(stdlib.control_source("sort_linear.lrt"))
    res = V.solve_constraints(C.check_binding(module, "sort"))
    assert any("argument xs of sort" in w for w in res.witness)


def test_standard_merge_sort_is_rejected():
    from conftest import PROGRAMS

    module = stdlib.load((PROGRAMS / "merge_sort_standard.lrt").read_text())
    res = V.solve_constraints(C.check_binding(module, "msort"))
    assert not res.sat


def test_impossible_branch_is_a_falsity_check():
    src = "f :: xs:{List a | ν > 0} -> Nat\nf = \\xs. match xs with\n  Nil -> impossible\n  Cons y ys -> 0\n"
    cs = C.check_binding(stdlib.load(src), "f")
    imp = [o for o in cs.obligations if o.rule == "T-Imp"]
    assert len(imp) == 1 and imp[0].formula == L.FALSE
    assert isinstance(L.decide(imp[0].query(cs.datatypes)), L.Valid)


def test_impossible_without_contradiction_is_refuted():
    src = "f :: xs:List a -> Nat\nf = \\xs. match xs with\n  Nil -> impossible\n  Cons y ys -> 0\n"
    cs = C.check_binding(stdlib.load(src), "f")
    assert not V.solve_constraints(cs).sat


def test_tick_draws_on_free_potential(prelude_only):
    e = S.desugar_expr(S.parse_expr("tick 2 (tick 1 0)"), prelude_only.layouts)
    assert V.solve_constraints(C.check_term(prelude_only, e, T.Scalar(T.NatB()), 3)).sat
    assert not V.solve_constraints(C.check_term(prelude_only, e, T.Scalar(T.NatB()), 2)).sat


def test_literals_need_no_obligations(prelude_only):
    cs = C.check_term(prelude_only, K.Nat(5), T.Scalar(T.NatB()))
    assert not cs.nontrivial()
    pair = T.Scalar(T.ProdB(T.BoolB(), T.NatB()))
    cs = C.check_term(prelude_only, K.PairA(K.BoolLit(True), K.Nat(0)), pair)
    assert V.solve_constraints(cs).sat


def test_constructor_potential_must_be_paid():
    vec = stdlib.P.numeric_vector_list(1)
    text = "g :: y:Nat -> List Nat\ng = \\y. Cons y Nil\n"
    module = stdlib.load(text)
    # the library list extracts nothing, so building a cell is free
    assert V.solve_constraints(C.check_binding(module, "g")).sat
    ty = T.Scalar(T.DataB("VList", None, (L.RInt(2),)))
    module.datatypes["VList"] = vec
    cell = K.Con("VListCons", K.Nat(3), (K.Con("VListNil", K.Triv()),))
    assert not V.solve_constraints(C.check_term(module, cell, ty, 1)).sat
    assert V.solve_constraints(C.check_term(module, cell, ty, 2)).sat


def test_missing_signature():
    module = stdlib.load("h = \\x. x\n")
    with pytest.raises(C.MissingSignature):
        C.check_binding(module, "h")
    assert C.check_program(module) == {}


def test_program_check_skips_library_bindings(insert_sort):
    assert set(C.check_program(insert_sort)) == {"insert", "sort"}


@pytest.mark.parametrize("case", stdlib.CASES, ids=lambda c: c.file)
def test_corpus_checks_without_rule_errors(case):
    module = stdlib.load(case.source, case.file)
    out = C.check_program(module)
    assert case.entry in out


def test_non_additive_datatypes_cannot_be_reused():
    src = ("data QList a where\n  QNil :: QList a\n  QCons :: x:a -> xs:QList a^1 -> QList a\n\n"
           "dup :: xs:QList Nat -> (QList Nat, QList Nat)\ndup = \\xs. (xs, xs)\n")
    with pytest.warns(UserWarning):
        module = stdlib.load(src)
    with pytest.raises(T.TypeError_, match="not additive"):
        C.check_binding(module, "dup")


def test_reused_list_loses_its_potential():
    src = "dup :: xs:List Nat^1 -> (List Nat^1, List Nat^1)\ndup = \\xs. (xs, xs)\n"
    assert V.solve_constraints(C.check_binding(stdlib.load(src), "dup")).status == "unsat"
