import json

import pytest

from lrt import checker as C
from lrt import logic as L
from lrt import stdlib
from lrt import typesys as T

DTS = stdlib.library_signatures()
NAT = T.Scalar(T.NatB())


def nat(phi=0, psi=L.TRUE):
    return T.Scalar(T.NatB(), psi, L.RInt(phi) if isinstance(phi, int) else phi)


def _valid(ob, valuation=None):
    return isinstance(L.decide(ob.query(DTS), valuation), L.Valid)


def test_annotated_scalar_is_well_formed():
    ty = nat(1, L.Le(L.ZERO, L.NU_VAR))
    (ob,) = T.wf_type(T.Context(), ty, DTS)
    assert _valid(ob)


def test_polymorphic_type_with_positive_potential_is_rejected():
    alpha_one = T.Poly(("a",), T.Scalar(T.TVarB("a"), L.TRUE, L.ONE))
    with pytest.raises(T.TypeError_):
        T.wf_type(T.Context(), alpha_one, DTS)


def test_singleton_list_refinement_is_well_formed():
    ctx = T.Context().bind("x", NAT)
    ty = T.Scalar(T.DataB("List", NAT, (L.const_fn((("x1", L.NAT), ("x2", L.NAT)), L.ZERO),)),
                  L.Eq(L.NU_VAR, L.RVar("x")))
    assert all(_valid(o) for o in T.wf_type(ctx, ty, DTS))


def test_unbound_type_variable_is_a_scope_error():
    with pytest.raises(T.ScopeError):
        T.wf_type(T.Context(), T.Scalar(T.TVarB("b")), DTS)


def test_subtyping_reduces_to_potential_comparison():
    pos = L.Lt(L.ZERO, L.NU_VAR)
    obs = T.subtype(T.Context(), nat(5, pos), nat(3, pos), DTS)
    assert obs and all(_valid(o) for o in obs)
    bad = T.subtype(T.Context(), nat(3, pos), nat(5, pos), DTS)
    assert not all(_valid(o) for o in bad)


def test_subtyping_is_reflexive():
    ty = stdlib.instance_type("List Nat^2 <\\x1 x2. ite(x1 > x2, 1, 0)>")
    assert all(_valid(o) for o in T.subtype(T.Context(), ty, ty, DTS))


def test_sharing_splits_potential():
    table = T.UnknownTable(dts=DTS)
    ty = T.Scalar(T.TVarB("a"), L.TRUE, L.ONE)
    t1, t2, (ob,) = T.share(T.Context((T.TVarEntry("a"),)), ty, table, DTS)
    assert L.show(ob.formula) == f"1 = {L.show(t1.potential)} + {L.show(t2.potential)}"


def test_sharing_zero_forces_zeros():
    table = T.UnknownTable(dts=DTS)
    t1, t2, obs = T.share(T.Context(), nat(0), table, DTS)
    assert T.is_zero(t1.potential) and T.is_zero(t2.potential) and not obs


def test_dependent_sharing_quantifies_over_scope():
    table = T.UnknownTable(dependent=True, dts=DTS)
    ctx = T.Context((T.TVarEntry("a"), T.Bind("x", T.Scalar(T.TVarB("a")))))
    elem = T.Scalar(T.TVarB("a"), L.TRUE, L.Ite(L.Lt(L.NU_VAR, L.RVar("x")), L.ONE, L.ZERO))
    ty = T.Scalar(T.DataB("List", elem, DTS["List"].zero_theta()))
    t1, t2, obs = T.share(ctx, ty, table, DTS)
    params = {n: [p for p, _ in d.params] for n, d in table.decls.items()}
    assert any(ps == ["x", "ν"] for ps in params.values())
    assert any("ite" in L.show(o.formula) for o in obs)


def test_substitution_adds_potentials():
    body = T.Scalar(T.DataB("List", T.Scalar(T.TVarB("a"), L.TRUE, L.ONE), DTS["List"].zero_theta()))
    out = T.substitute_type(nat(1), "a", body, DTS)
    assert L.eval_refinement({}, out.base.elem.potential) == 2


def test_substitution_scales_by_multiplicity():
    out = T.substitute_type(nat(L.RVar("k")), "a", T.Scalar(T.TVarB("a", 2)), DTS)
    assert L.eval_refinement({"k": 3}, out.potential) == 6


def test_substitution_ignores_other_variables():
    ty = T.Scalar(T.TVarB("b"))
    assert T.substitute_type(nat(1), "a", ty, DTS) == ty


def test_multiplication():
    assert L.eval_refinement({}, T.multiply_type(2, nat(3), DTS).potential) == 6
    assert T.multiply_type(1, nat(3), DTS) == nat(3)
    f = T.Fun("x", NAT, NAT, 2, L.ZERO)
    assert T.multiply_type(3, f, DTS).mult == 6


def test_free_potential_of_a_context():
    ctx = T.Context((T.Bind("x", nat(2)), T.FreeEntry(L.RInt(3))))
    assert L.eval_refinement({}, T.context_potential(ctx, DTS)) == 5
    assert L.eval_refinement({}, T.context_potential(T.Context(), DTS)) == 0
    lst = stdlib.instance_type("List Nat^1")
    assert L.eval_refinement({}, T.context_potential(T.Context().bind("xs", lst), DTS)) == 0


def test_recursive_call_subtyping_constraint(insert_sort):
    cs = C.check_binding(insert_sort, "insert")
    sub = [o for o in cs.nontrivial() if o.rule.startswith("Sub-Dtype")]
    assert len(sub) == 1 and sub[0].label.startswith("argument xs of insert")


def test_constraint_dump_is_json(insert_sort):
    cs = C.check_binding(insert_sort, "insert")
    data = json.loads(json.dumps(cs.to_json()))
    assert data["binding"] == "insert" and len(data["obligations"]) == 4
    assert {"rule", "label", "span"} <= set(data["obligations"][0])
