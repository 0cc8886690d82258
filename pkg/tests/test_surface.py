import pytest
from hypothesis import given, settings, strategies as st

from lrt import kernel as K
from lrt import surface as S
from lrt import stdlib

INSERT_ONLY = """
insert :: x:a -> xs:List a^1 -> List a
insert = \\x. \\xs.
  match xs with
    Nil -> Cons x xs
    Cons hd tl -> if hd < x
      then Cons hd (tick 1 (insert x tl))
      else Cons x (Cons hd tl)
"""

QLIST = """
data QList a where
  QNil :: QList a
  QCons :: x:a -> xs:QList a^1 -> QList a
"""


def test_insert_listing_parses_to_one_binding():
    prog = S.parse_program(INSERT_ONLY)
    assert len(prog.bindings) == 1 and len(prog.signatures) == 1
    assert not prog.datatypes


def test_empty_file_has_no_declarations():
    prog = S.parse_program("")
    assert not prog.bindings and not prog.datatypes and not prog.signatures


def test_quadratic_list_declaration():
    prog = S.parse_program(QLIST)
    (d,) = prog.datatypes
    assert [c.name for c in d.constructors] == ["QNil", "QCons"]
    with pytest.warns(UserWarning, match="not additive"):
        reg = S.elaborate_datatypes(prog.datatypes, prog.measures)
    sig = reg["QList"]
    cons = sig.constructor("QCons")
    assert cons.arity == 1 and cons.children[0].increment is not None


def test_syntax_error_reports_position():
    with pytest.raises(S.ParseError) as err:
        S.parse_program("f :: x:Nat -> Nat\nf = \\x. (x\n", "bad.lrt")
    assert str(err.value.span).startswith("bad.lrt:3:")


def _lower(src, layouts):
    return S.desugar_expr(S.parse_expr(src), layouts)


def test_nested_call_becomes_lets(prelude_only):
    e = _lower("insert hd (tick 1 (sort tl))", prelude_only.layouts)
    assert K.is_anf(e)
    assert isinstance(e, K.Let) and isinstance(e.bound, K.Tick)


def test_atom_is_unchanged(prelude_only):
    assert _lower("x", prelude_only.layouts) == K.Var("x")


def test_nested_constructor_stays_atomic(prelude_only):
    e = _lower("Cons x (Cons hd tl)", prelude_only.layouts)
    assert K.is_anf(e)
    inner = K.Con("Cons", K.Var("hd"), (K.Var("tl"),))
    match e:
        case K.Let(u, bound, K.Con("Cons", K.Var("x"), (K.Var(v),))):
            assert bound == inner and u == v
        case K.Con("Cons", K.Var("x"), (child,)):
            assert child == inner
        case _:
            pytest.fail(f"unexpected lowering {K.show(e)}")


@pytest.mark.parametrize("case", stdlib.CASES, ids=lambda c: c.file)
def test_corpus_round_trips_through_printer(case):
    prog = S.parse_program(case.source)
    text = S.print_program(prog)
    assert S.print_program(S.parse_program(text)) == text


def test_every_corpus_binding_lowers_to_anf():
    for case in stdlib.CASES:
        module = stdlib.load(case.source, case.file)
        for b in module.core.bindings:
            assert K.is_anf(b.expr), b.name


_names = st.sampled_from(["x", "y", "zs"])
_lits = st.integers(0, 20).map(str)


def _exprs():
    leaf = st.one_of(_names, _lits, st.sampled_from(["True", "False", "Nil"]))
    return st.recursive(leaf, lambda inner: st.one_of(
        st.tuples(inner, inner).map(lambda p: f"({p[0]} + {p[1]})"),
        st.tuples(inner, inner).map(lambda p: f"({p[0]}, {p[1]})"),
        st.tuples(_lits, inner).map(lambda p: f"(tick {p[0]} {p[1]})"),
        st.tuples(inner, inner, inner).map(lambda p: f"(if {p[0]} then {p[1]} else {p[2]})"),
        st.tuples(_names, inner, inner).map(lambda p: f"(let {p[0]} = {p[1]} in {p[2]})"),
        st.tuples(inner, inner).map(lambda p: f"(Cons {p[0]} {p[1]})"),
    ), max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(_exprs())
def test_printed_expressions_reparse_to_the_same_tree(src):
    e = S.parse_expr(src)
    printed = S.print_expr(e)
    assert S.print_expr(S.parse_expr(printed)) == printed


@settings(max_examples=150, deadline=None)
@given(_exprs())
def test_lowering_always_yields_anf(src):
    layouts = stdlib.load("").layouts
    assert K.is_anf(_lower(src, layouts))
