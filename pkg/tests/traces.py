"""Random closed ANF terms used by the kernel property tests."""

from hypothesis import strategies as st

from lrt import kernel as K

_VARS = ("a", "b", "c")


def _atom(draw, scope):
    choices = [K.Nat(draw(st.integers(0, 5))), K.BoolLit(draw(st.booleans())), K.Triv()]
    choices += [K.Var(v) for v in scope]
    return draw(st.sampled_from(choices))


def _nat_atom(draw, scope, nats):
    options = [K.Nat(draw(st.integers(0, 5)))] + [K.Var(v) for v in nats if v in scope]
    return draw(st.sampled_from(options))


@st.composite
def terms(draw, depth=4, scope=(), nats=()):
    """A closed, well-behaved term: every variable it mentions is let-bound to a Nat."""
    if depth == 0:
        return _nat_atom(draw, scope, nats)
    kind = draw(st.sampled_from(["tick", "let", "cond", "pair", "prim", "app", "match", "leaf"]))
    sub = lambda: draw(terms(depth - 1, scope, nats))
    match kind:
        case "tick":
            return K.Tick(draw(st.integers(-3, 4)), sub())
        case "let":
            x = draw(st.sampled_from(_VARS))
            bound = sub()
            return K.Let(x, bound, draw(terms(depth - 1, scope + (x,), nats + (x,))))
        case "cond":
            return K.Cond(K.BoolLit(draw(st.booleans())), sub(), sub())
        case "pair":
            pair = K.PairA(_nat_atom(draw, scope, nats), _nat_atom(draw, scope, nats))
            return K.MatP(pair, "a", "b", draw(terms(depth - 1, scope + ("a", "b"), nats + ("a", "b"))))
        case "prim":
            op = draw(st.sampled_from(["+", "-"]))
            return K.Let("p", K.App(K.Prim(op), _nat_atom(draw, scope, nats)),
                         K.App(K.Var("p"), _nat_atom(draw, scope, nats)))
        case "app":
            x = draw(st.sampled_from(_VARS))
            body = draw(terms(depth - 1, scope + (x,), nats + (x,)))
            return K.App(K.Lam(x, body), _nat_atom(draw, scope, nats))
        case "match":
            scrut = K.Con("Cons", _nat_atom(draw, scope, nats), (K.Con("Nil", K.Triv()),))
            nil = sub()
            cons = draw(terms(depth - 1, scope + ("h",), nats + ("h",)))
            return K.MatD(scrut, (K.Branch("Nil", "_", (), nil), K.Branch("Cons", "h", ("t",), cons)))
    return _nat_atom(draw, scope, nats)
