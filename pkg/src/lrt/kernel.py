"""Core calculus in a-normal form and its resource-instrumented small-step semantics.

The interpreter is substitution based and deliberately naive: it is the
reference oracle every resource bound is tested against, so clarity wins
over speed.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Union

sys.setrecursionlimit(max(sys.getrecursionlimit(), 20000))

COST_LIMIT = 2**62
DEFAULT_FUEL = 10**6


# ---------------------------------------------------------------------------
# Syntax


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Nat:
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("natural literal must be nonnegative")


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Triv:
    pass


@dataclass(frozen=True)
class PairA:
    left: "Atom"
    right: "Atom"


@dataclass(frozen=True)
class Con:
    """Constructor application C(content, <children...>)."""

    name: str
    content: "Atom"
    children: tuple = ()


@dataclass(frozen=True)
class Lam:
    param: str
    body: "Expr"


@dataclass(frozen=True)
class Fix:
    fname: str
    param: str
    body: "Expr"


@dataclass(frozen=True)
class Prim:
    """A built-in operator, possibly partially applied to value arguments."""

    op: str
    args: tuple = ()


SimpleAtom = Union[Var, Nat, BoolLit, Triv, PairA, Con]
Atom = Union[SimpleAtom, Lam, Fix, Prim]


@dataclass(frozen=True)
class Cond:
    guard: Atom
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class MatP:
    scrut: Atom
    left: str
    right: str
    body: "Expr"


@dataclass(frozen=True)
class Branch:
    con: str
    content: str
    children: tuple
    body: "Expr"


@dataclass(frozen=True)
class MatD:
    scrut: Atom
    branches: tuple


@dataclass(frozen=True)
class App:
    fn: Atom
    arg: Atom


@dataclass(frozen=True)
class Let:
    name: str
    bound: "Expr"
    body: "Expr"


@dataclass(frozen=True)
class Impossible:
    pass


@dataclass(frozen=True)
class Tick:
    cost: int
    body: "Expr"


Expr = Union[Atom, Cond, MatP, MatD, App, Let, Impossible, Tick]

SIMPLE_ATOMS = (Var, Nat, BoolLit, Triv, PairA, Con)
ATOMS = SIMPLE_ATOMS + (Lam, Fix, Prim)

PRIM_ARITY = {
    "<": 2, ">": 2, "<=": 2, ">=": 2, "==": 2,
    "+": 2, "-": 2, "&&": 2, "||": 2, "not": 1,
}


@dataclass(frozen=True)
class CoreBinding:
    name: str
    expr: Expr


@dataclass(frozen=True)
class CoreProgram:
    bindings: tuple = ()

    def lookup(self, name: str) -> Expr:
        for b in self.bindings:
            if b.name == name:
                return b.expr
        raise KeyError(name)

    def closed(self, expr: Expr) -> Expr:
        """Close `expr` over the program's top-level bindings by substitution.

        Later bindings may refer to earlier ones; each binding is closed
        before it is substituted onward.
        """
        env: list[tuple[str, Expr]] = []
        for b in self.bindings:
            e = b.expr
            for name, val in env:
                e = substitute_value(val, name, e)
            env.append((b.name, e))
        for name, val in reversed(env):
            expr = substitute_value(val, name, expr)
        return expr


# ---------------------------------------------------------------------------
# Predicates


def is_simple_atom(e) -> bool:
    match e:
        case Var() | Nat() | BoolLit() | Triv():
            return True
        case PairA(l, r):
            return is_simple_atom(l) and is_simple_atom(r)
        case Con(_, c, ch):
            return is_simple_atom(c) and all(is_simple_atom(x) for x in ch)
    return False


def is_atom(e) -> bool:
    match e:
        case Lam(_, body) | Fix(_, _, body):
            return is_anf(body)
        case Prim(_, args):
            return all(is_value(a) for a in args)
    return is_simple_atom(e)


def is_anf(e) -> bool:
    """Every position the grammar reserves for atoms holds an atom."""
    match e:
        case Cond(g, t, f):
            return is_simple_atom(g) and is_anf(t) and is_anf(f)
        case MatP(s, _, _, body):
            return is_simple_atom(s) and is_anf(body)
        case MatD(s, branches):
            return is_simple_atom(s) and all(is_anf(b.body) for b in branches)
        case App(f, a):
            return is_atom(f) and is_atom(a)
        case Let(_, e1, e2):
            return is_anf(e1) and is_anf(e2)
        case Tick(_, body):
            return is_anf(body)
        case Impossible():
            return True
    return is_atom(e)


def is_value(e) -> bool:
    match e:
        case Nat() | BoolLit() | Triv() | Lam() | Fix():
            return True
        case PairA(l, r):
            return is_value(l) and is_value(r)
        case Con(_, c, ch):
            return is_value(c) and all(is_value(x) for x in ch)
        case Prim(op, args):
            return len(args) < PRIM_ARITY[op] and all(is_value(a) for a in args)
    return False


def free_vars(e) -> frozenset:
    match e:
        case Var(x):
            return frozenset([x])
        case Nat() | BoolLit() | Triv() | Impossible():
            return frozenset()
        case PairA(l, r):
            return free_vars(l) | free_vars(r)
        case Con(_, c, ch):
            out = free_vars(c)
            for x in ch:
                out |= free_vars(x)
            return out
        case Prim(_, args):
            out = frozenset()
            for a in args:
                out |= free_vars(a)
            return out
        case Lam(x, body):
            return free_vars(body) - {x}
        case Fix(f, x, body):
            return free_vars(body) - {f, x}
        case Cond(g, t, f):
            return free_vars(g) | free_vars(t) | free_vars(f)
        case MatP(s, x1, x2, body):
            return free_vars(s) | (free_vars(body) - {x1, x2})
        case MatD(s, branches):
            out = free_vars(s)
            for b in branches:
                out |= free_vars(b.body) - {b.content, *b.children}
            return out
        case App(f, a):
            return free_vars(f) | free_vars(a)
        case Let(x, e1, e2):
            return free_vars(e1) | (free_vars(e2) - {x})
        case Tick(_, body):
            return free_vars(body)
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Substitution


def substitute_value(v, x: str, e):
    """[v/x]e for a closed value v. Closedness rules out variable capture."""
    return _subst(e, {x: v})


def substitute_many(mapping: dict, e):
    return _subst(e, dict(mapping)) if mapping else e


def _subst(e, m: dict):
    match e:
        case Var(y):
            return m.get(y, e)
        case Nat() | BoolLit() | Triv() | Impossible():
            return e
        case PairA(l, r):
            return PairA(_subst(l, m), _subst(r, m))
        case Con(c, a0, ch):
            return Con(c, _subst(a0, m), tuple(_subst(a, m) for a in ch))
        case Prim(op, args):
            return Prim(op, tuple(_subst(a, m) for a in args))
        case Lam(y, body):
            return Lam(y, _subst(body, _drop(m, y)))
        case Fix(f, y, body):
            return Fix(f, y, _subst(body, _drop(m, f, y)))
        case Cond(g, t, f):
            return Cond(_subst(g, m), _subst(t, m), _subst(f, m))
        case MatP(s, x1, x2, body):
            return MatP(_subst(s, m), x1, x2, _subst(body, _drop(m, x1, x2)))
        case MatD(s, branches):
            return MatD(_subst(s, m), tuple(
                Branch(b.con, b.content, b.children,
                       _subst(b.body, _drop(m, b.content, *b.children)))
                for b in branches))
        case App(f, a):
            return App(_subst(f, m), _subst(a, m))
        case Let(y, e1, e2):
            return Let(y, _subst(e1, m), _subst(e2, _drop(m, y)))
        case Tick(c, body):
            return Tick(c, _subst(body, m))
    raise TypeError(f"not an expression: {e!r}")


def _drop(m: dict, *names):
    if not any(n in m for n in names):
        return m
    return {k: v for k, v in m.items() if k not in names}


# ---------------------------------------------------------------------------
# Semantics


class EvalError(Exception):
    pass


class InsufficientResources(EvalError):
    def __init__(self, state, cost):
        super().__init__(f"tick {cost} with only {state.q} available")
        self.state = state
        self.cost = cost


class StuckError(EvalError):
    def __init__(self, state, reason):
        super().__init__(reason)
        self.state = state
        self.reason = reason


class CostOverflow(EvalError):
    pass


class Nonterminating(EvalError):
    pass


@dataclass(frozen=True)
class MachineState:
    expr: Expr
    q: int

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("machine states carry a nonnegative budget")


@dataclass(frozen=True)
class Finished:
    value: Expr
    leftover: int
    steps: int


@dataclass(frozen=True)
class ResourceExhausted:
    state: MachineState
    cost: int
    steps: int


@dataclass(frozen=True)
class FuelExhausted:
    state: MachineState
    steps: int


@dataclass(frozen=True)
class Stuck:
    state: MachineState
    reason: str
    steps: int


EvalOutcome = Union[Finished, ResourceExhausted, FuelExhausted, Stuck]


def _delta(op: str, args: tuple):
    match op, args:
        case "not", (BoolLit(b),):
            return BoolLit(not b)
        case "&&", (BoolLit(a), BoolLit(b)):
            return BoolLit(a and b)
        case "||", (BoolLit(a), BoolLit(b)):
            return BoolLit(a or b)
        case "==", (a, b):
            return BoolLit(a == b)
        case "+", (Nat(a), Nat(b)):
            return Nat(a + b)
        case "-", (Nat(a), Nat(b)):
            return Nat(max(a - b, 0))
        case "<", (Nat(a), Nat(b)):
            return BoolLit(a < b)
        case ">", (Nat(a), Nat(b)):
            return BoolLit(a > b)
        case "<=", (Nat(a), Nat(b)):
            return BoolLit(a <= b)
        case ">=", (Nat(a), Nat(b)):
            return BoolLit(a >= b)
    return None


def _reduce(e, q: int, virtual: bool):
    """One reduction step; returns (expr, q). `virtual` lets q go negative."""
    match e:
        case Let(x, e1, e2):
            if is_value(e1):
                return substitute_value(e1, x, e2), q
            e1p, qp = _reduce(e1, q, virtual)
            return Let(x, e1p, e2), qp
        case Tick(c, body):
            if abs(c) > COST_LIMIT:
                raise CostOverflow(f"tick cost {c} exceeds machine range")
            qp = q - c
            if qp < 0 and not virtual:
                raise InsufficientResources(MachineState(e, q), c)
            if abs(qp) > COST_LIMIT:
                raise CostOverflow("resource counter overflow")
            return body, qp
        case Cond(BoolLit(b), t, f):
            return (t if b else f), q
        case MatP(PairA(l, r), x1, x2, body) if is_value(l) and is_value(r):
            return substitute_many({x1: l, x2: r}, body), q
        case MatD(Con(c, v0, vs) as v, branches) if is_value(v):
            for br in branches:
                if br.con == c:
                    if len(br.children) != len(vs):
                        break
                    m = {br.content: v0}
                    m.update(zip(br.children, vs))
                    return substitute_many(m, br.body), q
            raise StuckError(_state(e, q, virtual), f"no branch for constructor {c}")
        case App(Lam(x, body), v) if is_value(v):
            return substitute_value(v, x, body), q
        case App(Fix(f, x, body) as fx, v) if is_value(v):
            return substitute_many({f: fx, x: v}, body), q
        case App(Prim(op, args), v) if is_value(v):
            args = args + (v,)
            if len(args) < PRIM_ARITY[op]:
                return Prim(op, args), q
            out = _delta(op, args)
            if out is None:
                raise StuckError(_state(e, q, virtual), f"bad operands for {op}")
            return out, q
        case Impossible():
            raise StuckError(_state(e, q, virtual), "reached impossible")
    if is_value(e):
        raise StuckError(_state(e, q, virtual), "value has no successor")
    raise StuckError(_state(e, q, virtual), f"no rule applies to {show(e)}")


def _state(e, q, virtual):
    return MachineState(e, max(q, 0)) if virtual else MachineState(e, q)


def step(state: MachineState) -> MachineState | None:
    """One small step; None when the state already holds a value."""
    if state.q < 0:
        raise ValueError("negative budget")
    if is_value(state.expr):
        return None
    e, q = _reduce(state.expr, state.q, False)
    return MachineState(e, q)


def evaluate(e, q: int, fuel: int = DEFAULT_FUEL) -> EvalOutcome:
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    state = MachineState(e, q)
    steps = 0
    while True:
        if is_value(state.expr):
            return Finished(state.expr, state.q, steps)
        if steps >= fuel:
            return FuelExhausted(state, steps)
        try:
            state = step(state)
        except InsufficientResources as err:
            return ResourceExhausted(err.state, err.cost, steps)
        except StuckError as err:
            return Stuck(err.state, err.reason, steps)
        steps += 1


@dataclass
class NetCostRun:
    value: Expr
    net: int
    lowest: int
    steps: int


def run_virtual(e, fuel: int = DEFAULT_FUEL) -> NetCostRun:
    """Evaluate with the counter allowed below zero, tracking its minimum."""
    q, lowest, steps = 0, 0, 0
    while not is_value(e):
        if steps >= fuel:
            raise Nonterminating(f"no value after {fuel} steps")
        e, q = _reduce(e, q, True)
        lowest = min(lowest, q)
        steps += 1
    return NetCostRun(e, -q, lowest, steps)


def high_water_mark(e, fuel: int = DEFAULT_FUEL) -> int:
    """Least initial budget under which `e` finishes."""
    run = run_virtual(e, fuel)
    need = -run.lowest
    out = evaluate(e, need, fuel)
    if not isinstance(out, Finished):
        raise EvalError(f"high-water mark {need} failed verification: {out}")
    if need > 0 and isinstance(evaluate(e, need - 1, fuel), Finished):
        raise EvalError(f"high-water mark {need} is not minimal")
    return need


# ---------------------------------------------------------------------------
# Printing

_INFIX = {"<", ">", "<=", ">=", "==", "+", "-", "&&", "||"}


def show(e) -> str:
    match e:
        case Var(x):
            return x
        case Nat(n):
            return str(n)
        case BoolLit(b):
            return "true" if b else "false"
        case Triv():
            return "()"
        case PairA(l, r):
            return f"({show(l)}, {show(r)})"
        case Con(c, a0, ch):
            inner = ", ".join(show(a) for a in ch)
            return f"{c}({show(a0)}, <{inner}>)"
        case Prim(op, args):
            base = f"({op})" if op in _INFIX else op
            return " ".join([base] + [_paren(a) for a in args]) if args else base
        case Lam(x, body):
            return f"\\{x}. {show(body)}"
        case Fix(f, x, body):
            return f"fix {f} {x}. {show(body)}"
        case Cond(g, t, f):
            return f"if {show(g)} then {show(t)} else {show(f)}"
        case MatP(s, x1, x2, body):
            return f"match {show(s)} with ({x1}, {x2}) -> {show(body)}"
        case MatD(s, branches):
            arms = " ".join(
                "| " + " ".join([b.con, b.content, *b.children]) + f" -> {{{show(b.body)}}}"
                for b in branches)
            return f"match {show(s)} with {arms}"
        case App(f, a):
            return f"{_paren(f)} {_paren(a)}"
        case Let(x, e1, e2):
            return f"let {x} = {show(e1)} in {show(e2)}"
        case Impossible():
            return "impossible"
        case Tick(c, body):
            return f"tick {c} ({show(body)})" if c >= 0 else f"tick ({c}) ({show(body)})"
    return repr(e)


def _paren(e) -> str:
    s = show(e)
    if isinstance(e, (Var, Nat, BoolLit, Triv, PairA, Con)) or (isinstance(e, Prim) and not e.args):
        return s
    return f"({s})"


def summary(e, width: int = 72) -> str:
    s = show(e)
    return s if len(s) <= width else s[: width - 3] + "..."
