"""Refinement logic: sorts, terms, sorting, evaluation and bounded validity.

Terms are frozen dataclasses. The value variable is the ordinary variable
named ``ν``. Unknown potential functions are first-class terms so that a
constraint dump is self-contained.

Validity is decided by evaluation over a bounded domain (0..B for naturals
and type-variable tokens) after eliminating defined variables, using numpy
broadcasting over the whole grid at once.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Union

import numpy as np

NU = "ν"
DEFAULT_BOUND = 16
GRID_LIMIT = 6_000_000
CHUNK = 1_000_000


# ---------------------------------------------------------------------------
# Sorts


@dataclass(frozen=True)
class SBool:
    def __str__(self):
        return "𝔹"


@dataclass(frozen=True)
class SNat:
    def __str__(self):
        return "ℕ"


@dataclass(frozen=True)
class SUnit:
    def __str__(self):
        return "𝕌"


@dataclass(frozen=True)
class STVar:
    name: str

    def __str__(self):
        return f"δ{self.name}"


@dataclass(frozen=True)
class SProd:
    left: "Sort"
    right: "Sort"

    def __str__(self):
        return f"({self.left} × {self.right})"


@dataclass(frozen=True)
class SArrow:
    params: tuple
    result: "Sort"

    def __str__(self):
        dom = " × ".join(str(p) for p in self.params) or "𝕌"
        return f"({dom} ⇒ {self.result})"


Sort = Union[SBool, SNat, SUnit, STVar, SProd, SArrow]
BOOL, NAT, UNIT = SBool(), SNat(), SUnit()


def is_scalar_sort(s) -> bool:
    match s:
        case SBool() | SNat() | SUnit() | STVar():
            return True
        case SProd(l, r):
            return is_scalar_sort(l) and is_scalar_sort(r)
    return False


def is_ordered_sort(s) -> bool:
    return isinstance(s, (SNat, STVar))


# ---------------------------------------------------------------------------
# Terms


@dataclass(frozen=True)
class RVar:
    name: str


@dataclass(frozen=True)
class RInt:
    value: int


@dataclass(frozen=True)
class RStar:
    pass


@dataclass(frozen=True)
class RBool:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "Term"


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


@dataclass(frozen=True)
class Implies:
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Le:
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Lt:
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Eq:
    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Add:
    args: tuple


@dataclass(frozen=True)
class Sub:
    """Integer subtraction; only used internally for withdrawn potential."""

    lhs: "Term"
    rhs: "Term"


@dataclass(frozen=True)
class Mul:
    k: int
    arg: "Term"


@dataclass(frozen=True)
class Ite:
    cond: "Term"
    then: "Term"
    orelse: "Term"


@dataclass(frozen=True)
class Forall:
    var: str
    sort: Sort
    body: "Term"


@dataclass(frozen=True)
class RLam:
    params: tuple  # of (name, Sort)
    body: "Term"


@dataclass(frozen=True)
class RApp:
    fn: "Term"
    args: tuple


@dataclass(frozen=True)
class RPair:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Fst:
    arg: "Term"


@dataclass(frozen=True)
class Snd:
    arg: "Term"


@dataclass(frozen=True)
class Unknown:
    """Application of a solver-introduced potential function."""

    name: str
    args: tuple = ()


Term = Union[RVar, RInt, RStar, RBool, Not, And, Or, Implies, Le, Lt, Eq, Add,
             Sub, Mul, Ite, Forall, RLam, RApp, RPair, Fst, Snd, Unknown]

TRUE, FALSE = RBool(True), RBool(False)
ZERO, ONE = RInt(0), RInt(1)
NU_VAR = RVar(NU)


@dataclass(frozen=True)
class UnknownDecl:
    name: str
    params: tuple  # of (name, Sort)

    @property
    def arity(self) -> int:
        return len(self.params)


class SortError(Exception):
    pass


class UnboundVariable(SortError):
    pass


class EvaluationError(Exception):
    pass


class NotInterpretable(Exception):
    pass


# ---------------------------------------------------------------------------
# Smart constructors


def var(name: str) -> RVar:
    return RVar(name)


def num(n: int) -> RInt:
    return RInt(n)


def mk_not(a):
    match a:
        case RBool(b):
            return RBool(not b)
        case Not(x):
            return x
    return Not(a)


def mk_and(*args):
    out = []
    for a in _flat(args, And):
        if a == TRUE:
            continue
        if a == FALSE:
            return FALSE
        if a not in out:
            out.append(a)
    if not out:
        return TRUE
    return out[0] if len(out) == 1 else And(tuple(out))


def mk_or(*args):
    out = []
    for a in _flat(args, Or):
        if a == FALSE:
            continue
        if a == TRUE:
            return TRUE
        if a not in out:
            out.append(a)
    if not out:
        return FALSE
    return out[0] if len(out) == 1 else Or(tuple(out))


def mk_implies(a, b):
    if a == TRUE:
        return b
    if a == FALSE or b == TRUE:
        return TRUE
    if a == b:
        return TRUE
    return Implies(a, b)


def mk_add(*args):
    const = 0
    out = []
    for a in _flat(args, Add):
        if isinstance(a, RInt):
            const += a.value
        else:
            out.append(a)
    if const:
        out.append(RInt(const))
    if not out:
        return ZERO
    return out[0] if len(out) == 1 else Add(tuple(out))


def mk_sub(a, b):
    if b == ZERO:
        return a
    if isinstance(a, RInt) and isinstance(b, RInt):
        return RInt(a.value - b.value)
    return Sub(a, b)


def mk_mul(k: int, a):
    if k == 0 or a == ZERO:
        return ZERO
    if k == 1:
        return a
    if isinstance(a, RInt):
        return RInt(k * a.value)
    if isinstance(a, Mul):
        return mk_mul(k * a.k, a.arg)
    return Mul(k, a)


def mk_ite(c, t, e):
    if c == TRUE:
        return t
    if c == FALSE:
        return e
    if t == e:
        return t
    return Ite(c, t, e)


def mk_eq(a, b):
    if a == b:
        return TRUE
    if isinstance(a, RInt) and isinstance(b, RInt):
        return RBool(a.value == b.value)
    return Eq(a, b)


def mk_le(a, b):
    if a == b:
        return TRUE
    if isinstance(a, RInt) and isinstance(b, RInt):
        return RBool(a.value <= b.value)
    if a == ZERO and _manifestly_nonneg(b):
        return TRUE
    return Le(a, b)


def mk_ge(a, b):
    return mk_le(b, a)


def mk_lt(a, b):
    if isinstance(a, RInt) and isinstance(b, RInt):
        return RBool(a.value < b.value)
    return Lt(a, b)


def mk_gt(a, b):
    return mk_lt(b, a)


def mk_forall(params: Iterable, body):
    for name, sort in reversed(list(params)):
        if name in free_vars(body):
            body = Forall(name, sort, body)
    return body


def _flat(args, cls):
    for a in args:
        if isinstance(a, cls):
            yield from _flat(a.args, cls)
        else:
            yield a


def _manifestly_nonneg(t) -> bool:
    """Syntactically nonnegative: built from naturals, variables, unknowns, + and ite."""
    match t:
        case RInt(n):
            return n >= 0
        case RVar() | Unknown():
            return True
        case Add(args):
            return all(_manifestly_nonneg(a) for a in args)
        case Mul(k, a):
            return k >= 0 and _manifestly_nonneg(a)
        case Ite(_, a, b):
            return _manifestly_nonneg(a) and _manifestly_nonneg(b)
        case RApp(RLam(_, body), _):
            return _manifestly_nonneg(body)
    return False


manifestly_nonneg = _manifestly_nonneg


def lam(params, body) -> RLam:
    if not params:
        return RLam((), body)
    return RLam(tuple(params), body)


def const_fn(params, value) -> RLam:
    return RLam(tuple(params), value)


# ---------------------------------------------------------------------------
# Free variables and substitution


def free_vars(t) -> frozenset:
    match t:
        case RVar(x):
            return frozenset([x])
        case RInt() | RStar() | RBool():
            return frozenset()
        case Not(a) | Fst(a) | Snd(a) | Mul(_, a):
            return free_vars(a)
        case And(args) | Or(args) | Add(args):
            return frozenset().union(*(free_vars(a) for a in args))
        case Implies(a, b) | Le(a, b) | Lt(a, b) | Eq(a, b) | Sub(a, b) | RPair(a, b):
            return free_vars(a) | free_vars(b)
        case Ite(c, a, b):
            return free_vars(c) | free_vars(a) | free_vars(b)
        case Forall(x, _, body):
            return free_vars(body) - {x}
        case RLam(params, body):
            return free_vars(body) - {p for p, _ in params}
        case RApp(f, args):
            return free_vars(f).union(*(free_vars(a) for a in args))
        case Unknown(_, args):
            return frozenset().union(*(free_vars(a) for a in args))
    raise TypeError(f"not a refinement: {t!r}")


def unknowns_of(t) -> set:
    out: set = set()

    def go(t):
        match t:
            case Unknown(name, args):
                out.add(name)
                for a in args:
                    go(a)
            case RVar() | RInt() | RStar() | RBool():
                pass
            case _:
                for c in _children(t):
                    go(c)

    go(t)
    return out


def _children(t):
    match t:
        case Not(a) | Fst(a) | Snd(a) | Mul(_, a):
            return (a,)
        case And(args) | Or(args) | Add(args) | Unknown(_, args):
            return args
        case Implies(a, b) | Le(a, b) | Lt(a, b) | Eq(a, b) | Sub(a, b) | RPair(a, b):
            return (a, b)
        case Ite(c, a, b):
            return (c, a, b)
        case Forall(_, _, body) | RLam(_, body):
            return (body,)
        case RApp(f, args):
            return (f, *args)
    return ()


_fresh_counter = itertools.count()


def _fresh(base: str, avoid) -> str:
    stem = base.split("'")[0]
    while True:
        cand = f"{stem}'{next(_fresh_counter)}"
        if cand not in avoid:
            return cand


def substitute(t, mapping: Mapping[str, Any]):
    """Capture-avoiding simultaneous substitution of terms for variables."""
    if not mapping:
        return t
    fvs = frozenset().union(*(free_vars(v) for v in mapping.values()))
    return _subst(t, dict(mapping), fvs)


def _subst(t, m, fvs):
    match t:
        case RVar(x):
            return m.get(x, t)
        case RInt() | RStar() | RBool():
            return t
        case Not(a):
            return Not(_subst(a, m, fvs))
        case Fst(a):
            return Fst(_subst(a, m, fvs))
        case Snd(a):
            return Snd(_subst(a, m, fvs))
        case Mul(k, a):
            return Mul(k, _subst(a, m, fvs))
        case And(args):
            return And(tuple(_subst(a, m, fvs) for a in args))
        case Or(args):
            return Or(tuple(_subst(a, m, fvs) for a in args))
        case Add(args):
            return Add(tuple(_subst(a, m, fvs) for a in args))
        case Unknown(n, args):
            return Unknown(n, tuple(_subst(a, m, fvs) for a in args))
        case Implies(a, b):
            return Implies(_subst(a, m, fvs), _subst(b, m, fvs))
        case Le(a, b):
            return Le(_subst(a, m, fvs), _subst(b, m, fvs))
        case Lt(a, b):
            return Lt(_subst(a, m, fvs), _subst(b, m, fvs))
        case Eq(a, b):
            return Eq(_subst(a, m, fvs), _subst(b, m, fvs))
        case Sub(a, b):
            return Sub(_subst(a, m, fvs), _subst(b, m, fvs))
        case RPair(a, b):
            return RPair(_subst(a, m, fvs), _subst(b, m, fvs))
        case Ite(c, a, b):
            return Ite(_subst(c, m, fvs), _subst(a, m, fvs), _subst(b, m, fvs))
        case RApp(f, args):
            return RApp(_subst(f, m, fvs), tuple(_subst(a, m, fvs) for a in args))
        case Forall(x, s, body):
            x2, body2, m2 = _under_binder([x], body, m, fvs)
            if not m2:
                return Forall(x2[0], s, body2)
            return Forall(x2[0], s, _subst(body2, m2, fvs))
        case RLam(params, body):
            names = [p for p, _ in params]
            new, body2, m2 = _under_binder(names, body, m, fvs)
            ps = tuple((n, s) for n, (_, s) in zip(new, params))
            return RLam(ps, _subst(body2, m2, fvs) if m2 else body2)
    raise TypeError(f"not a refinement: {t!r}")


def _under_binder(names, body, m, fvs):
    m2 = {k: v for k, v in m.items() if k not in names}
    if not m2:
        return list(names), body, m2
    new = []
    renames = {}
    avoid = fvs | free_vars(body) | set(m2)
    for n in names:
        if n in fvs:
            n2 = _fresh(n, avoid | set(new))
            renames[n] = RVar(n2)
            new.append(n2)
        else:
            new.append(n)
    if renames:
        body = substitute(body, renames)
    return new, body, m2


def apply(fn, *args):
    """Apply a logic function to arguments, reducing when it is a lambda."""
    return beta(RApp(fn, tuple(args)))


def beta(t):
    """Normalize β-redexes and projections of pairs, then simplify."""
    match t:
        case RApp(f, args):
            f = beta(f)
            args = tuple(beta(a) for a in args)
            if isinstance(f, RLam):
                if len(f.params) != len(args):
                    if len(args) == 1 and isinstance(args[0], RPair) and len(f.params) == 2:
                        args = (args[0].left, args[0].right)
                    else:
                        raise SortError(f"arity mismatch applying {show(f)}")
                m = {p: a for (p, _), a in zip(f.params, args)}
                return beta(substitute(f.body, m))
            return RApp(f, args)
        case Fst(a):
            a = beta(a)
            return a.left if isinstance(a, RPair) else Fst(a)
        case Snd(a):
            a = beta(a)
            return a.right if isinstance(a, RPair) else Snd(a)
        case RVar() | RInt() | RStar() | RBool():
            return t
        case Forall(x, s, body):
            return Forall(x, s, beta(body))
        case RLam(ps, body):
            return RLam(ps, beta(body))
    return simplify(_rebuild(t, tuple(beta(c) for c in _children(t))))


def _rebuild(t, kids):
    match t:
        case Not():
            return mk_not(kids[0])
        case Fst():
            return Fst(kids[0])
        case Snd():
            return Snd(kids[0])
        case Mul(k, _):
            return mk_mul(k, kids[0])
        case And():
            return mk_and(*kids)
        case Or():
            return mk_or(*kids)
        case Add():
            return mk_add(*kids)
        case Unknown(n, _):
            return Unknown(n, kids)
        case Implies():
            return mk_implies(*kids)
        case Le():
            return mk_le(*kids)
        case Lt():
            return mk_lt(*kids)
        case Eq():
            return mk_eq(*kids)
        case Sub():
            return mk_sub(*kids)
        case RPair():
            return RPair(*kids)
        case Ite():
            return mk_ite(*kids)
        case RApp():
            return RApp(kids[0], tuple(kids[1:]))
        case Forall(x, s, _):
            return Forall(x, s, kids[0])
        case RLam(ps, _):
            return RLam(ps, kids[0])
    return t


def simplify(t):
    """Bottom-up constant folding and flattening; semantics preserving."""
    match t:
        case RVar() | RInt() | RStar() | RBool():
            return t
        case Forall(x, s, body):
            b = simplify(body)
            if b in (TRUE, FALSE) or x not in free_vars(b):
                return b
            return Forall(x, s, b)
        case RLam(ps, body):
            return RLam(ps, simplify(body))
        case Sub(a, b):
            a, b = simplify(a), simplify(b)
            if isinstance(a, RInt) and isinstance(b, RInt):
                return RInt(a.value - b.value)
            return mk_sub(a, b)
    return _rebuild(t, tuple(simplify(c) for c in _children(t)))


# ---------------------------------------------------------------------------
# Sorting


def sort_of(ctx: Mapping[str, Sort], t, unknowns: Mapping[str, UnknownDecl] | None = None) -> Sort:
    unknowns = unknowns or {}

    def expect(s, want, what):
        if s != want:
            raise SortError(f"{what}: expected {want}, got {s}")

    def go(t, ctx):
        match t:
            case RVar(x):
                if x not in ctx:
                    raise UnboundVariable(f"unbound logic variable {x}")
                return ctx[x]
            case RInt(n):
                return NAT
            case RStar():
                return UNIT
            case RBool():
                return BOOL
            case Not(a):
                expect(go(a, ctx), BOOL, "negation")
                return BOOL
            case And(args) | Or(args):
                for a in args:
                    expect(go(a, ctx), BOOL, "connective")
                return BOOL
            case Implies(a, b):
                expect(go(a, ctx), BOOL, "implication")
                expect(go(b, ctx), BOOL, "implication")
                return BOOL
            case Le(a, b) | Lt(a, b):
                sa, sb = go(a, ctx), go(b, ctx)
                if sa != sb or not is_ordered_sort(sa):
                    raise SortError(f"comparison between {sa} and {sb}")
                return BOOL
            case Eq(a, b):
                sa, sb = go(a, ctx), go(b, ctx)
                if sa != sb or not is_scalar_sort(sa):
                    raise SortError(f"equality between {sa} and {sb}")
                return BOOL
            case Add(args):
                for a in args:
                    expect(go(a, ctx), NAT, "addition")
                return NAT
            case Sub(a, b):
                expect(go(a, ctx), NAT, "subtraction")
                expect(go(b, ctx), NAT, "subtraction")
                return NAT
            case Mul(_, a):
                expect(go(a, ctx), NAT, "scaling")
                return NAT
            case Ite(c, a, b):
                expect(go(c, ctx), BOOL, "ite guard")
                sa, sb = go(a, ctx), go(b, ctx)
                if sa != sb:
                    raise SortError(f"ite branches {sa} and {sb}")
                return sa
            case Forall(x, s, body):
                if not is_scalar_sort(s):
                    raise SortError("quantification over a non-scalar sort")
                expect(go(body, {**ctx, x: s}), BOOL, "quantifier body")
                return BOOL
            case RLam(ps, body):
                inner = dict(ctx)
                inner.update(dict(ps))
                return SArrow(tuple(s for _, s in ps), go(body, inner))
            case RApp(f, args):
                sf = go(f, ctx)
                if not isinstance(sf, SArrow):
                    raise SortError("application of a non-function")
                sargs = tuple(go(a, ctx) for a in args)
                if sargs != sf.params:
                    raise SortError(f"argument sorts {sargs} vs {sf.params}")
                return sf.result
            case RPair(a, b):
                return SProd(go(a, ctx), go(b, ctx))
            case Fst(a) | Snd(a):
                s = go(a, ctx)
                if not isinstance(s, SProd):
                    raise SortError("projection from a non-pair")
                return s.left if isinstance(t, Fst) else s.right
            case Unknown(name, args):
                if name not in unknowns:
                    raise UnboundVariable(f"undeclared unknown {name}")
                decl = unknowns[name]
                sargs = tuple(go(a, ctx) for a in args)
                want = tuple(s for _, s in decl.params)
                if sargs != want:
                    raise SortError(f"unknown {name} applied to {sargs}, declared {want}")
                return NAT
        raise SortError(f"not a refinement: {t!r}")

    return go(t, dict(ctx))


# ---------------------------------------------------------------------------
# Scalar evaluation


def domain(sort, bound: int = DEFAULT_BOUND):
    match sort:
        case SBool():
            return [False, True]
        case SNat() | STVar():
            return list(range(bound + 1))
        case SUnit():
            return ["⋆"]
        case SProd(l, r):
            return [(a, b) for a in domain(l, bound) for b in domain(r, bound)]
    raise EvaluationError(f"cannot enumerate sort {sort}")


@dataclass(frozen=True)
class Closure:
    params: tuple
    body: Any
    env: tuple

    def __call__(self, *args):
        env = dict(self.env)
        if len(args) == 1 and len(self.params) == 2 and isinstance(args[0], tuple):
            args = args[0]
        env.update({p: a for (p, _), a in zip(self.params, args)})
        return eval_refinement(env, self.body)


def eval_refinement(env: Mapping[str, Any], t, valuation: Mapping[str, RLam] | None = None,
                    bound: int = DEFAULT_BOUND):
    """Denotation of `t`; naturals are ints, booleans bools, ⋆ the string '⋆'."""
    valuation = valuation or {}

    def go(t, env):
        match t:
            case RVar(x):
                if x not in env:
                    raise EvaluationError(f"unbound symbol {x}")
                return env[x]
            case RInt(n):
                return n
            case RStar():
                return "⋆"
            case RBool(b):
                return b
            case Not(a):
                return not go(a, env)
            case And(args):
                return all(go(a, env) for a in args)
            case Or(args):
                return any(go(a, env) for a in args)
            case Implies(a, b):
                return (not go(a, env)) or go(b, env)
            case Le(a, b):
                return go(a, env) <= go(b, env)
            case Lt(a, b):
                return go(a, env) < go(b, env)
            case Eq(a, b):
                return go(a, env) == go(b, env)
            case Add(args):
                return sum(go(a, env) for a in args)
            case Sub(a, b):
                return go(a, env) - go(b, env)
            case Mul(k, a):
                return k * go(a, env)
            case Ite(c, a, b):
                return go(a, env) if go(c, env) else go(b, env)
            case Forall(x, s, body):
                return all(go(body, {**env, x: v}) for v in domain(s, bound))
            case RLam(ps, body):
                return Closure(ps, body, tuple(env.items()))
            case RApp(f, args):
                fn = go(f, env)
                return fn(*(go(a, env) for a in args))
            case RPair(a, b):
                return (go(a, env), go(b, env))
            case Fst(a):
                return go(a, env)[0]
            case Snd(a):
                return go(a, env)[1]
            case Unknown(name, args):
                if name not in valuation:
                    raise EvaluationError(f"no valuation for unknown {name}")
                sol = valuation[name]
                vals = [go(a, env) for a in args]
                inner = {p: v for (p, _), v in zip(sol.params, vals)}
                return go(sol.body, inner)
        raise EvaluationError(f"cannot evaluate {t!r}")

    return go(t, dict(env))


# ---------------------------------------------------------------------------
# Vectorized evaluation


def eval_grid(t, env: Mapping[str, Any], valuation: Mapping[str, RLam] | None = None,
              bound: int = DEFAULT_BOUND):
    """Evaluate with numpy arrays (or scalars) in `env`, broadcasting."""
    valuation = valuation or {}

    def go(t, env):
        match t:
            case RVar(x):
                if x not in env:
                    raise EvaluationError(f"unbound symbol {x}")
                return env[x]
            case RInt(n):
                return n
            case RStar():
                return 0
            case RBool(b):
                return b
            case Not(a):
                return np.logical_not(go(a, env))
            case And(args):
                out = True
                for a in args:
                    out = np.logical_and(out, go(a, env))
                return out
            case Or(args):
                out = False
                for a in args:
                    out = np.logical_or(out, go(a, env))
                return out
            case Implies(a, b):
                return np.logical_or(np.logical_not(go(a, env)), go(b, env))
            case Le(a, b):
                return np.less_equal(go(a, env), go(b, env))
            case Lt(a, b):
                return np.less(go(a, env), go(b, env))
            case Eq(a, b):
                la, lb = go(a, env), go(b, env)
                if isinstance(la, tuple):
                    return np.logical_and(np.equal(la[0], lb[0]), np.equal(la[1], lb[1]))
                return np.equal(la, lb)
            case Add(args):
                out = 0
                for a in args:
                    out = np.add(out, go(a, env))
                return out
            case Sub(a, b):
                return np.subtract(go(a, env), go(b, env))
            case Mul(k, a):
                return np.multiply(k, go(a, env))
            case Ite(c, a, b):
                return np.where(go(c, env), go(a, env), go(b, env))
            case Forall(x, s, body):
                out = True
                for v in domain(s, bound):
                    out = np.logical_and(out, go(body, {**env, x: v}))
                return out
            case RPair(a, b):
                return (go(a, env), go(b, env))
            case Fst(a):
                return go(a, env)[0]
            case Snd(a):
                return go(a, env)[1]
            case RApp(RLam(ps, body), args):
                inner = dict(env)
                inner.update({p: go(a, env) for (p, _), a in zip(ps, args)})
                return go(body, inner)
            case Unknown(name, args):
                if name not in valuation:
                    raise EvaluationError(f"no valuation for unknown {name}")
                sol = valuation[name]
                inner = {p: go(a, env) for (p, _), a in zip(sol.params, args)}
                return go(sol.body, inner)
        raise EvaluationError(f"cannot evaluate {show(t)} on a grid")

    return go(t, env)


# ---------------------------------------------------------------------------
# Validity


@dataclass(frozen=True)
class Valid:
    pass


@dataclass(frozen=True)
class Invalid:
    counterexample: dict


@dataclass(frozen=True)
class UnknownVerdict:
    reason: str


ValidityResult = Union[Valid, Invalid, UnknownVerdict]


@dataclass(frozen=True)
class Query:
    """∀ universals. ∧ assumptions ⇒ conclusion."""

    universals: tuple  # of (name, Sort)
    assumptions: tuple
    conclusion: Any

    def formula(self):
        return mk_forall(self.universals, mk_implies(mk_and(*self.assumptions), self.conclusion))


def conjuncts(t) -> list:
    t = simplify(t)
    if t == TRUE:
        return []
    return list(t.args) if isinstance(t, And) else [t]


def split_products(universals, formulas):
    """Replace product-sorted universals with one variable per component."""
    univ, fs = [], list(formulas)
    for name, sort in universals:
        if isinstance(sort, SProd):
            l, r = f"{name}.l", f"{name}.r"
            fs = [beta(substitute(f, {name: RPair(RVar(l), RVar(r))})) for f in fs]
            sub_univ, fs = split_products([(l, sort.left), (r, sort.right)], fs)
            univ.extend(sub_univ)
        else:
            univ.append((name, sort))
    return univ, fs


def _has_sub(t) -> bool:
    if isinstance(t, Sub):
        return True
    return any(_has_sub(c) for c in _children(t))


def eliminate_definitions(universals, assumptions, conclusion):
    """Substitute away universals defined by an assumption conjunct `v = t`."""
    univ = dict(universals)
    hyps = []
    for a in assumptions:
        hyps.extend(conjuncts(a))
    changed = True
    while changed:
        changed = False
        for i, h in enumerate(hyps):
            if not isinstance(h, Eq):
                continue
            for lhs, rhs in ((h.lhs, h.rhs), (h.rhs, h.lhs)):
                if isinstance(lhs, RVar) and lhs.name in univ and lhs.name not in free_vars(rhs):
                    if isinstance(univ[lhs.name], SArrow):
                        continue
                    x = lhs.name
                    sort = univ.pop(x)
                    rest = hyps[:i] + hyps[i + 1:]
                    m = {x: rhs}
                    hyps = []
                    for r in rest:
                        hyps.extend(conjuncts(beta(substitute(r, m))))
                    if isinstance(sort, SNat) and _has_sub(rhs):
                        hyps.append(Le(ZERO, rhs))
                    conclusion = beta(substitute(conclusion, m))
                    changed = True
                    break
            if changed:
                break
    return list(univ.items()), hyps, conclusion


def _components(universals, hyps, conclusion):
    names = [n for n, _ in universals]
    parent = {n: n for n in names}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for h in hyps:
        vs = [v for v in free_vars(h) if v in parent]
        for a, b in zip(vs, vs[1:]):
            parent[find(a)] = find(b)
    concl_roots = {find(v) for v in free_vars(conclusion) if v in parent}
    return find, concl_roots


class Grid:
    """Enumerates assignments to scalar universals as broadcast numpy arrays."""

    def __init__(self, universals, bound: int):
        self.names = [n for n, _ in universals]
        self.sorts = [s for _, s in universals]
        self.bound = bound
        self.values = [np.array(domain(s, bound) if not isinstance(s, SUnit) else [0])
                       for s in self.sorts]
        self.values = [v.astype(bool) if isinstance(s, SBool) else v.astype(np.int64)
                       for v, s in zip(self.values, self.sorts)]
        self.size = int(np.prod([len(v) for v in self.values])) if self.values else 1

    def chunks(self):
        """Yield (env, index offset info) slices whose product is at most CHUNK."""
        k = len(self.names)
        if k == 0:
            yield {}, ()
            return
        sizes = [len(v) for v in self.values]
        # fix leading variables until the remainder fits
        lead = 0
        rest = self.size
        while rest > CHUNK and lead < k - 1:
            rest //= sizes[lead]
            lead += 1
        for fixed in itertools.product(*(range(sizes[i]) for i in range(lead))):
            env = {}
            for i in range(lead):
                env[self.names[i]] = self.values[i][fixed[i]]
            free = k - lead
            for j in range(lead, k):
                shape = [1] * free
                shape[j - lead] = sizes[j]
                env[self.names[j]] = self.values[j].reshape(shape)
            yield env, fixed

    def point(self, fixed, flat_index, shape) -> dict:
        k = len(self.names)
        idx = list(fixed) + list(np.unravel_index(flat_index, shape)) if shape else list(fixed)
        out = {}
        for i in range(k):
            v = self.values[i][idx[i]]
            out[self.names[i]] = bool(v) if isinstance(self.sorts[i], SBool) else (
                "⋆" if isinstance(self.sorts[i], SUnit) else int(v))
        return out


def _free_shape(grid: Grid, fixed):
    lead = len(fixed)
    return tuple(len(v) for v in grid.values[lead:])


def find_violation(universals, hyps, conclusion, valuation=None, bound=DEFAULT_BOUND):
    """First grid point satisfying hyps but not conclusion, or None."""
    grid = Grid(universals, bound)
    formula_h = mk_and(*hyps)
    for env, fixed in grid.chunks():
        shape = _free_shape(grid, fixed)
        ok_h = eval_grid(formula_h, env, valuation, bound)
        c = eval_grid(conclusion, env, valuation, bound)
        bad = np.logical_and(ok_h, np.logical_not(c))
        bad = np.broadcast_to(bad, shape) if shape else np.asarray(bad)
        if bad.any():
            flat = int(np.argmax(bad.reshape(-1))) if shape else 0
            return grid.point(fixed, flat, shape)
    return None


def satisfiable(universals, hyps, valuation=None, bound=DEFAULT_BOUND) -> bool:
    return find_violation(universals, hyps, FALSE, valuation, bound) is not None


def _shrink_bound(universals, bound):
    k = sum(1 for _, s in universals if isinstance(s, (SNat, STVar)))
    b = bound
    while k and (b + 1) ** k > GRID_LIMIT and b > 3:
        b -= 1
    return b


def decide(query: Query, valuation=None, bound: int = DEFAULT_BOUND, probe_large: bool = True) -> ValidityResult:
    """Decide validity of a query over the bounded domain."""
    univ, fs = split_products(query.universals, list(query.assumptions) + [query.conclusion])
    hyps, concl = fs[:-1], fs[-1]
    concl = beta(concl)
    # lift ∀ in the conclusion into universals
    while isinstance(concl, Forall):
        univ.append((concl.var, concl.sort))
        concl = concl.body
    univ, hyps, concl = eliminate_definitions(univ, hyps, concl)
    hyps = [h for h in (simplify(h) for h in hyps) if h != TRUE]
    if FALSE in hyps:
        return Valid()
    used = set(free_vars(concl)).union(*(free_vars(h) for h in hyps)) if hyps else set(free_vars(concl))
    univ = [(n, s) for n, s in univ if n in used]
    find, roots = _components(univ, hyps, concl)
    relevant = [(n, s) for n, s in univ if find(n) in roots]
    rel_names = {n for n, _ in relevant}
    rel_hyps = [h for h in hyps if free_vars(h) & rel_names or not free_vars(h)]
    side = [h for h in hyps if h not in rel_hyps]
    if side:
        side_univ = [(n, s) for n, s in univ if n not in rel_names]
        for root in {find(n) for n, _ in side_univ}:
            comp = [(n, s) for n, s in side_univ if find(n) == root]
            names = {n for n, _ in comp}
            comp_h = [h for h in side if free_vars(h) & names]
            b = _shrink_bound(comp, bound)
            if not satisfiable(comp, comp_h, valuation, b):
                return Valid()
    b = _shrink_bound(relevant, bound)
    cex = find_violation(relevant, rel_hyps, concl, valuation, b)
    if cex is not None:
        return Invalid(cex)
    if probe_large and relevant:
        cex = _probe_large(relevant, rel_hyps, concl, valuation, bound)
        if cex is not None:
            return Invalid(cex)
    return Valid()


def _probe_large(universals, hyps, concl, valuation, bound, samples: int = 256):
    """Random points beyond the grid catch verdicts that hinge on the bound."""
    rng = np.random.default_rng(12345)
    env = {}
    for name, sort in universals:
        match sort:
            case SNat() | STVar():
                env[name] = rng.integers(0, 10 * (bound + 1) ** 2, size=samples)
            case SBool():
                env[name] = rng.integers(0, 2, size=samples).astype(bool)
            case _:
                env[name] = np.zeros(samples, dtype=np.int64)
    ok_h = np.broadcast_to(eval_grid(mk_and(*hyps), env, valuation, bound), (samples,))
    c = np.broadcast_to(eval_grid(concl, env, valuation, bound), (samples,))
    bad = np.logical_and(ok_h, np.logical_not(c))
    if bad.any():
        i = int(np.argmax(bad))
        return {n: (bool(env[n][i]) if isinstance(s, SBool) else int(env[n][i]))
                for n, s in universals}
    return None


def check_validity(ctx, psi, valuation=None, bound: int = DEFAULT_BOUND) -> ValidityResult:
    """Decide B(ctx) ⇒ psi. `ctx` is anything with a `validity_query(psi)` method."""
    if hasattr(ctx, "validity_query"):
        return decide(ctx.validity_query(psi), valuation, bound)
    universals, assumptions = ctx
    return decide(Query(tuple(universals), tuple(assumptions), psi), valuation, bound)


# ---------------------------------------------------------------------------
# Measures and interpretation of atoms


@dataclass(frozen=True)
class MeasureCase:
    content: str
    children: tuple
    body: Any


@dataclass(frozen=True)
class Measure:
    name: str
    sort: Sort
    cases: tuple  # of (constructor name, MeasureCase)

    def case(self, con: str) -> MeasureCase:
        for c, mc in self.cases:
            if c == con:
                return mc
        raise KeyError(f"measure {self.name} has no case for {con}")

    def apply(self, con: str, content, children) -> Any:
        mc = self.case(con)
        if len(mc.children) != len(children):
            raise ArityMismatch(f"{con} expects {len(mc.children)} children")
        m = {mc.content: content}
        m.update(zip(mc.children, children))
        return beta(substitute(mc.body, m))


class ArityMismatch(Exception):
    pass


def star_measure(name: str, constructors) -> Measure:
    return Measure(name, UNIT, tuple(
        (c, MeasureCase("_", tuple(f"_{i}" for i in range(k)), RStar())) for c, k in constructors))


def measure_value(sig, v) -> Any:
    """I_D of a constructor value, evaluated structurally."""
    from . import kernel as K

    if not isinstance(v, K.Con):
        raise NotInterpretable(f"not a constructor value: {v!r}")
    con = sig.constructor(v.name)
    if len(v.children) != con.arity:
        raise ArityMismatch(f"{v.name} has arity {con.arity}")
    kids = [measure_value(sig, c) for c in v.children]
    return sig.measure.apply(v.name, interpret_atom(v.content), kids)


def interpret_atom(a, datatypes: Mapping[str, Any] | None = None):
    """Reflect a simple atom as a refinement term."""
    from . import kernel as K

    match a:
        case K.Var(x):
            return RVar(x)
        case K.Nat(n):
            return RInt(n)
        case K.BoolLit(b):
            return RBool(b)
        case K.Triv():
            return RStar()
        case K.PairA(l, r):
            return RPair(interpret_atom(l, datatypes), interpret_atom(r, datatypes))
        case K.Con(c, a0, ch):
            sig = _sig_for(c, datatypes)
            return sig.measure.apply(c, interpret_atom(a0, datatypes),
                                     [interpret_atom(x, datatypes) for x in ch])
    raise NotInterpretable(f"atom {a!r} has no logical interpretation")


def _sig_for(con: str, datatypes):
    if datatypes is None:
        from .stdlib import library_signatures
        datatypes = library_signatures()
    for sig in datatypes.values() if isinstance(datatypes, Mapping) else datatypes:
        if sig.has_constructor(con):
            return sig
    raise NotInterpretable(f"unknown constructor {con}")


# ---------------------------------------------------------------------------
# Linear forms


class NonLinear(Exception):
    pass


def linear_form(t) -> tuple[dict, int]:
    """Coefficients of a linear ℕ-term over atomic subterms, plus a constant."""
    coeffs: dict = {}
    const = 0

    def go(t, k):
        nonlocal const
        match t:
            case RInt(n):
                const += k * n
            case Add(args):
                for a in args:
                    go(a, k)
            case Sub(a, b):
                go(a, k)
                go(b, -k)
            case Mul(m, a):
                go(a, k * m)
            case RVar() | Unknown() | Ite() | Fst() | Snd() | RApp():
                coeffs[t] = coeffs.get(t, 0) + k
            case _:
                raise NonLinear(f"not a linear term: {show(t)}")

    go(t, 1)
    return {a: c for a, c in coeffs.items() if c}, const


# ---------------------------------------------------------------------------
# Printing


_PREC = {"or": 1, "and": 2, "not": 3, "rel": 4, "add": 5, "mul": 6, "atom": 9}


def show(t) -> str:
    return _show(t, 0)


def _wrap(s, mine, ctx):
    return f"({s})" if mine < ctx else s


def _show(t, ctx: int) -> str:
    match t:
        case RVar(x):
            return x
        case RInt(n):
            return str(n) if n >= 0 else f"({n})"
        case RStar():
            return "⋆"
        case RBool(b):
            return "⊤" if b else "⊥"
        case Not(a):
            return _wrap("¬" + _show(a, 9), 3, ctx)
        case And(args):
            return _wrap(" ∧ ".join(_show(a, 3) for a in args), 2, ctx)
        case Or(args):
            return _wrap(" ∨ ".join(_show(a, 2) for a in args), 1, ctx)
        case Implies(a, b):
            return _wrap(f"{_show(a, 1)} ⇒ {_show(b, 0)}", 0, ctx)
        case Le(a, b):
            return _wrap(f"{_show(a, 5)} ≤ {_show(b, 5)}", 4, ctx)
        case Lt(a, b):
            return _wrap(f"{_show(a, 5)} < {_show(b, 5)}", 4, ctx)
        case Eq(a, b):
            return _wrap(f"{_show(a, 5)} = {_show(b, 5)}", 4, ctx)
        case Add(args):
            return _wrap(" + ".join(_show(a, 5) for a in args), 5, ctx)
        case Sub(a, b):
            return _wrap(f"{_show(a, 5)} − {_show(b, 6)}", 5, ctx)
        case Mul(k, a):
            return _wrap(f"{k}·{_show(a, 9)}", 6, ctx)
        case Ite(c, a, b):
            return f"ite({_show(c, 0)}, {_show(a, 0)}, {_show(b, 0)})"
        case Forall(x, s, body):
            return _wrap(f"∀{x}:{s}. {_show(body, 0)}", 0, ctx)
        case RLam(ps, body):
            inner = ", ".join(p for p, _ in ps)
            return _wrap(f"λ({inner}). {_show(body, 0)}", 0, ctx)
        case RApp(f, args):
            return f"{_show(f, 9)}({', '.join(_show(a, 0) for a in args)})"
        case RPair(a, b):
            return f"({_show(a, 0)}, {_show(b, 0)})"
        case Fst(a):
            return f"{_show(a, 9)}.l"
        case Snd(a):
            return f"{_show(a, 9)}.r"
        case Unknown(name, args):
            return name if not args else f"{name}({', '.join(_show(a, 0) for a in args)})"
    return repr(t)


def to_smtlib(t) -> str:
    """SMT-LIB v2 rendering of a quantifier-free or prenex-∀ CLIA term."""
    match t:
        case RVar(x):
            return smt_name(x)
        case RInt(n):
            return str(n) if n >= 0 else f"(- {-n})"
        case RStar():
            return "0"
        case RBool(b):
            return "true" if b else "false"
        case Not(a):
            return f"(not {to_smtlib(a)})"
        case And(args):
            return "(and " + " ".join(to_smtlib(a) for a in args) + ")"
        case Or(args):
            return "(or " + " ".join(to_smtlib(a) for a in args) + ")"
        case Implies(a, b):
            return f"(=> {to_smtlib(a)} {to_smtlib(b)})"
        case Le(a, b):
            return f"(<= {to_smtlib(a)} {to_smtlib(b)})"
        case Lt(a, b):
            return f"(< {to_smtlib(a)} {to_smtlib(b)})"
        case Eq(a, b):
            return f"(= {to_smtlib(a)} {to_smtlib(b)})"
        case Add(args):
            return "(+ " + " ".join(to_smtlib(a) for a in args) + ")"
        case Sub(a, b):
            return f"(- {to_smtlib(a)} {to_smtlib(b)})"
        case Mul(k, a):
            return f"(* {k} {to_smtlib(a)})"
        case Ite(c, a, b):
            return f"(ite {to_smtlib(c)} {to_smtlib(a)} {to_smtlib(b)})"
        case Forall(x, s, body):
            guard = "" if isinstance(s, SBool) else f"(=> (>= {smt_name(x)} 0) "
            close = "" if isinstance(s, SBool) else ")"
            srt = "Bool" if isinstance(s, SBool) else "Int"
            return f"(forall (({smt_name(x)} {srt})) {guard}{to_smtlib(body)}{close})"
        case Unknown(name, ()):
            return smt_name(name)
    raise NonLinear(f"cannot render {show(t)} in LIA")


def smt_name(x: str) -> str:
    safe = x.replace("ν", "nu").replace("$", "_d").replace("'", "_p").replace(".", "_")
    return safe if safe.isidentifier() else f"|{x}|"
