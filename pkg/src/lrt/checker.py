"""Constraint generation: check core expressions against resource-annotated types.

The engine first normalizes each body: partial-application spines are
collapsed into saturated calls, let-bound conditionals and matches are
commuted outward, nested lets are reassociated, ticks are pushed onto the
computation they pay for, and let-bound simple atoms are inlined. The typing
rules then run over the normalized term, emitting obligations whose unknowns
are left for the solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any

from . import kernel as K
from . import logic as L
from . import potential as P
from . import typesys as T
from .logic import NU, NU_VAR, TRUE, ZERO


class CheckError(Exception):
    def __init__(self, msg, span=None):
        super().__init__(f"{span}: {msg}" if span else msg)
        self.msg = msg
        self.span = span


class MissingSignature(CheckError):
    pass


class RuleError(CheckError):
    pass


@dataclass(frozen=True)
class Call:
    """A saturated application of a named function or primitive operator."""

    head: str
    args: tuple
    prim: bool = False


@dataclass(frozen=True)
class _Partial:
    head: str
    args: tuple
    prim: bool


@dataclass
class ConstraintSet:
    binding: str = ""
    obligations: list = field(default_factory=list)
    unknowns: dict = field(default_factory=dict)
    datatypes: Any = None
    dependent: bool = False

    def nontrivial(self) -> list:
        return [o for o in self.obligations if not T.is_trivial(o)]

    def referenced_unknowns(self) -> set:
        out = set()
        for o in self.obligations:
            out |= o.unknowns()
        return out

    def slack(self) -> list:
        used = self.referenced_unknowns()
        return sorted(n for n in self.unknowns if n not in used)

    def by_rule(self) -> dict:
        out: dict = {}
        for o in self.obligations:
            out.setdefault(o.rule, []).append(o)
        return out

    def to_json(self, keep_trivial: bool = False) -> dict:
        obls = self.obligations if keep_trivial else self.nontrivial()
        return {
            "binding": self.binding,
            "dependent": self.dependent,
            "unknowns": {n: [p for p, _ in d.params] for n, d in sorted(self.unknowns.items())},
            "slack": self.slack(),
            "obligations": [o.to_json(self.datatypes) for o in obls],
        }

    def show(self, keep_trivial: bool = False) -> str:
        obls = self.obligations if keep_trivial else self.nontrivial()
        return "\n".join(o.show(self.datatypes) for o in obls)


# ---------------------------------------------------------------------------
# Helpers over expressions


def demanding(e) -> bool:
    """Whether evaluating e may consume resources: a positive tick or any call."""
    match e:
        case Call() | K.App():
            return True
        case K.Tick(c, body):
            return c > 0 or demanding(body)
        case K.Let(_, a, b):
            return demanding(a) or demanding(b)
        case K.Cond(_, a, b):
            return demanding(a) or demanding(b)
        case K.MatD(_, bs):
            return any(demanding(b.body) for b in bs)
        case K.MatP(_, _, _, body):
            return demanding(body)
    return False


def free_vars(e) -> frozenset:
    match e:
        case Call(h, args, prim):
            out = frozenset() if prim else frozenset([h])
            for a in args:
                out |= K.free_vars(a)
            return out
        case K.Let(x, a, b):
            return free_vars(a) | (free_vars(b) - {x})
        case K.Tick(_, b):
            return free_vars(b)
        case K.Cond(g, a, b):
            return K.free_vars(g) | free_vars(a) | free_vars(b)
        case K.MatD(s, bs):
            out = K.free_vars(s)
            for b in bs:
                out |= free_vars(b.body) - {b.content, *b.children}
            return out
        case K.MatP(s, x, y, body):
            return K.free_vars(s) | (free_vars(body) - {x, y})
    return K.free_vars(e)


def rename(e, mapping: dict):
    """Substitute atoms for variables in a normalized or core expression."""
    if not mapping:
        return e
    match e:
        case Call(h, args, prim):
            head = h
            if not prim and h in mapping:
                tgt = mapping[h]
                if not isinstance(tgt, K.Var):
                    raise RuleError(f"cannot apply {K.show(tgt)}")
                head = tgt.name
            return Call(head, tuple(K.substitute_many(mapping, a) for a in args), prim)
        case K.Let(x, a, b):
            inner = {k: v for k, v in mapping.items() if k != x}
            return K.Let(x, rename(a, mapping), rename(b, inner))
        case K.Tick(c, b):
            return K.Tick(c, rename(b, mapping))
        case K.Cond(g, a, b):
            return K.Cond(K.substitute_many(mapping, g), rename(a, mapping), rename(b, mapping))
        case K.MatD(s, bs):
            out = []
            for b in bs:
                inner = {k: v for k, v in mapping.items() if k not in (b.content, *b.children)}
                out.append(K.Branch(b.con, b.content, b.children, rename(b.body, inner)))
            return K.MatD(K.substitute_many(mapping, s), tuple(out))
        case K.MatP(s, x, y, body):
            inner = {k: v for k, v in mapping.items() if k not in (x, y)}
            return K.MatP(K.substitute_many(mapping, s), x, y, rename(body, inner))
    return K.substitute_many(mapping, e)


def push_tick(c, e):
    """tick c e distributed onto the first computation of e (cost-equivalent)."""
    match e:
        case K.Let(y, a, b):
            return K.Let(y, K.Tick(c, a), b)
        case K.Cond(g, a, b):
            return K.Cond(g, K.Tick(c, a), K.Tick(c, b))
        case K.MatD(s, bs):
            return K.MatD(s, tuple(K.Branch(b.con, b.content, b.children, K.Tick(c, b.body)) for b in bs))
        case K.MatP(s, x, y, body):
            return K.MatP(s, x, y, K.Tick(c, body))
    return None


def _schema_arity(S) -> int:
    body = S.body if isinstance(S, T.Poly) else S
    n = 0
    while isinstance(body, T.Fun):
        n += 1
        body = body.res
    return n


def _potential_terms(S):
    match S:
        case T.Poly(_, body):
            yield from _potential_terms(body)
        case T.Fun(_, a, r, _, phi):
            yield phi
            yield from _potential_terms(a)
            yield from _potential_terms(r)
        case T.Scalar(b, _, phi):
            yield phi
            yield from _base_terms(b)


def _base_terms(b):
    match b:
        case T.ProdB(l, r):
            yield from _base_terms(l)
            yield from _base_terms(r)
        case T.DataB(_, elem, theta):
            if elem is not None:
                yield from _potential_terms(elem)
            yield from theta


def is_value_dependent(S) -> bool:
    """A signature whose potentials mention variables needs higher-order unknowns."""
    for t in _potential_terms(S):
        body = t.body if isinstance(t, L.RLam) else t
        if L.free_vars(L.simplify(body)):
            return True
    return False


# ---------------------------------------------------------------------------
# The checker


PRIM_TYPES = {
    "<": "cmp", ">": "cmp", "<=": "cmp", ">=": "cmp", "==": "eq",
    "+": "arith", "-": "arith", "&&": "bool", "||": "bool", "not": "bool",
}


class Checker:
    def __init__(self, module, dependent: bool | None = None):
        self.module = module
        self.dts = module.datatypes
        self.signatures = module.signatures
        self.force_dependent = dependent
        self.counter = itertools.count(1)

    # entry points
    def check_program(self, names=None) -> dict:
        out = {}
        for b in self.module.core.bindings:
            if names is not None and b.name not in names:
                continue
            if b.name in getattr(self.module, "library", ()):
                continue
            if b.name not in self.signatures:
                continue
            out[b.name] = self.check_binding(b.name)
        return out

    def check_binding(self, name: str) -> ConstraintSet:
        if name not in self.signatures:
            raise MissingSignature(f"binding {name} has no type signature")
        sig = self.signatures[name]
        expr = self.module.core.lookup(name)
        self.current = name
        self.span = self.module.spans.get(name)
        if self.force_dependent is None:
            called = K.free_vars(expr) & set(self.signatures)
            dep = any(is_value_dependent(self.signatures[g]) for g in called | {name})
        else:
            dep = self.force_dependent
        self.table = T.UnknownTable(dependent=dep, dts=self.dts)
        self.out = ConstraintSet(name, [], self.table.decls, self.dts, dep)
        tvs, body = (sig.tvars, sig.body) if isinstance(sig, T.Poly) else ((), sig)
        ctx = T.Context(tuple(T.TVarEntry(a) for a in tvs))
        for g, S in self.signatures.items():
            ctx = ctx.bind(g, S)
        for ob in T.wf_type(T.Context(), sig, self.dts, self.span):
            self.emit(ob)
        self.check_function(ctx, expr, body, top=True)
        return self.out

    def check_term(self, expr, goal, free: int = 0, name: str = "<term>") -> ConstraintSet:
        """Check a closed term against a scalar goal with `free` units available."""
        self.current, self.span = name, None
        self.table = T.UnknownTable(dependent=False, dts=self.dts)
        self.out = ConstraintSet(name, [], self.table.decls, self.dts, False)
        ctx = T.Context()
        for g, S in self.signatures.items():
            ctx = ctx.bind(g, S)
        if free:
            ctx = T.Context(ctx.entries + (T.FreeEntry(L.RInt(free)),))
        self.check(ctx, self.normalize(expr), goal)
        return self.out

    def emit(self, ob: T.Obligation):
        if ob.span is None:
            ob = replace(ob, span=self.span)
        self.out.obligations.append(ob)

    def obligation(self, kind, ctx, formula, rule, label, nu=None, extra=()):
        self.emit(T.Obligation(kind, ctx, formula, rule, label, nu, tuple(extra), self.span))

    # normalization
    def arity(self, head: str, prim: bool) -> int:
        if prim:
            return K.PRIM_ARITY[head]
        S = self.signatures.get(head)
        return _schema_arity(S) if S is not None else 1

    def _app(self, e: K.App, env: dict):
        f, a = e.fn, e.arg
        match f:
            case K.Var(g) if g in env:
                head, args, prim = env[g].head, env[g].args, env[g].prim
            case K.Var(g):
                head, args, prim = g, (), False
            case K.Prim(op, pre):
                head, args, prim = op, tuple(pre), True
            case _:
                raise RuleError(f"unsupported application head {K.show(f)}", self.span)
        args = args + (a,)
        n = self.arity(head, prim)
        if len(args) == n:
            return Call(head, args, prim)
        if len(args) < n:
            return _Partial(head, args, prim)
        raise RuleError(f"{head} applied to too many arguments", self.span)

    def normalize(self, e, env=None):
        env = env or {}
        match e:
            case K.Let(x, e1, e2):
                return self._norm_let(x, e1, e2, env)
            case K.App():
                r = self._app(e, env)
                if isinstance(r, _Partial):
                    raise RuleError(f"partial application of {r.head} in result position", self.span)
                return r
            case K.Tick(c, body):
                return K.Tick(c, self.normalize(body, env))
            case K.Cond(g, a, b):
                return K.Cond(g, self.normalize(a, env), self.normalize(b, env))
            case K.MatD(s, bs):
                return K.MatD(s, tuple(K.Branch(b.con, b.content, b.children, self.normalize(b.body, env))
                                       for b in bs))
            case K.MatP(s, x, y, body):
                return K.MatP(s, x, y, self.normalize(body, env))
            case K.Lam(x, body):
                return K.Lam(x, self.normalize(body, env))
            case K.Fix(f, x, body):
                return K.Fix(f, x, self.normalize(body, env))
            case K.Var(v) if v in env:
                raise RuleError(f"partial application {v} in result position", self.span)
        return e

    def _fresh(self, base: str) -> str:
        return f"{base.split('~')[0]}~{next(self.counter)}"

    def _norm_let(self, x, e1, e2, env):
        match e1:
            case _ if K.is_simple_atom(e1):
                if any(v in env for v in K.free_vars(e1)):
                    raise RuleError("partial application used as a value", self.span)
                return self.normalize(rename(e2, {x: e1}), env)
            case K.Prim(op, pre):
                return self.normalize(e2, {**env, x: _Partial(op, tuple(pre), True)})
            case K.Let(y, a, b):
                y2 = self._fresh(y) if y in free_vars(e2) or y == x else y
                b2 = rename(b, {y: K.Var(y2)}) if y2 != y else b
                return self.normalize(K.Let(y2, a, K.Let(x, b2, e2)), env)
            case K.Cond(g, a, b):
                return K.Cond(g, self._norm_let(x, a, e2, env), self._norm_let(x, b, e2, env))
            case K.MatD(s, bs):
                out = []
                for br in bs:
                    content, kids, body = br.content, br.children, br.body
                    clash = {content, *kids} & (free_vars(e2) | {x})
                    if clash:
                        m = {v: K.Var(self._fresh(v)) for v in clash}
                        body = rename(body, m)
                        content = m[content].name if content in m else content
                        kids = tuple(m[k].name if k in m else k for k in kids)
                    out.append(K.Branch(br.con, content, kids, self._norm_let(x, body, e2, env)))
                return K.MatD(s, tuple(out))
            case K.MatP(s, l, r, body):
                clash = {l, r} & (free_vars(e2) | {x})
                if clash:
                    m = {v: K.Var(self._fresh(v)) for v in clash}
                    body = rename(body, m)
                    l = m[l].name if l in m else l
                    r = m[r].name if r in m else r
                return K.MatP(s, l, r, self._norm_let(x, body, e2, env))
            case K.Tick(c, K.Let(y, K.App() as a, b)) if isinstance(self._app(a, env), _Partial):
                y2 = self._fresh(y) if y in free_vars(e2) or y == x else y
                b2 = rename(b, {y: K.Var(y2)}) if y2 != y else b
                return self._norm_let(x, K.Tick(c, b2), e2, {**env, y2: self._app(a, env)})
            case K.Tick(c, K.Let(y, a, b)) if K.is_simple_atom(a):
                return self._norm_let(x, K.Tick(c, rename(b, {y: a})), e2, env)
            case K.Tick(c, inner):
                pushed = push_tick(c, inner)
                if pushed is not None:
                    return self._norm_let(x, pushed, e2, env)
                inner_n = self._norm_bound(inner, env)
                return K.Let(x, K.Tick(c, inner_n), self.normalize(e2, env))
            case K.App():
                r = self._app(e1, env)
                if isinstance(r, _Partial):
                    return self.normalize(e2, {**env, x: r})
                return K.Let(x, r, self.normalize(e2, env))
            case K.Impossible():
                return K.Impossible()
            case K.Lam() | K.Fix():
                raise RuleError(f"local function {x} needs a top-level signature", self.span)
        raise RuleError(f"unsupported let-bound expression {K.summary(e1)}", self.span)

    def _norm_bound(self, e, env):
        match e:
            case K.App():
                r = self._app(e, env)
                if isinstance(r, _Partial):
                    raise RuleError("partial application under tick", self.span)
                return r
            case K.Tick(c, inner):
                pushed = push_tick(c, inner)
                if pushed is not None:
                    raise RuleError("unsupported nested tick", self.span)
                return K.Tick(c, self._norm_bound(inner, env))
        if K.is_simple_atom(e) or isinstance(e, K.Impossible):
            return e
        raise RuleError(f"unsupported bound expression {K.summary(e)}", self.span)

    # functions
    def check_function(self, ctx, expr, goal, top=False):
        """T-Fix / T-Abs against an arrow goal, then the body."""
        match expr, goal:
            case K.Fix(f, x, body), T.Fun():
                if not top:
                    ctx = ctx.bind(f, self._zeroed(goal))
                return self._check_lam(ctx, x, body, goal)
            case K.Lam(x, body), T.Fun():
                return self._check_lam(ctx, x, body, goal)
        if isinstance(goal, T.Fun):
            raise RuleError(f"expected a function against {T.show_type(goal)}", self.span)
        self.check(ctx, self.normalize(expr), goal)

    def _check_lam(self, ctx, x, body, goal: T.Fun):
        res = goal.res
        if goal.param != x:
            res = T.subst_refinements(res, {goal.param: L.RVar(x)})
        ctx = ctx.bind(x, goal.arg)
        if isinstance(res, T.Fun) and isinstance(body, (K.Lam, K.Fix)):
            return self.check_function(ctx, body, res, top=False)
        self.check(ctx, self.normalize(body), res)

    def _zeroed(self, ty):
        return T.drop_potential(ty, self.dts) if not isinstance(ty, T.Poly) else ty

    # context manipulation
    def sources(self, ctx: T.Context) -> list:
        out = []
        for i, e in enumerate(ctx.entries):
            match e:
                case T.FreeEntry(phi) if not T.is_zero(phi):
                    out.append(i)
                case T.Bind(_, T.Scalar() | T.Fun() as ty) if T.has_top_potential(ty):
                    out.append(i)
        return out

    def _pot_at(self, e):
        match e:
            case T.FreeEntry(phi):
                return phi
            case T.Bind(x, T.Scalar() as ty):
                return L.substitute(ty.potential, {NU: L.RVar(x)})
            case T.Bind(_, T.Fun() as ty):
                return ty.potential
        return ZERO

    def withdraw(self, ctx: T.Context, cost, rule, label) -> T.Context:
        """S-Transfer: move `cost` units out of the context's free potential."""
        srcs = self.sources(ctx)
        prefix = lambda i: T.Context(ctx.entries[:i])
        if not srcs:
            self.obligation("wf-nonneg", ctx, L.Le(cost, ZERO), rule, f"{label}: no free potential")
            return ctx
        entries = list(ctx.entries)
        if len(srcs) == 1:
            i = srcs[0]
            e = entries[i]
            match e:
                case T.FreeEntry(phi):
                    left = L.Sub(phi, cost)
                    self.obligation("wf-nonneg", ctx, L.Le(ZERO, left), rule, label)
                    entries[i] = T.FreeEntry(left)
                case T.Bind(x, ty):
                    left = L.Sub(ty.potential, cost)
                    nu = None
                    if isinstance(ty, T.Scalar):
                        nu = T.Scalar(ty.base, L.Eq(NU_VAR, L.RVar(x)))
                    self.obligation("wf-nonneg", ctx, L.Le(ZERO, left), rule, f"{label} from {x}", nu)
                    entries[i] = T.Bind(x, replace(ty, potential=left))
            return T.Context(tuple(entries))
        total = L.mk_add(*(self._pot_at(entries[i]) for i in srcs))
        w = self.table.fresh("w", self.table.params_for(ctx))
        self.obligation("subtype-leq", ctx, L.Le(L.Add((cost, w)), total), rule, f"{label} (transfer)")
        for i in srcs:
            e = entries[i]
            entries[i] = T.FreeEntry(ZERO) if isinstance(e, T.FreeEntry) else T.Bind(e.name, replace(e.ty, potential=ZERO))
        entries.append(T.FreeEntry(w))
        return T.Context(tuple(entries))

    def zero_context(self, ctx: T.Context, used=None) -> T.Context:
        """Drop all potential; bindings outside `used` also lose their multiplicity."""
        def go(e):
            match e:
                case T.FreeEntry():
                    return None
                case T.Bind(x, T.Scalar() | T.Fun() as ty):
                    if used is None or x in used:
                        return T.Bind(x, T.drop_potential(ty, self.dts))
                    return T.Bind(x, T.multiply_type(0, ty, self.dts))
            return e
        return ctx.map_entries(go)

    def share_context(self, ctx: T.Context, label: str):
        left, right = [], []
        for i, e in enumerate(ctx.entries):
            prefix = T.Context(tuple(left))
            match e:
                case T.Bind(x, T.Scalar() | T.Fun() as ty) if T.has_potential(ty, self.dts):
                    t1, t2, obs = T.share(prefix, ty, self.table, self.dts, "Share", f"{label}: {x}", self.span)
                    for o in obs:
                        self.emit(o)
                    left.append(T.Bind(x, t1))
                    right.append(T.Bind(x, t2))
                case T.FreeEntry(phi) if not T.is_zero(phi):
                    params = self.table.params_for(prefix)
                    w1, w2 = self.table.fresh("w", params), self.table.fresh("w", params)
                    self.obligation("sharing-eq", prefix, L.Eq(phi, L.Add((w1, w2))), "Share-Free",
                                    f"{label}: free potential")
                    left.append(T.FreeEntry(w1))
                    right.append(T.FreeEntry(w2))
                case _:
                    left.append(e)
                    right.append(e)
        return T.Context(tuple(left)), T.Context(tuple(right))

    def split(self, ctx, e1, e2, need_left: bool, need_right: bool, label: str):
        if need_left and need_right:
            return self.share_context(ctx, label)
        if need_left:
            return ctx, self.zero_context(ctx, free_vars(e2))
        return self.zero_context(ctx, free_vars(e1)), ctx

    # interpretation
    def interp(self, a):
        try:
            return L.interpret_atom(a, self.dts)
        except L.NotInterpretable as exc:
            raise RuleError(str(exc), self.span) from exc

    def atom_type(self, ctx, a):
        match a:
            case K.Var(x):
                ty = ctx.lookup(x)
                if ty is None:
                    raise RuleError(f"unbound variable {x}", self.span)
                return ty
            case K.Nat(n):
                return T.Scalar(T.NatB(), L.Eq(NU_VAR, L.RInt(n)))
            case K.BoolLit(b):
                return T.Scalar(T.BoolB(), L.Eq(NU_VAR, L.RBool(b)))
            case K.Triv():
                return T.Scalar(T.UnitB())
            case K.PairA(l, r):
                tl, tr = self.atom_type(ctx, l), self.atom_type(ctx, r)
                return T.Scalar(T.ProdB(_base(tl), _base(tr)))
            case K.Con(c, content, _):
                sig = self.dts.by_constructor(c)
                elem = None
                if sig.tparams:
                    ct = self.atom_type(ctx, content) if sig.constructor(c).content_var != "_" else None
                    elem = T.Scalar(ct.base) if ct is not None and isinstance(ct, T.Scalar) else None
                return T.Scalar(T.DataB(sig.name, elem, sig.zero_theta()))
        raise RuleError(f"no type for atom {K.show(a)}", self.span)

    # atoms
    def consume(self, ctx, a) -> T.Context:
        names = K.free_vars(a)

        def go(e):
            if isinstance(e, T.Bind) and e.name in names and isinstance(e.ty, (T.Scalar, T.Fun)):
                return T.Bind(e.name, T.multiply_type(0, e.ty, self.dts))
            return e

        return ctx.map_entries(go)

    def check_atom(self, ctx, a, goal, label) -> T.Context:
        """T-SimpAtom; the goal's top-level potential may be drawn from any free source."""
        if isinstance(a, (K.Lam, K.Fix)):
            if not isinstance(goal, T.Fun):
                raise RuleError(f"function passed where {T.show_type(goal)} is expected", self.span)
            inner = self.zero_context(ctx) if goal.mult == T.INF else ctx
            self.check_function(inner, a, goal)
            return ctx
        if isinstance(goal, T.Poly):
            raise RuleError("polymorphic arguments are not supported", self.span)
        if isinstance(goal, T.Fun):
            if not isinstance(a, K.Var):
                raise RuleError(f"expected a function for {label}", self.span)
            ty = self.atom_type(ctx, a)
            if isinstance(ty, T.Poly):
                ty = self.instantiate_zero(ty, goal)
            for o in T.subtype(ctx, ty, goal, self.dts, "Sub", label, self.span):
                self.emit(o)
            return self.consume(ctx, a)
        top = L.substitute(goal.potential, {NU: self.interp(a)})
        if not T.is_zero(top):
            srcs = self.sources(ctx)
            only_self = (isinstance(a, K.Var) and len(srcs) == 1 and isinstance(ctx.entries[srcs[0]], T.Bind)
                         and ctx.entries[srcs[0]].name == a.name)
            if not only_self:
                ctx = self.withdraw(ctx, top, "S-Relax", label)
                goal = replace(goal, potential=ZERO)
        return self.check_atom_structure(ctx, a, goal, label)

    def check_atom_structure(self, ctx, a, goal: T.Scalar, label) -> T.Context:
        if L.simplify(goal.refinement) != TRUE:
            f = L.substitute(goal.refinement, {NU: self.interp(a)})
            self.obligation("validity", ctx, f, "T-SimpAtom", f"{label} refinement")
        match a:
            case K.Var(x):
                ty = self.atom_type(ctx, a)
                if isinstance(ty, T.Poly):
                    raise RuleError(f"polymorphic {x} used as a value", self.span)
                if isinstance(ty, T.Fun):
                    raise RuleError(f"function {x} used where {T.show_type(goal)} is expected", self.span)
                mine = T.Scalar(ty.base, L.Eq(NU_VAR, L.RVar(x)), ty.potential)
                want = replace(goal, refinement=TRUE)
                for o in T.subtype(ctx, mine, want, self.dts, "Sub", label, self.span):
                    self.emit(o)
                return self.consume(ctx, a)
            case K.Nat() | K.BoolLit() | K.Triv():
                ty = self.atom_type(ctx, a)
                if type(ty.base) is not type(goal.base):
                    raise T.ShapeMismatch(f"{K.show(a)} is not a {T.show_base(goal.base)}")
                return ctx
            case K.PairA(l, r):
                if not isinstance(goal.base, T.ProdB):
                    raise T.ShapeMismatch(f"pair where {T.show_type(goal)} is expected")
                ctx = self.check_atom(ctx, l, T.Scalar(goal.base.left), f"{label}.1")
                return self.check_atom(ctx, r, T.Scalar(goal.base.right), f"{label}.2")
            case K.Con(c, content, children):
                B = goal.base
                if not isinstance(B, T.DataB):
                    raise T.ShapeMismatch(f"constructor {c} where {T.show_type(goal)} is expected")
                sig = self.dts[B.name]
                if not sig.has_constructor(c):
                    raise T.ShapeMismatch(f"{c} is not a constructor of {B.name}")
                j = sig.index(c)
                y = self.interp(content)
                pi = P.extract_constructor_potential(sig, j, y, B.theta)
                if not T.is_zero(pi):
                    ctx = self.withdraw(ctx, pi, "SimpAtom-ConsD", f"{label}: {c} potential")
                ctx = self.check_atom(ctx, content, P.content_type(sig, j, B), f"{label}: {c} content")
                for i, ch in enumerate(children):
                    cb = P.child_base(sig, j, i, y, B)
                    ctx = self.check_atom(ctx, ch, T.Scalar(cb), f"{label}: {c} child {i + 1}")
                return ctx
        raise RuleError(f"unsupported atom {K.show(a)}", self.span)

    # instantiation
    def instantiate_zero(self, S: T.Poly, goal=None, arg_types=()):
        """S-Inst with potential-free instances found by first-order unification."""
        body = S.body
        sub: dict = {}
        params = []
        t = body
        while isinstance(t, T.Fun):
            params.append(t.arg)
            t = t.res
        for p, at in zip(params, arg_types):
            if at is not None:
                _unify(p, at, sub, self.dts)
        if goal is not None:
            _unify(body, goal, sub, self.dts)
        for a in S.tvars:
            U = T.Scalar(sub.get(a, T.UnitB()))
            body = T.substitute_type(U, a, body, self.dts)
        return body

    def instantiate_recursive(self, ctx, S: T.Poly, args):
        """Polymorphic recursion: α ↦ α^u with a fresh pass-through potential u."""
        body = S.body
        params = []
        t = body
        while isinstance(t, T.Fun):
            params.append(t.arg)
            t = t.res
        for a in S.tvars:
            zero = False
            for p, arg in zip(params, args):
                if isinstance(p, T.Scalar) and isinstance(p.base, T.TVarB) and p.base.name == a \
                        and p.base.mult not in (0,):
                    ty = self.atom_type(ctx, arg) if isinstance(arg, K.Var) else None
                    if ty is None or (isinstance(ty, T.Scalar) and not T.has_potential(ty, self.dts)):
                        zero = True
            if zero:
                U = T.Scalar(T.TVarB(a))
            else:
                u = self.table.fresh("s", self.table.params_for(ctx, L.STVar(a)))
                U = T.Scalar(T.TVarB(a), TRUE, u)
            body = T.substitute_type(U, a, body, self.dts)
        return body

    # calls
    def call(self, ctx, c: Call, label):
        """Check the arguments of a call; returns (result type, remaining context)."""
        if c.prim:
            return self.prim_call(ctx, c), ctx
        S = ctx.lookup(c.head)
        if S is None:
            raise RuleError(f"unbound function {c.head}", self.span)
        if isinstance(S, T.Poly):
            if c.head == self.current:
                S = self.instantiate_recursive(ctx, S, c.args)
            else:
                arg_types = [self._arg_type(ctx, a) for a in c.args]
                S = self.instantiate_zero(S, None, arg_types)
        ty = S
        for i, a in enumerate(c.args):
            if not isinstance(ty, T.Fun):
                raise RuleError(f"{c.head} applied to too many arguments", self.span)
            ctx = self.check_atom(ctx, a, ty.arg, f"argument {ty.param} of {c.head}")
            ty = T.subst_refinements(ty.res, {ty.param: self.interp(a)}) if not _is_fun_atom(a) else ty.res
        return ty, ctx

    def _arg_type(self, ctx, a):
        try:
            t = self.atom_type(ctx, a)
        except RuleError:
            return None
        return t if isinstance(t, T.Scalar) else None

    def prim_call(self, ctx, c: Call):
        args = [self.interp(a) for a in c.args]
        tys = [self.atom_type(ctx, a) for a in c.args]
        kind = PRIM_TYPES[c.head]
        sorts = [T.base_sort(t.base, self.dts) if isinstance(t, T.Scalar) else None for t in tys]
        match kind:
            case "cmp":
                if sorts[0] != sorts[1] or not L.is_ordered_sort(sorts[0]):
                    raise RuleError(f"cannot compare {sorts[0]} with {sorts[1]}", self.span)
                a, b = args
                rel = {"<": L.Lt(a, b), ">": L.Lt(b, a), "<=": L.Le(a, b), ">=": L.Le(b, a)}[c.head]
                return T.Scalar(T.BoolB(), L.Eq(NU_VAR, rel))
            case "eq":
                if sorts[0] != sorts[1]:
                    raise RuleError(f"cannot compare {sorts[0]} with {sorts[1]}", self.span)
                return T.Scalar(T.BoolB(), L.Eq(NU_VAR, L.Eq(*args)))
            case "arith":
                if sorts != [L.NAT, L.NAT]:
                    raise RuleError("arithmetic needs natural numbers", self.span)
                a, b = args
                val = L.Add((a, b)) if c.head == "+" else L.Ite(L.Le(b, a), L.Sub(a, b), ZERO)
                return T.Scalar(T.NatB(), L.Eq(NU_VAR, val))
            case "bool":
                if any(s != L.BOOL for s in sorts):
                    raise RuleError("boolean operator on non-booleans", self.span)
                match c.head:
                    case "&&":
                        val = L.And(tuple(args))
                    case "||":
                        val = L.Or(tuple(args))
                    case _:
                        val = L.Not(args[0])
                return T.Scalar(T.BoolB(), L.Eq(NU_VAR, val))
        raise RuleError(f"unknown primitive {c.head}", self.span)

    # expressions
    def check(self, ctx, e, goal):
        match e:
            case K.Let(x, e1, e2):
                need_l = demanding(e1)
                need_r = demanding(e2) or T.has_potential(goal, self.dts)
                c1, c2 = self.split(ctx, e1, e2, need_l, need_r, f"let {x}")
                t1 = self.infer(c1, e1, f"let {x}")
                self.check(c2.bind(x, t1), e2, goal)
            case K.Tick(c, body):
                if c > 0:
                    ctx = self.withdraw(ctx, L.RInt(c), "T-Tick-P", f"tick {c}")
                elif c < 0:
                    ctx = ctx.extend(T.FreeEntry(L.RInt(-c)))
                self.check(ctx, body, goal)
            case K.Cond(g, a, b):
                gi = self.interp(g)
                gt = self.atom_type(ctx, g)
                if not (isinstance(gt, T.Scalar) and isinstance(gt.base, T.BoolB)):
                    raise RuleError("condition is not a boolean", self.span)
                self.check(ctx.extend(T.PathEntry(gi)), a, goal)
                self.check(ctx.extend(T.PathEntry(L.Not(gi))), b, goal)
            case K.MatD(s, bs):
                self.check_matd(ctx, s, bs, goal)
            case K.MatP(s, x, y, body):
                self.check_matp(ctx, s, x, y, body, goal)
            case K.Impossible():
                self.obligation("validity", ctx, L.FALSE, "T-Imp", "unreachable branch")
            case Call():
                ty, ctx = self.call(ctx, e, f"call {e.head}")
                self.result(ctx, ty, goal, f"result of {e.head}")
            case _:
                self.check_atom(ctx, e, goal, "result")

    def result(self, ctx, ty, goal, label):
        """Subtype the call result to the goal, relaxing with leftover free potential."""
        if isinstance(goal, T.Scalar) and isinstance(ty, T.Scalar) and T.has_top_potential(goal) \
                and self.sources(ctx):
            u = self.table.fresh("w", self.table.params_for(ctx))
            ctx = self.withdraw(ctx, u, "S-Relax", label)
            ty = replace(ty, potential=L.mk_add(ty.potential, u))
        for o in T.subtype(ctx, ty, goal, self.dts, "Sub", label, self.span):
            self.emit(o)

    def infer(self, ctx, e, label):
        match e:
            case Call():
                ty, _ = self.call(ctx, e, label)
                return ty
            case K.Tick(c, body):
                if c > 0:
                    ctx = self.withdraw(ctx, L.RInt(c), "T-Tick-P", f"tick {c}")
                elif c < 0:
                    ctx = ctx.extend(T.FreeEntry(L.RInt(-c)))
                return self.infer(ctx, body, label)
        if K.is_simple_atom(e):
            ty = self.atom_type(ctx, e)
            return T.drop_potential(ty, self.dts) if isinstance(ty, T.Scalar) else ty
        raise RuleError(f"cannot infer a type for {K.summary(e)}", self.span)

    def _bind_scrutinee(self, ctx, s):
        """Value scrutinees (as in stepped terms) are named before matching."""
        if isinstance(s, K.Var) or not K.is_simple_atom(s):
            return ctx, s
        ty = self.atom_type(ctx, s)
        self._scrutinees = getattr(self, "_scrutinees", 0) + 1
        z = f"scrut${self._scrutinees}"
        return self.consume(ctx, s).bind(z, T.drop_potential(ty, self.dts)), K.Var(z)

    def check_matd(self, ctx, s, branches, goal):
        ctx, s = self._bind_scrutinee(ctx, s)
        if not isinstance(s, K.Var):
            raise RuleError("match scrutinee must be a variable", self.span)
        xs = s.name
        ty = ctx.lookup(xs)
        if not (isinstance(ty, T.Scalar) and isinstance(ty.base, T.DataB)):
            raise RuleError(f"{xs} is not a datatype value", self.span)
        B = ty.base
        sig = self.dts[B.name]
        for br in branches:
            j = sig.index(br.con)
            con = sig.constructors[j]
            mentioned = xs in free_vars(br.body)
            bundled = T.base_has_potential(B, self.dts)
            if mentioned and bundled and (con.arity or not T.is_zero(con.extract) or con.content_var != "_"):
                keep, give, obs = T._share_base(T.Context(ctx.entries), B, self.table, self.dts,
                                                "Share", f"match {xs}", self.span)
                for o in obs:
                    self.emit(o)
            elif con.arity or con.content_var != "_":
                keep, give = T.multiply_base(0, B, self.dts), B
            else:
                keep, give = B, B
            bctx = ctx.replace_binding(xs, T.Scalar(keep, ty.refinement, ty.potential))
            x0 = br.content
            y = L.RVar(x0)
            bctx = bctx.bind(x0, P.content_type(sig, j, give))
            for i, child in enumerate(br.children):
                bctx = bctx.bind(child, T.Scalar(P.child_base(sig, j, i, y, give)))
            if not isinstance(sig.measure.sort, L.SUnit):
                m = sig.measure.apply(br.con, y, [L.RVar(c) for c in br.children])
                bctx = bctx.extend(T.PathEntry(L.Eq(L.RVar(xs), m)))
            pi = P.extract_constructor_potential(sig, j, y, give.theta)
            if not T.is_zero(pi):
                bctx = bctx.extend(T.FreeEntry(pi))
            self.check(bctx, br.body, goal)

    def check_matp(self, ctx, s, x, y, body, goal):
        ctx, s = self._bind_scrutinee(ctx, s)
        if not isinstance(s, K.Var):
            raise RuleError("pair scrutinee must be a variable", self.span)
        ty = ctx.lookup(s.name)
        if not (isinstance(ty, T.Scalar) and isinstance(ty.base, T.ProdB)):
            raise RuleError(f"{s.name} is not a pair", self.span)
        B = ty.base
        if s.name in free_vars(body) and T.base_has_potential(B, self.dts):
            keep, give, obs = T._share_base(T.Context(ctx.entries), B, self.table, self.dts,
                                            "Share", f"match {s.name}", self.span)
            for o in obs:
                self.emit(o)
        else:
            keep, give = T.multiply_base(0, B, self.dts), B
        bctx = ctx.replace_binding(s.name, T.Scalar(keep, ty.refinement, ty.potential))
        bctx = bctx.bind(x, T.Scalar(give.left)).bind(y, T.Scalar(give.right))
        bctx = bctx.extend(T.PathEntry(L.Eq(L.RVar(s.name), L.RPair(L.RVar(x), L.RVar(y)))))
        self.check(bctx, body, goal)


def _is_fun_atom(a) -> bool:
    return isinstance(a, (K.Lam, K.Fix))


def _base(t):
    if isinstance(t, T.Scalar):
        return t.base
    raise RuleError("functions cannot be paired")


def _unify(p, a, sub: dict, dts=None):
    """Record α ↦ base bindings by matching a parameter type against an argument type."""
    match p, a:
        case T.Scalar(pb, _, _), T.Scalar(ab, _, _):
            _unify_base(pb, ab, sub, dts)
        case T.Fun(_, pa, pr, _, _), T.Fun(_, aa, ar, _, _):
            _unify(pa, aa, sub, dts)
            _unify(pr, ar, sub, dts)


def _unify_base(pb, ab, sub, dts=None):
    match pb, ab:
        case T.TVarB(a, _), _:
            if a not in sub:
                sub[a] = T._drop_base(ab, dts) if not isinstance(ab, T.TVarB) else T.TVarB(ab.name)
        case T.ProdB(l1, r1), T.ProdB(l2, r2):
            _unify_base(l1, l2, sub, dts)
            _unify_base(r1, r2, sub, dts)
        case T.DataB(n1, e1, _), T.DataB(n2, e2, _) if n1 == n2 and e1 is not None and e2 is not None:
            _unify(e1, e2, sub, dts)


def check_program(module, dependent=None, names=None) -> dict:
    return Checker(module, dependent).check_program(names)


def check_term(module, expr, goal, free: int = 0) -> ConstraintSet:
    return Checker(module, False).check_term(expr, goal, free)


def check_binding(module, name, dependent=None) -> ConstraintSet:
    return Checker(module, dependent).check_binding(name)
