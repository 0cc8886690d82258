"""Resource-annotated refinement types, typing contexts and their operations.

Datatype signatures are looked up by name in a registry (any mapping from
datatype name to an object shaped like ``potential.InductiveSignature``), so
this module has no import-time dependency on the potential machinery.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Union

from . import logic as L
from .logic import NU, NU_VAR, TRUE, ZERO

INF = float("inf")


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class NatB:
    pass


@dataclass(frozen=True)
class BoolB:
    pass


@dataclass(frozen=True)
class UnitB:
    pass


@dataclass(frozen=True)
class ProdB:
    left: Any
    right: Any


@dataclass(frozen=True)
class TVarB:
    name: str
    mult: Any = 1


@dataclass(frozen=True)
class DataB:
    """An inductive datatype instance.

    `elem` is the element type for a one-parameter library datatype (None for
    monomorphic ones); `theta` holds one logic term per abstract-potential
    parameter.
    """

    name: str
    elem: Any = None
    theta: tuple = ()


@dataclass(frozen=True)
class Scalar:
    """{base | refinement}^potential; both logic terms may mention ν."""

    base: Any
    refinement: Any = TRUE
    potential: Any = ZERO


@dataclass(frozen=True)
class Fun:
    param: str
    arg: Any
    res: Any
    mult: Any = INF
    potential: Any = ZERO


@dataclass(frozen=True)
class Poly:
    tvars: tuple
    body: Any


Base = Union[NatB, BoolB, UnitB, ProdB, TVarB, DataB]
Type = Union[Scalar, Fun]
Schema = Union[Type, Poly]


class TypeError_(Exception):
    pass


class ShapeMismatch(TypeError_):
    pass


class ScopeError(TypeError_):
    pass


class NonScalarSubstitution(TypeError_):
    pass


def scalar(base, refinement=TRUE, potential=ZERO) -> Scalar:
    return Scalar(base, refinement, potential)


def strip(T):
    """Drop all potentials (and refinements are kept)."""
    return multiply_type(0, T)


# ---------------------------------------------------------------------------
# Multiplicities


def mult_mul(a, b):
    if a == 0 or b == 0:
        return 0
    return a * b


def mult_str(m) -> str:
    return "∞" if m == INF else str(m)


# ---------------------------------------------------------------------------
# Sorts of base types


def base_sort(B, dts: Mapping | None = None) -> L.Sort:
    match B:
        case NatB():
            return L.NAT
        case BoolB():
            return L.BOOL
        case UnitB():
            return L.UNIT
        case TVarB(a, _):
            return L.STVar(a)
        case ProdB(l, r):
            return L.SProd(base_sort(l, dts), base_sort(r, dts))
        case DataB(name, _, _):
            if dts is not None and name in dts:
                return dts[name].measure.sort
            return L.UNIT
    raise TypeError_(f"not a base type: {B!r}")


def elem_sort(B: DataB) -> L.Sort:
    if B.elem is None:
        return L.UNIT
    return base_sort(B.elem.base)


# ---------------------------------------------------------------------------
# Potential inspection


def is_zero(t) -> bool:
    return L.simplify(t) == ZERO


def _theta_numeric(sig_params, theta):
    for (pname, psort), comp in zip(sig_params, theta):
        res = psort.result if isinstance(psort, L.SArrow) else psort
        yield pname, psort, comp, isinstance(res, L.SNat)


def theta_params_of(B: DataB, dts) -> tuple:
    if dts is not None and B.name in dts:
        return tuple((p.name, p.sort) for p in dts[B.name].theta_params)
    return tuple((f"θ{i}", L.NAT) for i in range(len(B.theta)))


def base_has_potential(B, dts=None) -> bool:
    match B:
        case ProdB(l, r):
            return base_has_potential(l, dts) or base_has_potential(r, dts)
        case DataB(_, elem, theta):
            if elem is not None and has_potential(elem, dts):
                return True
            for _, psort, comp, numeric in _theta_numeric(theta_params_of(B, dts), theta):
                if numeric and not _zero_fn(comp):
                    return True
    return False


def _zero_fn(t) -> bool:
    t = L.simplify(t)
    if isinstance(t, L.RLam):
        return is_zero(t.body)
    return is_zero(t)


def has_potential(T, dts=None) -> bool:
    match T:
        case Scalar(B, _, phi):
            return not is_zero(phi) or base_has_potential(B, dts)
        case Fun(_, _, _, _, phi):
            return not is_zero(phi)
        case Poly(_, body):
            return has_potential(body, dts)
    return False


def has_top_potential(T) -> bool:
    return isinstance(T, (Scalar, Fun)) and not is_zero(T.potential)


# ---------------------------------------------------------------------------
# Type multiplication and substitution


def _scale_term(m, t):
    if m == INF:
        if is_zero(t):
            return ZERO
        raise TypeError_("unbounded multiplicity applied to positive potential")
    return L.mk_mul(int(m), t)


def _scale_theta(m, B: DataB, dts):
    out = []
    for _, psort, comp, numeric in _theta_numeric(theta_params_of(B, dts), B.theta):
        if not numeric:
            out.append(comp)
        elif isinstance(comp, L.RLam):
            out.append(L.RLam(comp.params, L.simplify(_scale_term(m, comp.body))))
        else:
            out.append(L.simplify(_scale_term(m, comp)))
    return tuple(out)


def multiply_base(m, B, dts=None):
    match B:
        case TVarB(a, k):
            return TVarB(a, mult_mul(m, k))
        case ProdB(l, r):
            return ProdB(multiply_base(m, l, dts), multiply_base(m, r, dts))
        case DataB(name, elem, theta):
            if m != 1 and dts is not None and name in dts and _unshareable(dts[name]):
                raise TypeError_(f"values of {name} cannot be scaled or reused: its annotations are not additive")
            e2 = multiply_type(m, elem, dts) if elem is not None else None
            return DataB(name, e2, _scale_theta(m, B, dts))
    return B


def multiply_type(m, T, dts=None):
    """m × T: scale every potential and multiplicity by m."""
    match T:
        case Scalar(B, psi, phi):
            return Scalar(multiply_base(m, B, dts), psi, L.simplify(_scale_term(m, phi)))
        case Fun(x, Tx, Tr, k, phi):
            return Fun(x, Tx, Tr, mult_mul(m, k), L.simplify(_scale_term(m, phi)))
        case Poly(tvs, body):
            return Poly(tvs, multiply_type(m, body, dts))
    raise TypeError_(f"cannot multiply {T!r}")


def _sub_base(U: Scalar, alpha: str, B, path, dts):
    """[U/α]B, returning (base, extra refinement, extra potential) at `path`."""
    match B:
        case TVarB(a, m) if a == alpha:
            base = multiply_base(m, U.base, dts)
            psi = L.substitute(U.refinement, {NU: path})
            phi = L.substitute(_scale_term(m, U.potential), {NU: path})
            return base, psi, phi
        case ProdB(l, r):
            bl, pl, fl = _sub_base(U, alpha, l, L.Fst(path), dts)
            br, pr, fr = _sub_base(U, alpha, r, L.Snd(path), dts)
            return ProdB(bl, br), L.mk_and(pl, pr), L.mk_add(fl, fr)
        case DataB(name, elem, theta):
            if elem is None:
                return B, TRUE, ZERO
            new_elem = substitute_type(U, alpha, elem, dts)
            sort = base_sort(new_elem.base, dts)
            theta2 = tuple(_resort_lam(c, alpha, sort) for c in theta)
            return DataB(name, new_elem, theta2), TRUE, ZERO
    return B, TRUE, ZERO


def _resort_lam(t, alpha, sort):
    if isinstance(t, L.RLam):
        ps = tuple((p, sort if s == L.STVar(alpha) else s) for p, s in t.params)
        return L.RLam(ps, t.body)
    return t


def _drop_base(B, dts):
    match B:
        case ProdB(l, r):
            return ProdB(_drop_base(l, dts), _drop_base(r, dts))
        case DataB(name, elem, theta):
            e2 = drop_potential(elem, dts) if elem is not None else None
            return DataB(name, e2, _scale_theta(0, B, dts))
    return B


def drop_potential(T, dts=None):
    """Zero every numeric potential but keep multiplicities."""
    match T:
        case Scalar(B, psi, _):
            return Scalar(_drop_base(B, dts), psi, ZERO)
        case Fun():
            return replace(T, potential=ZERO)
        case Poly(tvs, body):
            return Poly(tvs, drop_potential(body, dts))
    raise TypeError_(f"cannot erase {T!r}")


def substitute_type(U, alpha: str, S, dts=None):
    """[U/α]S for a resource-annotated subset type U."""
    if not isinstance(U, Scalar):
        raise NonScalarSubstitution("type variables are instantiated with scalar types")
    match S:
        case Scalar(B, psi, phi):
            base, psi2, phi2 = _sub_base(U, alpha, B, NU_VAR, dts)
            return Scalar(base, L.mk_and(psi, psi2) if psi2 != TRUE else psi,
                          L.simplify(L.mk_add(phi, phi2)) if phi2 != ZERO else phi)
        case Fun(x, Tx, Tr, m, phi):
            return Fun(x, substitute_type(U, alpha, Tx, dts), substitute_type(U, alpha, Tr, dts), m, phi)
        case Poly(tvs, body):
            if alpha in tvs:
                return S
            return Poly(tvs, substitute_type(U, alpha, body, dts))
    raise TypeError_(f"cannot substitute into {S!r}")


def subst_refinements(T, mapping: Mapping[str, Any]):
    """Substitute logic terms for program variables throughout a type."""
    if not mapping:
        return T
    match T:
        case Scalar(B, psi, phi):
            m = {k: v for k, v in mapping.items() if k != NU}
            return Scalar(_subst_base(B, m), L.beta(L.substitute(psi, m)), L.beta(L.substitute(phi, m)))
        case Fun(x, Tx, Tr, k, phi):
            m = {kk: v for kk, v in mapping.items() if kk != x}
            return Fun(x, subst_refinements(Tx, mapping), subst_refinements(Tr, m), k,
                       L.beta(L.substitute(phi, mapping)))
        case Poly(tvs, body):
            return Poly(tvs, subst_refinements(body, mapping))
    return T


def _subst_base(B, m):
    match B:
        case ProdB(l, r):
            return ProdB(_subst_base(l, m), _subst_base(r, m))
        case DataB(name, elem, theta):
            e2 = subst_refinements(elem, m) if elem is not None else None
            return DataB(name, e2, tuple(L.beta(L.substitute(c, m)) for c in theta))
    return B


def free_type_vars(T) -> set:
    match T:
        case Scalar(B, _, _):
            return _base_tvars(B)
        case Fun(_, Tx, Tr, _, _):
            return free_type_vars(Tx) | free_type_vars(Tr)
        case Poly(tvs, body):
            return free_type_vars(body) - set(tvs)
    return set()


def _base_tvars(B) -> set:
    match B:
        case TVarB(a, _):
            return {a}
        case ProdB(l, r):
            return _base_tvars(l) | _base_tvars(r)
        case DataB(_, elem, _):
            return free_type_vars(elem) if elem is not None else set()
    return set()


# ---------------------------------------------------------------------------
# Contexts


@dataclass(frozen=True)
class Bind:
    name: str
    ty: Any


@dataclass(frozen=True)
class TVarEntry:
    name: str


@dataclass(frozen=True)
class PathEntry:
    formula: Any


@dataclass(frozen=True)
class FreeEntry:
    potential: Any


@dataclass(frozen=True)
class Context:
    entries: tuple = ()

    def extend(self, *entries) -> "Context":
        return Context(self.entries + tuple(entries))

    def bind(self, name, ty) -> "Context":
        return self.extend(Bind(name, ty))

    def lookup(self, name):
        for e in reversed(self.entries):
            if isinstance(e, Bind) and e.name == name:
                return e.ty
        return None

    def bindings(self):
        return [e for e in self.entries if isinstance(e, Bind)]

    def names(self) -> list:
        return [e.name for e in self.entries if isinstance(e, Bind)]

    def replace_binding(self, name, ty) -> "Context":
        out = list(self.entries)
        for i in range(len(out) - 1, -1, -1):
            if isinstance(out[i], Bind) and out[i].name == name:
                out[i] = Bind(name, ty)
                return Context(tuple(out))
        raise ScopeError(f"unbound variable {name}")

    def map_entries(self, fn) -> "Context":
        return Context(tuple(x for x in (fn(e) for e in self.entries) if x is not None))

    def scalar_vars(self, dts=None):
        """(name, sort) of program variables with scalar types, in order."""
        out = []
        for e in self.entries:
            if isinstance(e, Bind) and isinstance(e.ty, Scalar):
                out.append((e.name, base_sort(e.ty.base, dts)))
        return out

    def assumptions(self, dts=None) -> list:
        out = []
        for e in self.entries:
            match e:
                case Bind(x, Scalar(_, psi, _)) if psi != TRUE:
                    out.append(L.substitute(psi, {NU: L.RVar(x)}))
                case PathEntry(f):
                    out.append(f)
        return out

    def validity_query(self, psi, dts=None) -> L.Query:
        return L.Query(tuple(self.scalar_vars(dts)), tuple(self.assumptions(dts)), psi)


def context_potential(ctx: Context, dts=None):
    """Φ(Γ): free entries plus top-level annotations of scalar and arrow bindings."""
    terms = []
    for e in ctx.entries:
        match e:
            case FreeEntry(phi):
                terms.append(phi)
            case Bind(x, Scalar(_, _, phi)):
                terms.append(L.substitute(phi, {NU: L.RVar(x)}))
            case Bind(_, Fun(_, _, _, _, phi)):
                terms.append(phi)
    return L.simplify(L.mk_add(*terms))


def erase_potential(ctx: Context) -> Context:
    """|Γ|: drop free-potential entries and zero top-level annotations."""

    def go(e):
        match e:
            case FreeEntry():
                return None
            case Bind(x, Scalar() as T):
                return Bind(x, replace(T, potential=ZERO))
            case Bind(x, Fun() as T):
                return Bind(x, replace(T, potential=ZERO))
        return e

    return ctx.map_entries(go)


# ---------------------------------------------------------------------------
# Obligations


KINDS = ("validity", "sharing-eq", "subtype-leq", "wf-nonneg")


@dataclass(frozen=True)
class Obligation:
    kind: str
    ctx: Context
    formula: Any
    rule: str
    label: str = ""
    nu: Any = None  # Scalar type of ν, when the formula mentions it
    extra: tuple = ()  # additional (name, sort) universals, e.g. θ parameters
    span: Any = None

    def query(self, dts=None) -> L.Query:
        univ = list(self.ctx.scalar_vars(dts))
        hyps = list(self.ctx.assumptions(dts))
        if self.nu is not None:
            univ.append((NU, base_sort(self.nu.base, dts)))
            if self.nu.refinement != TRUE:
                hyps.append(self.nu.refinement)
        univ.extend(self.extra)
        # names that are shadowed keep only their innermost binding
        seen, uniq = set(), []
        for n, s in reversed(univ):
            if n not in seen:
                seen.add(n)
                uniq.append((n, s))
        return L.Query(tuple(reversed(uniq)), tuple(hyps), self.formula)

    def unknowns(self) -> set:
        return L.unknowns_of(self.formula)

    def to_json(self, dts=None) -> dict:
        q = self.query(dts)
        return {
            "kind": self.kind,
            "rule": self.rule,
            "label": self.label,
            "ctx": [f"{n}: {s}" for n, s in q.universals],
            "assumptions": [L.show(a) for a in q.assumptions],
            "formula": L.show(self.formula),
            "span": _span_json(self.span),
        }

    def show(self, dts=None) -> str:
        q = self.query(dts)
        hyps = [L.show(a) for a in q.assumptions]
        pre = (" ∧ ".join(hyps) + " ⇒ ") if hyps else ""
        return f"[{self.rule}: {self.label}] {pre}{L.show(self.formula)}"


def _span_json(span):
    if span is None:
        return None
    if hasattr(span, "to_json"):
        return span.to_json()
    return str(span)


def is_trivial(ob: Obligation) -> bool:
    """Obligations that hold by their shape alone."""
    f = L.simplify(ob.formula)
    match f:
        case L.RBool(True):
            return True
        case L.Le(a, b) if a == ZERO and L.manifestly_nonneg(b):
            return True
        case L.Le(a, b) if a == b:
            return True
        case L.Eq(a, b) if a == b:
            return True
        case L.Implies(a, b) if a == b:
            return True
    if not L.free_vars(f) and not L.unknowns_of(f):
        try:
            return bool(L.eval_refinement({}, f))
        except L.EvaluationError:
            return False
    return False


# ---------------------------------------------------------------------------
# Unknown symbols


@dataclass
class UnknownTable:
    """Declares fresh unknown potential functions.

    In first-order mode every unknown is nullary. Otherwise unknowns range
    over the in-scope program variables of numeric or type-variable sort,
    plus ν and any lambda parameters of the annotation being split.
    """

    dependent: bool = False
    decls: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    dts: Any = None

    def _name(self, prefix: str) -> str:
        n = self.counters.get(prefix, 0) + 1
        self.counters[prefix] = n
        return f"{prefix}{n}"

    def params_for(self, ctx: Context, with_nu_sort=None) -> tuple:
        if not self.dependent:
            return ()
        out = []
        for e in ctx.entries:
            if not (isinstance(e, Bind) and isinstance(e.ty, Scalar)) or e.name.startswith("_"):
                continue
            if isinstance(e.ty.base, (NatB, TVarB)):
                out = [(n, s) for n, s in out if n != e.name]
                out.append((e.name, base_sort(e.ty.base)))
        if with_nu_sort is not None and isinstance(with_nu_sort, (L.SNat, L.STVar)):
            out.append((NU, with_nu_sort))
        return tuple(out)

    def fresh(self, prefix: str, params: tuple):
        name = self._name(prefix)
        self.decls[name] = L.UnknownDecl(name, tuple(params))
        return L.Unknown(name, tuple(L.RVar(p) for p, _ in params))

    def fresh_fn(self, prefix: str, params: tuple, lam_params: tuple):
        """An unknown θ component: λ(lam_params). u(params, lam_params)."""
        all_params = tuple(params) + tuple(lam_params) if self.dependent else ()
        u = self.fresh(prefix, all_params)
        return L.RLam(tuple(lam_params), u)


# ---------------------------------------------------------------------------
# Subtyping


def _fresh_lam_params(params, avoid):
    out = []
    for p, s in params:
        name = p
        k = 1
        while name in avoid:
            name = f"{p}_{k}"
            k += 1
        out.append((name, s))
    return tuple(out)


def _fn_params(comp, psort, avoid):
    if isinstance(comp, L.RLam) and comp.params:
        return _fresh_lam_params(comp.params, avoid)
    if isinstance(psort, L.SArrow):
        return _fresh_lam_params(tuple((f"x{i+1}", s) for i, s in enumerate(psort.params)), avoid)
    return ()


def theta_relation(ctx, B1: DataB, B2: DataB, dts, rule, label, span=None):
    """Obligations for θ2 ⊑ θ1 (B1's annotation dominates B2's)."""
    obls = []
    avoid = set(ctx.names()) | {NU}
    for (pname, psort, c1, numeric), c2 in zip(_theta_numeric(theta_params_of(B1, dts), B1.theta), B2.theta):
        params = _fn_params(c1, psort, avoid)
        args = tuple(L.RVar(p) for p, _ in params)
        t1 = L.apply(c1, *args) if params else L.beta(c1)
        t2 = L.apply(c2, *args) if params else L.beta(c2)
        if numeric:
            f = L.Le(t2, t1)
            kind = "subtype-leq"
        else:
            f = L.Eq(t1, t2) if t1 != t2 else TRUE
            kind = "validity"
        obls.append(Obligation(kind, ctx, f, rule, f"{label} θ.{pname}", None, params, span))
    return obls


def subtype(ctx: Context, T1, T2, dts=None, rule="Sub", label="", span=None) -> list:
    """Structural subtyping T1 <: T2 as a list of obligations."""
    obls: list = []
    match T1, T2:
        case Scalar(B1, psi1, phi1), Scalar(B2, psi2, phi2):
            nu1 = Scalar(B1, psi1, ZERO)
            obls.extend(_subtype_base(ctx, B1, B2, dts, rule, label, span))
            if L.simplify(psi2) != TRUE:
                obls.append(Obligation("validity", ctx, L.Implies(psi1, psi2) if psi1 != TRUE else psi2,
                                       rule + "-Subset", label, Scalar(B1, TRUE, ZERO), (), span))
            obls.append(Obligation("subtype-leq", ctx, L.Le(phi2, phi1), rule + "-Pot", label, nu1, (), span))
        case Fun(x1, A1, R1, m1, phi1), Fun(x2, A2, R2, m2, phi2):
            if m1 < m2:
                raise ShapeMismatch(f"arrow multiplicity {mult_str(m1)} < {mult_str(m2)}")
            obls.extend(subtype(ctx, A2, A1, dts, rule + "-Arrow", label, span))
            R1r = subst_refinements(R1, {x1: L.RVar(x2)}) if x1 != x2 else R1
            obls.extend(subtype(ctx.bind(x2, A2), R1r, R2, dts, rule + "-Arrow", label, span))
            obls.append(Obligation("subtype-leq", ctx, L.Le(phi2, phi1), rule + "-Pot", label, None, (), span))
        case _:
            raise ShapeMismatch(f"cannot relate {show_type(T1)} and {show_type(T2)}")
    return obls


def _subtype_base(ctx, B1, B2, dts, rule, label, span):
    match B1, B2:
        case NatB(), NatB():
            return []
        case BoolB(), BoolB():
            return []
        case UnitB(), UnitB():
            return []
        case TVarB(a1, m1), TVarB(a2, m2) if a1 == a2:
            if m1 < m2:
                raise ShapeMismatch(f"type variable multiplicity {mult_str(m1)} < {mult_str(m2)}")
            return []
        case ProdB(l1, r1), ProdB(l2, r2):
            return _subtype_base(ctx, l1, l2, dts, rule, label, span) + _subtype_base(ctx, r1, r2, dts, rule, label, span)
        case DataB(n1, e1, t1), DataB(n2, e2, t2) if n1 == n2 and len(t1) == len(t2):
            out = []
            if e1 is not None and e2 is not None:
                out.extend(subtype(ctx, e1, e2, dts, rule + "-Dtype", f"{label} elements".strip(), span))
            out.extend(theta_relation(ctx, B1, B2, dts, rule + "-Dtype", label, span))
            return out
    raise ShapeMismatch(f"base types {show_base(B1)} and {show_base(B2)} differ")


# ---------------------------------------------------------------------------
# Sharing


def share(ctx: Context, T, table: UnknownTable, dts=None, rule="Share", label="", span=None):
    """Split T into two halves whose potentials add up to T's."""
    obls: list = []
    match T:
        case Scalar(B, psi, phi):
            B1, B2, ob = _share_base(ctx, B, table, dts, rule, label, span)
            obls.extend(ob)
            nu_sort = base_sort(B, dts)
            if is_zero(phi):
                p1 = p2 = ZERO
            else:
                params = table.params_for(ctx, nu_sort)
                p1, p2 = table.fresh("p", params), table.fresh("p", params)
                obls.append(Obligation("sharing-eq", ctx, L.Eq(phi, L.Add((p1, p2))), rule + "-Pot", label,
                                       Scalar(B, psi, ZERO), (), span))
            return Scalar(B1, psi, p1), Scalar(B2, psi, p2), obls
        case Fun(x, A, R, m, phi):
            if is_zero(phi):
                return T, T, []
            params = table.params_for(ctx)
            p1, p2 = table.fresh("p", params), table.fresh("p", params)
            obls.append(Obligation("sharing-eq", ctx, L.Eq(phi, L.Add((p1, p2))), rule + "-Pot", label, None, (), span))
            return replace(T, potential=p1), replace(T, potential=p2), obls
        case Poly(tvs, body):
            b1, b2, ob = share(ctx, body, table, dts, rule, label, span)
            return Poly(tvs, b1), Poly(tvs, b2), ob
    raise TypeError_(f"cannot share {T!r}")


def _share_base(ctx, B, table, dts, rule, label, span):
    match B:
        case ProdB(l, r):
            l1, l2, o1 = _share_base(ctx, l, table, dts, rule, label, span)
            r1, r2, o2 = _share_base(ctx, r, table, dts, rule, label, span)
            return ProdB(l1, r1), ProdB(l2, r2), o1 + o2
        case DataB(name, elem, theta):
            if dts is not None and name in dts and _unshareable(dts[name]):
                raise TypeError_(f"values of {name} cannot be shared or reused: its annotations are not additive")
            obls = []
            if elem is not None and has_potential(elem, dts):
                e1, e2, ob = _share_elem(ctx, elem, table, dts, rule, label, span)
                obls.extend(ob)
            else:
                e1 = e2 = elem
            th1, th2 = [], []
            avoid = set(ctx.names()) | {NU}
            for pname, psort, comp, numeric in _theta_numeric(theta_params_of(B, dts), theta):
                if not numeric or _zero_fn(comp):
                    th1.append(comp)
                    th2.append(comp)
                    continue
                lparams = _fn_params(comp, psort, avoid)
                params = table.params_for(ctx)
                if lparams:
                    c1 = table.fresh_fn("r", params, lparams)
                    c2 = table.fresh_fn("r", params, lparams)
                    args = tuple(L.RVar(p) for p, _ in lparams)
                    f = L.Eq(L.apply(comp, *args), L.Add((L.apply(c1, *args), L.apply(c2, *args))))
                else:
                    c1, c2 = table.fresh("r", params), table.fresh("r", params)
                    f = L.Eq(comp, L.Add((c1, c2)))
                th1.append(c1)
                th2.append(c2)
                obls.append(Obligation("sharing-eq", ctx, f, rule + "-Dtype", f"{label} θ.{pname}".strip(),
                                       None, lparams, span))
            return DataB(name, e1, tuple(th1)), DataB(name, e2, tuple(th2)), obls
    return B, B, []


def _unshareable(sig) -> bool:
    from .potential import index_consistency

    return any(p[0] == "sharing" for p in index_consistency(sig))


def _share_elem(ctx, elem: Scalar, table, dts, rule, label, span):
    B1, B2, obls = _share_base(ctx, elem.base, table, dts, rule, label, span)
    if is_zero(elem.potential):
        return Scalar(B1, elem.refinement, ZERO), Scalar(B2, elem.refinement, ZERO), obls
    params = table.params_for(ctx, base_sort(elem.base, dts))
    q1, q2 = table.fresh("q", params), table.fresh("q", params)
    obls.append(Obligation("sharing-eq", ctx, L.Eq(elem.potential, L.Add((q1, q2))), rule + "-Dtype",
                           f"{label} elements".strip(), Scalar(elem.base, elem.refinement, ZERO), (), span))
    return Scalar(B1, elem.refinement, q1), Scalar(B2, elem.refinement, q2), obls


def zero_part(T, dts=None):
    """The potential-free half used when one side receives nothing."""
    return multiply_type(0, T, dts) if not isinstance(T, Poly) else Poly(T.tvars, multiply_type(0, T.body, dts))


# ---------------------------------------------------------------------------
# Well-formedness


def wf_type(ctx: Context, S, dts=None, span=None) -> list:
    """Scoping/sorting checks; returns nonnegativity obligations for potentials."""
    obls: list = []
    match S:
        case Poly(tvs, body):
            inner = ctx.extend(*(TVarEntry(a) for a in tvs))
            if has_potential(body, dts) and _top_positive(body):
                raise TypeError_("polymorphic types can never carry positive potential")
            return wf_type(inner, body, dts, span)
        case Scalar(B, psi, phi):
            sorts = dict(ctx.scalar_vars(dts))
            sorts[NU] = base_sort(B, dts)
            _check_base(ctx, B, dts)
            if L.sort_of(sorts, psi, _decls(dts)) != L.BOOL:
                raise L.SortError("refinement is not boolean")
            obls.append(Obligation("wf-nonneg", ctx, L.Le(ZERO, phi), "Wf-Pot", "annotation",
                                   Scalar(B, psi, ZERO), (), span))
            return obls
        case Fun(x, A, R, m, phi):
            obls.extend(wf_type(ctx, A, dts, span))
            obls.extend(wf_type(ctx.bind(x, A), R, dts, span))
            return obls
    raise TypeError_(f"not a type: {S!r}")


def _top_positive(T) -> bool:
    match T:
        case Scalar(_, _, phi):
            return not is_zero(phi)
        case Fun(_, _, R, _, phi):
            return not is_zero(phi)
    return False


def _decls(dts):
    return None


def _check_base(ctx, B, dts):
    match B:
        case TVarB(a, _):
            if not any(isinstance(e, TVarEntry) and e.name == a for e in ctx.entries):
                raise ScopeError(f"type variable {a} not in scope")
        case ProdB(l, r):
            _check_base(ctx, l, dts)
            _check_base(ctx, r, dts)
        case DataB(name, elem, theta):
            if dts is not None and name not in dts:
                raise ScopeError(f"unknown datatype {name}")
            if elem is not None:
                _check_base(ctx, elem.base, dts)


# ---------------------------------------------------------------------------
# Printing


def show_term(t) -> str:
    return L.show(t)


def show_base(B) -> str:
    match B:
        case NatB():
            return "Nat"
        case BoolB():
            return "Bool"
        case UnitB():
            return "Unit"
        case TVarB(a, m):
            return a if m == 1 else f"{mult_str(m)}*{a}"
        case ProdB(l, r):
            return f"({show_base(l)}, {show_base(r)})"
        case DataB(name, elem, theta):
            parts = [name]
            if elem is not None:
                e = show_type(elem)
                parts.append(e if _simple(elem) else f"({e})")
            if theta and not all(_zero_fn(c) for c in theta):
                parts.append("<" + ", ".join(L.show(c) for c in theta) + ">")
            return " ".join(parts)
    return repr(B)


def _simple(T) -> bool:
    return isinstance(T, Scalar) and not isinstance(T.base, DataB)


def show_type(T) -> str:
    match T:
        case Scalar(B, psi, phi):
            core = show_base(B) if psi == TRUE else f"{{{show_base(B)} | {L.show(psi)}}}"
            if is_zero(phi):
                return core
            p = L.show(phi)
            if isinstance(B, DataB) and psi == TRUE:
                core = f"({core})"
            return f"{core}^{p}" if isinstance(phi, (L.RInt, L.RVar)) else f"{core}^{{{p}}}"
        case Fun(x, A, R, m, phi):
            arrow = "->" if m == INF else f"-{mult_str(m)}>"
            s = f"{x}:{show_type(A)} {arrow} {show_type(R)}"
            return s if is_zero(phi) else f"({s})^{{{L.show(phi)}}}"
        case Poly(tvs, body):
            return f"∀{' '.join(tvs)}. {show_type(body)}"
    return repr(T)
