"""Datatype signatures with abstract potential parameters, and the
inductive potential function over values."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, log2
from typing import Any, Mapping

from . import kernel as K
from . import logic as L
from . import typesys as T
from .logic import NU, NU_VAR, ZERO


class UnsupportedShape(Exception):
    pass


@dataclass(frozen=True)
class ThetaParam:
    name: str
    sort: L.Sort

    @property
    def numeric(self) -> bool:
        res = self.sort.result if isinstance(self.sort, L.SArrow) else self.sort
        return isinstance(res, L.SNat)


@dataclass(frozen=True)
class ChildSig:
    """One recursive field.

    `theta` holds the shifted annotation, one template per θ parameter, over
    the constructor's content variable and the parent's θ parameter names.
    `increment` is extra element potential (over ν, the element) added to
    this child's elements; None means no increment.
    """

    name: str
    theta: tuple
    increment: Any = None


@dataclass(frozen=True)
class ConstructorSig:
    name: str
    content_var: str
    content_type: Any  # typesys.Scalar, potential-free
    children: tuple = ()
    extract: Any = ZERO  # over content_var and θ parameter names

    @property
    def arity(self) -> int:
        return len(self.children)


@dataclass(frozen=True)
class InductiveSignature:
    name: str
    tparams: tuple
    theta_params: tuple
    constructors: tuple
    measure: L.Measure

    def constructor(self, name: str) -> ConstructorSig:
        for c in self.constructors:
            if c.name == name:
                return c
        raise KeyError(f"{self.name} has no constructor {name}")

    def has_constructor(self, name: str) -> bool:
        return any(c.name == name for c in self.constructors)

    def index(self, name: str) -> int:
        for j, c in enumerate(self.constructors):
            if c.name == name:
                return j
        raise KeyError(name)

    @property
    def theta_sorts(self) -> tuple:
        return tuple(p.sort for p in self.theta_params)

    def zero_theta(self) -> tuple:
        """The all-zero annotation (boolean parameters default to false)."""
        out = []
        for p in self.theta_params:
            res = p.sort.result if isinstance(p.sort, L.SArrow) else p.sort
            val = ZERO if isinstance(res, L.SNat) else L.FALSE
            if isinstance(p.sort, L.SArrow):
                out.append(L.const_fn(tuple((f"x{i + 1}", s) for i, s in enumerate(p.sort.params)), val))
            else:
                out.append(val)
        return tuple(out)


class Registry(dict):
    """Datatype name → signature, with constructor lookup."""

    def by_constructor(self, con: str) -> InductiveSignature:
        for sig in self.values():
            if sig.has_constructor(con):
                return sig
        raise KeyError(f"unknown constructor {con}")


def registry(*sigs) -> Registry:
    return Registry({s.name: s for s in sigs})


# ---------------------------------------------------------------------------
# Shift and extract


def _theta_map(sig: InductiveSignature, con: ConstructorSig, content, theta) -> dict:
    if len(theta) != len(sig.theta_params):
        raise L.SortError(f"{sig.name} expects {len(sig.theta_params)} annotation components")
    m = {p.name: c for p, c in zip(sig.theta_params, theta)}
    m[con.content_var] = content
    return m


def _con(sig, j):
    return sig.constructors[j] if isinstance(j, int) else sig.constructor(j)


def shift_children(sig: InductiveSignature, j, content, theta) -> list:
    """⊲.j(content)(θ): the annotation tuple handed to each child."""
    con = _con(sig, j)
    m = _theta_map(sig, con, content, theta)
    return [tuple(L.beta(L.substitute(t, m)) for t in child.theta) for child in con.children]


def child_increments(sig: InductiveSignature, j, content, theta) -> list:
    con = _con(sig, j)
    m = _theta_map(sig, con, content, theta)
    return [None if c.increment is None else L.beta(L.substitute(c.increment, m)) for c in con.children]


def extract_constructor_potential(sig: InductiveSignature, j, content, theta):
    """π.j(content)(θ), β-reduced."""
    con = _con(sig, j)
    return L.beta(L.substitute(con.extract, _theta_map(sig, con, content, theta)))


def content_type(sig: InductiveSignature, j, B) -> T.Scalar:
    """The content field's type at instance B (element type substituted)."""
    con = _con(sig, j)
    ct = con.content_type
    if sig.tparams and B.elem is not None:
        ct = T.substitute_type(B.elem, sig.tparams[0], ct)
    return ct


def child_base(sig: InductiveSignature, j, i: int, content, B) -> "T.DataB":
    """Base type of child i of constructor j, at parent instance B."""
    theta = shift_children(sig, j, content, B.theta)[i]
    inc = child_increments(sig, j, content, B.theta)[i]
    elem = B.elem
    if elem is not None and inc is not None and not T.is_zero(inc):
        elem = T.Scalar(elem.base, elem.refinement, L.simplify(L.mk_add(elem.potential, inc)))
    return T.DataB(B.name, elem, theta)


# ---------------------------------------------------------------------------
# Inductive potential over values


def _library():
    from .stdlib import library_signatures
    return library_signatures()


def logic_value(v, dts=None):
    """I(v) as a Python value suitable for eval_refinement environments."""
    return L.eval_refinement({}, L.interpret_atom(v, dts))


def _nat(t, env=None) -> int:
    val = L.eval_refinement(env or {}, t)
    if isinstance(val, bool) or not isinstance(val, int):
        raise L.EvaluationError(f"potential {L.show(t)} is not a number")
    if val < 0:
        raise L.EvaluationError(f"potential {L.show(t)} evaluates to {val} < 0")
    return val


def potential_of_value(v, ty, dts: Mapping | None = None) -> int:
    """Φ(v : ty) for a closed value and a ground annotated type."""
    dts = dts if dts is not None else _library()
    match ty:
        case T.Fun(_, _, _, _, phi):
            return _nat(phi)
        case T.Scalar(B, _, phi):
            top = 0
            if not T.is_zero(phi):
                top = _nat(phi, {NU: logic_value(v, dts)})
            return top + _base_potential(v, B, dts)
    raise T.TypeError_(f"cannot measure potential at {ty!r}")


def _base_potential(v, B, dts) -> int:
    match B:
        case T.ProdB(l, r):
            if not isinstance(v, K.PairA):
                raise L.EvaluationError(f"expected a pair, got {K.show(v)}")
            return _base_potential(v.left, l, dts) + _base_potential(v.right, r, dts)
        case T.DataB(name, _, theta):
            if not isinstance(v, K.Con):
                raise L.EvaluationError(f"expected a {name} value, got {K.show(v)}")
            sig = dts[name]
            j = sig.index(v.name)
            con = sig.constructors[j]
            if len(v.children) != con.arity:
                raise L.ArityMismatch(f"{v.name} has arity {con.arity}")
            y = L.interpret_atom(v.content, dts)
            total = potential_of_value(v.content, content_type(sig, j, B), dts)
            total += _nat(extract_constructor_potential(sig, j, y, theta))
            for i, child in enumerate(v.children):
                total += _base_potential(child, child_base(sig, j, i, y, B), dts)
            return total
    return 0


# ---------------------------------------------------------------------------
# Closed forms


def closed_form_potential(type_id: str, stats: Mapping[str, Any]) -> int:
    """Closed-form potential of a library instance from summary statistics.

    List takes `elements`, a Python function `q` of two elements and an
    optional per-element potential `p`; EList
    takes `n` and `q`; LTree takes `n` (leaf count, balanced) and `q`; PTree
    takes `path` (number of nodes on the search path) and `q`. The
    numeric-vector list takes `n` and `qs`; the dependent list takes
    `elements`, `first` and `second`.
    """
    match type_id:
        case "List":
            xs, q = stats["elements"], stats["q"]
            pairs = sum(q(xs[i], xs[j]) for i in range(len(xs)) for j in range(i + 1, len(xs)))
            return stats.get("p", 0) * len(xs) + pairs
        case "EList":
            return stats["q"] * (2 ** stats["n"] - 1)
        case "LTree":
            n = stats["n"]
            if n < 1 or n & (n - 1):
                raise UnsupportedShape("closed form needs a balanced tree with a power-of-two leaf count")
            if not stats.get("balanced", True):
                raise UnsupportedShape("closed form needs a balanced tree")
            return stats["q"] * n * int(log2(n))
        case "PTree":
            return stats["q"] * stats["path"]
        case "NumVec":
            n = stats["n"]
            return sum(q * comb(n, i + 1) for i, q in enumerate(stats["qs"]))
        case "DepList":
            xs, f1, f2 = stats["elements"], stats["first"], stats["second"]
            return sum(f1(x) for x in xs) + sum(
                f2(xs[i], xs[j]) for i in range(len(xs)) for j in range(i + 1, len(xs)))
    raise UnsupportedShape(f"no closed form for {type_id}")


# ---------------------------------------------------------------------------
# Monomorphic number lists with vector and dependent annotations


def _nat_list_measure(name):
    return L.Measure("len", L.NAT, (
        (f"{name}Nil", L.MeasureCase("_", (), ZERO)),
        (f"{name}Cons", L.MeasureCase("y", ("ys",), L.Add((L.ONE, L.RVar("ys"))))),
    ))


def numeric_vector_list(k: int, name: str = "VList") -> InductiveSignature:
    """Nat lists annotated by a k-vector; Φ = Σ q_i·C(n, i)."""
    if k < 1:
        raise ValueError("need at least one annotation component")
    qs = [ThetaParam(f"q{i + 1}", L.NAT) for i in range(k)]
    shifted = tuple(
        L.Add((L.RVar(f"q{i + 1}"), L.RVar(f"q{i + 2}"))) if i + 1 < k else L.RVar(f"q{k}")
        for i in range(k))
    nil = ConstructorSig(f"{name}Nil", "_", T.Scalar(T.UnitB()))
    cons = ConstructorSig(f"{name}Cons", "y", T.Scalar(T.NatB()), (ChildSig("ys", shifted),), L.RVar("q1"))
    return InductiveSignature(name, (), tuple(qs), (nil, cons), _nat_list_measure(name))


def dependent_nat_list(name: str = "DList") -> InductiveSignature:
    """Nat lists with θ1: ℕ⇒ℕ per element and θ2: ℕ×ℕ⇒ℕ per ordered pair."""
    t1 = ThetaParam("t1", L.SArrow((L.NAT,), L.NAT))
    t2 = ThetaParam("t2", L.SArrow((L.NAT, L.NAT), L.NAT))
    x = L.RVar("x")
    shifted = (
        L.RLam((("x", L.NAT),), L.Add((L.RApp(L.RVar("t1"), (x,)), L.RApp(L.RVar("t2"), (L.RVar("y"), x))))),
        L.RVar("t2"),
    )
    nil = ConstructorSig(f"{name}Nil", "_", T.Scalar(T.UnitB()))
    cons = ConstructorSig(f"{name}Cons", "y", T.Scalar(T.NatB()), (ChildSig("ys", shifted),),
                          L.RApp(L.RVar("t1"), (L.RVar("y"),)))
    return InductiveSignature(name, (), (t1, t2), (nil, cons), _nat_list_measure(name))


def nat_list_value(sig: InductiveSignature, xs) -> K.Con:
    v = K.Con(sig.constructors[0].name, K.Triv())
    for x in reversed(list(xs)):
        v = K.Con(sig.constructors[1].name, K.Nat(x), (v,))
    return v


def constructor_sum_holds(sig, v, B, dts) -> bool:
    """Φ(C(v0, children)) equals content + π + Σ children, computed separately."""
    j = sig.index(v.name)
    y = L.interpret_atom(v.content, dts)
    parts = potential_of_value(v.content, content_type(sig, j, B), dts)
    parts += _nat(extract_constructor_potential(sig, j, y, B.theta))
    parts += sum(potential_of_value(c, T.Scalar(child_base(sig, j, i, y, B)), dts)
                 for i, c in enumerate(v.children))
    return potential_of_value(v, T.Scalar(B), dts) == parts


# ---------------------------------------------------------------------------
# Index consistency


_POINTS = (0, 2, 5)


def _content_samples(ct) -> list | None:
    match ct.base:
        case T.NatB() | T.TVarB():
            return [L.RInt(k) for k in _POINTS]
        case T.BoolB():
            return [L.TRUE, L.FALSE]
        case T.UnitB():
            return [L.interpret_atom(K.Triv())]
    return None


def _component_samples(p: ThetaParam) -> list:
    if not isinstance(p.sort, L.SArrow):
        return [ZERO, L.ONE, L.RInt(3)] if p.numeric else [L.TRUE, L.FALSE]
    params = tuple((f"x{i + 1}", s) for i, s in enumerate(p.sort.params))
    xs = [L.RVar(n) for n, _ in params]
    if not p.numeric:
        bodies = [L.TRUE, L.Lt(L.RInt(2), xs[0]), L.Lt(xs[0], L.RInt(2))]
    elif len(xs) == 1:
        bodies = [ZERO, L.RInt(2), xs[0], L.Ite(L.Lt(L.RInt(3), xs[0]), L.RInt(2), ZERO)]
    else:
        bodies = [ZERO, L.ONE, L.Ite(L.Lt(xs[-1], xs[0]), L.ONE, ZERO), L.Add(tuple(xs))]
    return [L.RLam(params, b) for b in bodies]


def _points(t, sort):
    """Values of a component over a small grid of arguments."""
    if not isinstance(sort, L.SArrow):
        return (L.eval_refinement({}, L.beta(t)),)
    out = []
    for args in _grid(len(sort.params)):
        out.append(L.eval_refinement({}, L.apply(t, *(L.RInt(a) for a in args))))
    return tuple(out)


def _grid(n):
    if n == 0:
        return [()]
    return [(a,) + rest for a in _POINTS for rest in _grid(n - 1)]


def _combine(p: ThetaParam, a, b):
    if not p.numeric:
        return a
    if not isinstance(p.sort, L.SArrow):
        return L.Add((a, b))
    params = tuple((f"x{i + 1}", s) for i, s in enumerate(p.sort.params))
    args = [L.RVar(n) for n, _ in params]
    return L.RLam(params, L.Add((L.apply(a, *args), L.apply(b, *args))))


def _profile(sig, j, y, theta):
    """Extract, child annotations and child increments, all evaluated on the grid."""
    con = sig.constructors[j]
    ext = L.eval_refinement({}, extract_constructor_potential(sig, j, y, theta))
    kids = []
    for shifted, inc in zip(shift_children(sig, j, y, theta), child_increments(sig, j, y, theta)):
        comps = tuple(_points(c, p.sort) for c, p in zip(shifted, sig.theta_params))
        incs = () if inc is None else tuple(L.eval_refinement({NU: a}, inc) for a in _POINTS)
        kids.append((comps, incs))
    return ext, kids


def _numeric_le(sig, a_kids, b_kids) -> bool:
    for (ca, ia), (cb, ib) in zip(a_kids, b_kids):
        for p, xa, xb in zip(sig.theta_params, ca, cb):
            if (p.numeric and any(u > v for u, v in zip(xa, xb))) or (not p.numeric and xa != xb):
                return False
        if any(u > v for u, v in zip(ia, ib)):
            return False
    return True


def _numeric_sum(sig, kids, a_kids, b_kids) -> bool:
    for (c, i), (ca, ia), (cb, ib) in zip(kids, a_kids, b_kids):
        for p, x, xa, xb in zip(sig.theta_params, c, ca, cb):
            if p.numeric and any(u != v + w for u, v, w in zip(x, xa, xb)):
                return False
            if not p.numeric and not (x == xa == xb):
                return False
        if any(u != v + w for u, v, w in zip(i, ia or (0,) * len(i), ib or (0,) * len(i))):
            return False
    return True


def _nonnegative(ext, kids) -> bool:
    vals = [ext] + [v for comps, incs in kids for comp in comps for v in comp if isinstance(v, int)
                    and not isinstance(v, bool)] + [v for _, incs in kids for v in incs]
    return all(v >= 0 for v in vals)


@lru_cache(maxsize=None)
def index_consistency(sig: InductiveSignature) -> tuple:
    """Violations of the datatype's consistency with subtyping and sharing.

    Extract and shift must be monotone in the numeric annotation components
    (with boolean components held equal), additive under sharing, and
    nonnegative. The premises are checked on sampled annotations, contents
    and argument grids; constructors whose content sort has no sampler are
    reported as unsupported rather than failed.
    """
    from itertools import product

    thetas = list(product(*(_component_samples(p) for p in sig.theta_params)))
    grid = {(p.name, c): _points(c, p.sort) for p in sig.theta_params for c in _component_samples(p)}
    problems = []
    for j, con in enumerate(sig.constructors):
        contents = _content_samples(con.content_type)
        if contents is None:
            problems.append(("unsupported", con.name, "content sort outside the sampled fragment"))
            continue
        for y in contents:
            prof = {th: _profile(sig, j, y, th) for th in thetas}
            for th, (ext, kids) in prof.items():
                if not _nonnegative(ext, kids):
                    problems.append(("nonnegative", con.name, L.show(y), th))
            for a, b in product(thetas, repeat=2):
                (ea, ka), (eb, kb) = prof[a], prof[b]
                below = all(all(u <= v for u, v in zip(grid[p.name, ca], grid[p.name, cb])) if p.numeric
                            else ca == cb for p, ca, cb in zip(sig.theta_params, a, b))
                if below and not (ea <= eb and _numeric_le(sig, ka, kb)):
                    problems.append(("subtyping", con.name, L.show(y), a, b))
                if any(not p.numeric and ca != cb for p, ca, cb in zip(sig.theta_params, a, b)):
                    continue
                both = tuple(_combine(p, ca, cb) for p, ca, cb in zip(sig.theta_params, a, b))
                e, k = _profile(sig, j, y, both)
                if e != ea + eb or not _numeric_sum(sig, k, ka, kb):
                    problems.append(("sharing", con.name, L.show(y), a, b))
    return tuple(problems)
