"""Discharge constraint sets: ground solving, template CEGIS, SMT-LIB emission.

Unknown potential functions are synthesized as nonnegative integer
combinations of features over their parameters: the constant 1, each
numeric parameter, indicator comparisons between parameters (depth 1) and
conjunctions of two comparisons (depth 2). For a finite set of
counterexample points the matrix is linear in the feature weights, so each
synthesis step is a small MILP (scipy/HiGHS). Candidates are verified with
the bounded validity checker and every counterexample is fed back.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from . import logic as L
from . import typesys as T


class NonLinear(Exception):
    pass


class SecondOrderUnencodable(Exception):
    pass


@dataclass(frozen=True)
class Template:
    depth: int = 2
    coeff_bound: int = 2
    comparisons: tuple = ("<", ">", "=")


@dataclass(frozen=True)
class SolverConfig:
    template: Template = Template()
    ce_bound: int = L.DEFAULT_BOUND
    timeout: float = 60.0
    max_iterations: int = 400


@dataclass(frozen=True)
class Constraint:
    universals: tuple
    hyps: tuple
    conclusion: Any
    origin: Any = None  # the Obligation it came from

    def query(self) -> L.Query:
        return L.Query(self.universals, self.hyps, self.conclusion)


@dataclass
class CLIASystem:
    unknowns: dict
    constraints: list

    @property
    def ground(self) -> bool:
        return all(not d.params for d in self.unknowns.values())


@dataclass
class SolveResult:
    status: str  # "sat" | "unsat" | "unknown"
    valuation: dict = field(default_factory=dict)
    iterations: int = 0
    elapsed_ms: float = 0.0
    reason: str = ""
    witness: list = field(default_factory=list)

    @property
    def sat(self) -> bool:
        return self.status == "sat"

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "valuation": {k: show_solution(v) for k, v in sorted(self.valuation.items())},
            "iterations": self.iterations,
            "elapsed_ms": round(self.elapsed_ms, 3),
            "reason": self.reason,
            "witness": self.witness,
        }


def show_solution(sol: L.RLam) -> str:
    body = L.show(L.simplify(sol.body))
    if not sol.params:
        return body
    return f"λ({', '.join(p for p, _ in sol.params)}). {body}"


# ---------------------------------------------------------------------------
# Normalization


def _prepare(q: L.Query):
    univ, fs = L.split_products(q.universals, list(q.assumptions) + [q.conclusion])
    hyps, concl = fs[:-1], L.beta(fs[-1])
    while isinstance(concl, L.Forall):
        univ.append((concl.var, concl.sort))
        concl = L.beta(concl.body)
    univ, hyps, concl = L.eliminate_definitions(univ, hyps, concl)
    hyps = [h for h in (L.simplify(h) for h in hyps) if h != L.TRUE]
    return tuple(univ), tuple(hyps), concl


def normalize_constraints(cs) -> CLIASystem:
    """Flatten every nontrivial obligation into ∀ universals. hyps ⇒ conclusion."""
    out = []
    for ob in cs.nontrivial():
        univ, hyps, concl = _prepare(ob.query(cs.datatypes))
        for h in hyps:
            if L.unknowns_of(h):
                raise NonLinear(f"unknown in an assumption: {L.show(h)}")
        _check_linear(concl)
        out.append(Constraint(univ, hyps, concl, ob))
    return CLIASystem(dict(cs.unknowns), out)


def _check_linear(t):
    match t:
        case L.Mul(_, a):
            _check_linear(a)
        case L.RApp(L.RVar(f), _):
            raise NonLinear(f"uninterpreted application of {f}")
        case _:
            for c in L._children(t):
                _check_linear(c)


# ---------------------------------------------------------------------------
# Templates


@dataclass(frozen=True)
class Feature:
    term: Any  # closed CLIA term over the unknown's parameters
    depth: int

    def value(self, env) -> int:
        return int(L.eval_refinement(env, self.term))


def _comparison(op, a, b):
    match op:
        case "<":
            return L.Lt(a, b)
        case ">":
            return L.Lt(b, a)
        case "=":
            return L.Eq(a, b)
        case "<=":
            return L.Le(a, b)
    raise ValueError(op)


def features(params: tuple, tmpl: Template, depth: int) -> list:
    out = [Feature(L.ONE, 0)]
    if not params:
        return out
    nat = [p for p, s in params if isinstance(s, L.SNat)]
    out += [Feature(L.RVar(p), 0) for p in nat]
    if depth < 1:
        return out
    guards = []
    for (a, sa), (b, sb) in itertools.combinations(params, 2):
        if sa == sb and L.is_ordered_sort(sa):
            for op in tmpl.comparisons:
                guards.append(_comparison(op, L.RVar(a), L.RVar(b)))
    bools = [p for p, s in params if isinstance(s, L.SBool)]
    guards += [L.RVar(p) for p in bools] + [L.Not(L.RVar(p)) for p in bools]
    out += [Feature(L.Ite(g, L.ONE, L.ZERO), 1) for g in guards]
    if depth >= 2:
        for g1, g2 in itertools.combinations(guards, 2):
            out.append(Feature(L.Ite(g1, L.Ite(g2, L.ONE, L.ZERO), L.ZERO), 2))
    return out


def _max_literal(system: CLIASystem) -> int:
    best = 1

    def go(t):
        nonlocal best
        if isinstance(t, L.RInt):
            best = max(best, abs(t.value))
        for c in L._children(t):
            go(c)

    for c in system.constraints:
        go(c.conclusion)
    return best


class _Space:
    """Weight variables for every (unknown, feature) pair."""

    def __init__(self, system: CLIASystem, tmpl: Template, depth: int):
        self.feats = {}
        self.index = {}
        self.caps = []
        const_cap = max(tmpl.coeff_bound, 4 * _max_literal(system))
        for name in sorted(system.unknowns):
            decl = system.unknowns[name]
            fs = features(decl.params, tmpl, depth)
            self.feats[name] = fs
            for i, f in enumerate(fs):
                self.index[(name, i)] = len(self.caps)
                if not decl.params:
                    self.caps.append(np.inf)
                elif f.depth == 0 and f.term == L.ONE:
                    self.caps.append(const_cap)
                else:
                    self.caps.append(tmpl.coeff_bound)
        self.params = {n: d.params for n, d in system.unknowns.items()}

    @property
    def size(self) -> int:
        return len(self.caps)

    def valuation(self, w) -> dict:
        out = {}
        for name, fs in self.feats.items():
            terms = []
            for i, f in enumerate(fs):
                k = int(round(w[self.index[(name, i)]]))
                if k:
                    terms.append(f.term if k == 1 else L.Mul(k, f.term))
            body = L.simplify(L.mk_add(*terms)) if terms else L.ZERO
            out[name] = L.RLam(tuple(self.params[name]), body)
        return out


# ---------------------------------------------------------------------------
# Linearization at a point


def _eval(t, env):
    return L.eval_refinement(env, t)


def _lin(t, env, space: _Space):
    """Linear form (coefficient vector dict, constant) of a numeric term at env."""
    if not L.unknowns_of(t):
        v = _eval(t, env)
        if isinstance(v, bool):
            raise NonLinear(f"boolean in arithmetic: {L.show(t)}")
        return {}, int(v)
    match t:
        case L.Add(args):
            out, c = {}, 0
            for a in args:
                d, k = _lin(a, env, space)
                c += k
                for i, v in d.items():
                    out[i] = out.get(i, 0) + v
            return out, c
        case L.Sub(a, b):
            da, ka = _lin(a, env, space)
            db, kb = _lin(b, env, space)
            out = dict(da)
            for i, v in db.items():
                out[i] = out.get(i, 0) - v
            return out, ka - kb
        case L.Mul(k, a):
            d, c = _lin(a, env, space)
            return {i: k * v for i, v in d.items()}, k * c
        case L.Ite(c, a, b):
            if L.unknowns_of(c):
                raise NonLinear(f"unknown in a condition: {L.show(c)}")
            return _lin(a if _eval(c, env) else b, env, space)
        case L.Unknown(name, args):
            vals = [_eval(a, env) for a in args]
            inner = {p: v for (p, _), v in zip(space.params[name], vals)}
            out = {}
            for i, f in enumerate(space.feats[name]):
                fv = f.value(inner)
                if fv:
                    out[space.index[(name, i)]] = fv
            return out, 0
    raise NonLinear(f"not linear: {L.show(t)}")


def _rows(f, env, space: _Space) -> list | None:
    """Rows (coeffs, upper) meaning coeffs·w ≤ upper; None when f is false regardless."""
    if not L.unknowns_of(f):
        return [] if _eval(f, env) else None
    match f:
        case L.And(args):
            out = []
            for a in args:
                r = _rows(a, env, space)
                if r is None:
                    return None
                out += r
            return out
        case L.Implies(a, b) if not L.unknowns_of(a):
            return _rows(b, env, space) if _eval(a, env) else []
        case L.Or(args):
            ground = [a for a in args if not L.unknowns_of(a)]
            if any(_eval(a, env) for a in ground):
                return []
            rest = [a for a in args if L.unknowns_of(a)]
            if len(rest) == 1:
                return _rows(rest[0], env, space)
            raise NonLinear(f"disjunction over unknowns: {L.show(f)}")
        case L.Le(a, b) | L.Lt(a, b):
            da, ka = _lin(a, env, space)
            db, kb = _lin(b, env, space)
            d = dict(da)
            for i, v in db.items():
                d[i] = d.get(i, 0) - v
            strict = 1 if isinstance(f, L.Lt) else 0
            return [(d, kb - ka - strict)]
        case L.Eq(a, b):
            return _rows(L.Le(a, b), env, space) + _rows(L.Le(b, a), env, space)
        case L.Not(L.Le(a, b)):
            return _rows(L.Lt(b, a), env, space)
        case L.Not(L.Lt(a, b)):
            return _rows(L.Le(b, a), env, space)
        case L.Ite(c, a, b) if not L.unknowns_of(c):
            return _rows(a if _eval(c, env) else b, env, space)
    raise NonLinear(f"unsupported constraint shape: {L.show(f)}")


def _default(s):
    match s:
        case L.SBool():
            return False
        case L.SUnit():
            return "⋆"
    return 0


def _complete(c: Constraint, point: dict) -> dict:
    return {n: point.get(n, _default(s)) for n, s in c.universals}


def _holds_hyps(c: Constraint, env) -> bool:
    return all(_eval(h, env) for h in c.hyps)


# ---------------------------------------------------------------------------
# Synthesis


def _synthesize(space: _Space, instances, system):
    """Minimum-weight integer solution over the instance rows, or None."""
    rows, ub = [], []
    for ci, env in instances:
        r = _rows(system.constraints[ci].conclusion, env, space)
        if r is None:
            return None
        for d, u in r:
            if not d:
                if u < 0:
                    return None
                continue
            row = np.zeros(space.size)
            for i, v in d.items():
                row[i] = v
            rows.append(row)
            ub.append(u)
    n = space.size
    if n == 0:
        return np.zeros(0)
    # prefer few, small, early features; the tiny ramp makes the optimum unique
    cost = np.array([1.0 + 1e-4 * i for i in range(n)])
    cons = [LinearConstraint(np.array(rows), -np.inf, np.array(ub, dtype=float))] if rows else []
    res = milp(cost, constraints=cons, integrality=np.ones(n),
               bounds=Bounds(np.zeros(n), np.array(space.caps, dtype=float)))
    if res.status != 0 or res.x is None:
        return None
    return np.round(res.x)


def _infeasible_core(space: _Space, instances, system) -> list:
    """Shrink an infeasible instance list until every member is needed."""
    core = list(instances)
    i = 0
    while i < len(core):
        trial = core[:i] + core[i + 1:]
        if _synthesize(space, trial, system) is None:
            core = trial
        else:
            i += 1
    return core


def verify(system: CLIASystem, valuation: dict, bound: int) -> list:
    """(constraint index, counterexample or None) for each failing constraint."""
    bad = []
    for i, c in enumerate(system.constraints):
        r = L.decide(c.query(), valuation, bound)
        match r:
            case L.Invalid(cex):
                bad.append((i, cex))
            case L.UnknownVerdict(reason):
                bad.append((i, None))
    return bad


def reverify(cs, valuation: dict, bound: int) -> list:
    """Labels of original obligations the valuation fails (must be empty for SAT)."""
    bad = []
    for ob in cs.obligations:
        if not (ob.unknowns() <= set(valuation)):
            bad.append(ob.label)
            continue
        if not isinstance(L.decide(ob.query(cs.datatypes), valuation, bound), L.Valid):
            bad.append(f"{ob.rule}: {ob.label}")
    return bad


def solve(system: CLIASystem, cfg: SolverConfig | None = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    start = time.perf_counter()
    elapsed = lambda: (time.perf_counter() - start) * 1000
    if not system.constraints:
        val = {n: L.RLam(tuple(d.params), L.ZERO) for n, d in system.unknowns.items()}
        return SolveResult("sat", val, 0, elapsed())
    instances: list = []
    seen = set()
    iterations = 0
    depths = [0] if system.ground else list(range(cfg.template.depth + 1))
    for depth in depths:
        space = _Space(system, cfg.template, depth)
        while True:
            iterations += 1
            if iterations > cfg.max_iterations or elapsed() > cfg.timeout * 1000:
                return SolveResult("unknown", {}, iterations, elapsed(), "timeout")
            w = _synthesize(space, instances, system)
            if w is None:
                break
            val = space.valuation(w)
            bad = verify(system, val, cfg.ce_bound)
            if not bad:
                return SolveResult("sat", val, iterations, elapsed())
            progress = False
            for ci, cex in bad:
                if cex is None:
                    return SolveResult("unknown", {}, iterations, elapsed(), "validity-unknown")
                env = _complete(system.constraints[ci], cex)
                key = (ci, tuple(sorted(env.items())))
                if key not in seen:
                    seen.add(key)
                    instances.append((ci, env))
                    progress = True
            if not progress:
                return SolveResult("unknown", {}, iterations, elapsed(), "no progress")
    if system.ground:
        instances = _infeasible_core(space, instances, system)
    witness = []
    for ci in sorted({ci for ci, _ in instances}):
        o = system.constraints[ci].origin
        if o is not None:
            where = f"{o.span}: " if getattr(o, "span", None) is not None else ""
            witness.append(f"{where}{o.rule}: {o.label}")
    if system.ground:
        return SolveResult("unsat", {}, iterations, elapsed(), "infeasible", witness)
    return SolveResult("unknown", {}, iterations, elapsed(), "template exhausted", witness)


def solve_constraints(cs, cfg: SolverConfig | None = None) -> SolveResult:
    """Normalize, solve, and independently re-verify a checker constraint set."""
    cfg = cfg or SolverConfig()
    system = normalize_constraints(cs)
    res = solve(system, cfg)
    if res.sat:
        for n, d in cs.unknowns.items():
            res.valuation.setdefault(n, L.RLam(tuple(d.params), L.ZERO))
        bad = reverify(cs, res.valuation, cfg.ce_bound)
        if bad:
            return SolveResult("unknown", {}, res.iterations, res.elapsed_ms, "re-verification failed", bad)
    return res


# ---------------------------------------------------------------------------
# SMT-LIB


def inline(t, valuation: dict):
    """Replace unknown applications by their valuation bodies."""
    match t:
        case L.Unknown(name, args):
            sol = valuation[name]
            m = {p: inline(a, valuation) for (p, _), a in zip(sol.params, args)}
            return L.substitute(sol.body, m)
    kids = [inline(c, valuation) for c in L._children(t)]
    return L._rebuild(t, kids) if kids else t


def emit_smtlib(system: CLIASystem, valuation: dict | None = None) -> str:
    lines = ["(set-logic LIA)"]
    if valuation is None:
        funs = [n for n, d in system.unknowns.items() if d.params]
        if funs:
            raise SecondOrderUnencodable(f"function unknowns need a valuation: {', '.join(sorted(funs))}")
        for n in sorted(system.unknowns):
            lines.append(f"(declare-const {L.smt_name(n)} Int)")
            lines.append(f"(assert (>= {L.smt_name(n)} 0))")
    if not system.constraints:
        lines.append("(assert true)")
    for c in system.constraints:
        body = L.mk_implies(L.mk_and(*c.hyps), c.conclusion) if c.hyps else c.conclusion
        if valuation is not None:
            body = L.beta(inline(body, valuation))
        f = body
        for n, s in reversed(c.universals):
            f = L.Forall(n, s, f)
        lines.append(f"(assert {L.to_smtlib(f)})")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"
