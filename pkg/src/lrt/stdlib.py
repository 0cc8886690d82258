"""The shipped datatype library, the benchmark corpus and its harness."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable

from . import kernel as K
from . import logic as L
from . import potential as P
from . import surface as S
from . import typesys as T


def _read(package_dir: str, name: str) -> str:
    return resources.files("lrt").joinpath(package_dir, name).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def prelude_program() -> S.SurfaceProgram:
    return S.parse_program(_read("prelude", "library.lrt"), "prelude/library.lrt")


@lru_cache(maxsize=None)
def library_signatures():
    prog = prelude_program()
    return S.elaborate_datatypes(prog.datatypes, prog.measures)


def load(text: str, file: str = "<input>") -> S.Module:
    """Load a program on top of the library prelude."""
    return S.load_program(text, file, prelude_program())


def instance_type(text: str):
    """Elaborate a surface type such as `List Nat^2 <1>` against the library."""
    return S.elaborate_signature(S.parse_type(text), library_signatures())


# ---------------------------------------------------------------------------
# Values


def list_value(xs) -> K.Con:
    v = K.Con("Nil", K.Triv())
    for x in reversed(list(xs)):
        v = K.Con("Cons", to_value(x), (v,))
    return v


def elist_value(xs) -> K.Con:
    v = K.Con("ENil", K.Triv())
    for x in reversed(list(xs)):
        v = K.Con("ECons", to_value(x), (v,))
    return v


def ltree_value(xs) -> K.Con:
    """A balanced leaf tree over xs, left half first. Built outside the metered program."""
    xs = list(xs)
    if not xs:
        raise ValueError("a leaf tree has at least one leaf")
    if len(xs) == 1:
        return K.Con("Leaf", to_value(xs[0]))
    mid = len(xs) // 2
    return K.Con("Node", K.Triv(), (ltree_value(xs[:mid]), ltree_value(xs[mid:])))


def bst_value(keys) -> K.Con:
    """The search tree obtained by inserting keys in order (duplicates dropped)."""
    tree = None
    for k in keys:
        tree = _bst_insert(tree, k)
    return _bst_con(tree)


def _bst_insert(t, k):
    if t is None:
        return [k, None, None]
    if k < t[0]:
        t[1] = _bst_insert(t[1], k)
    elif k > t[0]:
        t[2] = _bst_insert(t[2], k)
    return t


def _bst_con(t):
    if t is None:
        return K.Con("PLeaf", K.Triv())
    return K.Con("PNode", K.Nat(t[0]), (_bst_con(t[1]), _bst_con(t[2])))


def to_value(obj):
    """Python data to a kernel value: ints, bools, tuples and lists (as List)."""
    match obj:
        case bool():
            return K.BoolLit(obj)
        case int():
            return K.Nat(obj)
        case tuple() if len(obj) == 2:
            return K.PairA(to_value(obj[0]), to_value(obj[1]))
        case tuple() if len(obj) == 0:
            return K.Triv()
        case list():
            return list_value(obj)
    if K.is_value(obj):
        return obj
    raise TypeError(f"no kernel value for {obj!r}")


def from_value(v):
    """Kernel value back to Python data where there is an obvious reading."""
    match v:
        case K.Nat(n):
            return n
        case K.BoolLit(b):
            return b
        case K.Triv():
            return ()
        case K.PairA(l, r):
            return (from_value(l), from_value(r))
        case K.Con("Nil", _, _):
            return []
        case K.Con("Cons", x, (rest,)):
            tail = from_value(rest)
            if isinstance(tail, list):
                return [from_value(x)] + tail
    return v


def applied(module: S.Module, entry: str, args) -> K.Expr:
    """The closed program `entry a1 ... an`, in A-normal form."""
    fn = module.core.closed(module.binding(entry))
    if not args:
        return fn
    body = None
    for i in range(len(args) - 1, -1, -1):
        step = K.App(K.Var(f"app${i - 1}") if i > 0 else fn, args[i])
        body = step if body is None else K.Let(f"app${i}", step, body)
    return body


def entry_parameter_types(module: S.Module, entry: str, args) -> tuple:
    """Ground parameter types, with type variables at Nat and earlier arguments substituted."""
    sig = module.signatures[entry]
    body = sig.body if isinstance(sig, T.Poly) else sig
    if isinstance(sig, T.Poly):
        for a in sig.tvars:
            body = T.substitute_type(T.Scalar(T.NatB()), a, body, module.datatypes)
    out, extra = [], 0
    for v in args:
        if not isinstance(body, T.Fun):
            raise T.TypeError_(f"{entry} takes fewer than {len(args)} arguments")
        out.append(body.arg)
        extra += P._nat(body.potential) if not T.is_zero(body.potential) else 0
        mapping = {body.param: L.interpret_atom(v, module.datatypes)}
        body = T.subst_refinements(body.res, mapping)
    return tuple(out), extra


def input_potential(module: S.Module, entry: str, args) -> int:
    """Φ of the arguments under the entry's signature, plus arrow potentials."""
    tys, extra = entry_parameter_types(module, entry, args)
    return extra + sum(P.potential_of_value(v, t, module.datatypes) for v, t in zip(args, tys))


# ---------------------------------------------------------------------------
# Library entries


@dataclass(frozen=True)
class LibraryEntry:
    name: str
    source: str
    signature: P.InductiveSignature
    closed_form: str
    statistics: tuple
    doc: str


_DOCS = {
    "List": ("List", ("elements", "q", "p"), "Σ_{i<j} q(x_i, x_j), plus p per element"),
    "EList": ("EList", ("n", "q"), "q·(2^n − 1)"),
    "LTree": ("LTree", ("n", "q"), "q·n·log₂ n for balanced trees with n leaves"),
    "PTree": ("PTree", ("path", "q"), "q per node on the path selected by p"),
}


def _decl_source(name: str) -> str:
    text = _read("prelude", "library.lrt")
    blocks = text.split("\n\n")
    return "\n\n".join(b for b in blocks if f"data {name} " in b or f":: {name} " in b)


def library() -> tuple:
    dts = library_signatures()
    out = []
    for name, (form, stats, doc) in _DOCS.items():
        out.append(LibraryEntry(name, _decl_source(name), dts[name], form, stats, doc))
    return tuple(out)


@dataclass
class ValidationReport:
    checked: dict = field(default_factory=dict)
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


_LIST_QS = (
    ("0", lambda a, b: 0),
    ("1", lambda a, b: 1),
    ("2", lambda a, b: 2),
    ("ite(x1 > x2, 1, 0)", lambda a, b: int(a > b)),
    ("ite(x1 < x2, 1, 0)", lambda a, b: int(a < b)),
    ("ite(x1 == x2, 3, 0)", lambda a, b: 3 * int(a == b)),
    ("x1 + x2", lambda a, b: a + b),
)

_PREDICATES = (
    ("k < x1", lambda k, x: k < x),
    ("x1 < k", lambda k, x: x < k),
    ("x1 == k", lambda k, x: x == k),
    ("not (x1 == k)", lambda k, x: x != k),
)


def _selected_path(tree, pred) -> int:
    """Nodes reached by descending left where the predicate holds, right otherwise."""
    n, t = 0, tree
    while t is not None:
        n += 1
        t = t[1] if pred(t[0]) else t[2]
    return n


def _constructor_sums(v, B, dts) -> bool:
    """The per-constructor decomposition holds at every node of v."""
    if not isinstance(v, K.Con):
        return True
    sig = dts[B.name]
    if not P.constructor_sum_holds(sig, v, B, dts):
        return False
    j = sig.index(v.name)
    y = L.interpret_atom(v.content, dts)
    return all(_constructor_sums(c, P.child_base(sig, j, i, y, B), dts) for i, c in enumerate(v.children))


def validate_library(instances: int = 200, seed: int = 0) -> ValidationReport:
    """Compare inductive potentials with closed forms on random instances."""
    rng = random.Random(seed)
    dts = library_signatures()
    rep = ValidationReport()

    def record(kind, ok, what):
        rep.checked[kind] = rep.checked.get(kind, 0) + 1
        if not ok:
            rep.mismatches.append((kind, what))

    for name, sig in dts.items():
        problems = P.index_consistency(sig)
        record("index consistency", not problems, (name, problems[:3]))

    for _ in range(instances):
        qtext, qfn = rng.choice(_LIST_QS)
        p = rng.randrange(4)
        xs = [rng.randrange(8) for _ in range(rng.randrange(11))]
        ty = instance_type(f"List Nat^{p} <\\x1 x2. {qtext}>")
        v = list_value(xs)
        got = P.potential_of_value(v, ty, dts)
        want = P.closed_form_potential("List", {"elements": xs, "q": qfn, "p": p})
        record("List", got == want and _constructor_sums(v, ty.base, dts), (xs, p, qtext, got, want))

        q, n = rng.randrange(4), rng.randrange(11)
        ty = instance_type(f"EList Nat <{q}>")
        v = elist_value([rng.randrange(8) for _ in range(n)])
        got = P.potential_of_value(v, ty, dts)
        want = P.closed_form_potential("EList", {"n": n, "q": q})
        record("EList", got == want and _constructor_sums(v, ty.base, dts), (n, q, got, want))

        q, n = rng.randrange(4), 2 ** rng.randrange(7)
        ty = instance_type(f"LTree Nat <{q}>")
        v = ltree_value([rng.randrange(8) for _ in range(n)])
        got = P.potential_of_value(v, ty, dts)
        want = P.closed_form_potential("LTree", {"n": n, "q": q})
        record("LTree", got == want and _constructor_sums(v, ty.base, dts), (n, q, got, want))

        q, k = rng.randrange(4), rng.randrange(17)
        ptext, pfn = rng.choice(_PREDICATES)
        keys = [rng.randrange(17) for _ in range(rng.randrange(11))]
        tree = None
        for key in keys:
            tree = _bst_insert(tree, key)
        ty = instance_type(f"PTree Nat <\\x1. {ptext.replace('k', str(k))}, {q}>")
        v = _bst_con(tree)
        got = P.potential_of_value(v, ty, dts)
        want = P.closed_form_potential("PTree", {"path": _selected_path(tree, lambda x: pfn(k, x)), "q": q})
        record("PTree", got == want and _constructor_sums(v, ty.base, dts), (keys, ptext, k, q, got, want))
    return rep


# ---------------------------------------------------------------------------
# Benchmarks


@dataclass(frozen=True)
class BenchmarkCase:
    id: int
    name: str
    file: str
    entry: str
    signature: str
    category: str
    generate: Callable  # (rng) -> tuple of kernel values
    exact: Callable = None  # (args) -> whether ticks must equal Φ
    expected: str = "sat"

    @property
    def source(self) -> str:
        return _read("corpus", self.file)


def _nats(rng, lo, hi, top=9):
    return [rng.randrange(top + 1) for _ in range(rng.randint(lo, hi))]


def _list_gen(hi):
    return lambda rng: (list_value(_nats(rng, 0, hi)),)


def _reverse_sorted(args) -> bool:
    xs = from_value(args[0])
    return all(a > b for a, b in zip(xs, xs[1:]))


def _bst_gen(rng):
    keys = _nats(rng, 0, 10, 16)
    return (K.Nat(rng.randrange(17)), bst_value(keys))


CASES = (
    BenchmarkCase(1, "All ordered pairs", "benchmark01.lrt", "pairs",
                  "List a^2 <2> -> List (a, a)", "polynomial", _list_gen(10)),
    BenchmarkCase(2, "List reverse", "benchmark02.lrt", "reverse",
                  "List a^2 <1> -> List a", "polynomial", _list_gen(10)),
    BenchmarkCase(3, "Remove duplicates", "benchmark03.lrt", "nub",
                  "List a^2 <1> -> List a", "polynomial", lambda rng: (list_value(_nats(rng, 0, 10, 5)),)),
    BenchmarkCase(4, "Insertion sort (coarse)", "benchmark04.lrt", "sort",
                  "List a^1 <1> -> List a", "polynomial", _list_gen(10), _reverse_sorted),
    BenchmarkCase(5, "Selection sort", "benchmark05.lrt", "selsort",
                  "List a^4 <3> -> List a", "polynomial", _list_gen(10)),
    BenchmarkCase(6, "Quicksort", "benchmark06.lrt", "qsort",
                  "List a^3 <3> -> List a", "polynomial", _list_gen(10)),
    BenchmarkCase(7, "Merge sort", "benchmark07.lrt", "msort",
                  "List a^2 <2> -> List a", "polynomial", _list_gen(10)),
    BenchmarkCase(8, "Subset sum", "benchmark08.lrt", "subsetSum",
                  "EList Nat <2> -> Nat -> Bool", "non-polynomial",
                  lambda rng: (elist_value(_nats(rng, 0, 6)), K.Nat(rng.randrange(20))), lambda args: True),
    BenchmarkCase(9, "Merge sort (flatten)", "benchmark09.lrt", "flatten",
                  "LTree a^1 <1> -> List a", "non-polynomial",
                  lambda rng: (ltree_value(_nats(rng, 2 ** (k := rng.randrange(5)), 2 ** k)),)),
    BenchmarkCase(10, "Insertion sort (fine)", "benchmark10.lrt", "sort",
                  "List a^1 <λx1 x2. ite(x1 > x2, 1, 0)> -> List a", "value-dependent",
                  _list_gen(8), lambda args: True),
    BenchmarkCase(11, "BST insert", "benchmark11.lrt", "insert",
                  "x:a -> PTree a <λx1. x < x1, 1> -> PTree a <λx1. x < x1, 0>", "value-dependent", _bst_gen),
    BenchmarkCase(12, "BST member", "benchmark12.lrt", "member",
                  "x:a -> PTree a <λx1. x < x1, 1> -> Bool", "value-dependent", _bst_gen),
)


NEGATIVE_CONTROLS = (
    ("sort against linear-only potential", "sort_linear.lrt", "sort"),
    ("insert against zero potential", "insert_zero.lrt", "insert"),
)


def control_source(file: str) -> str:
    return _read("controls", file)


class MissingCase(Exception):
    pass


def cases_in(directory) -> tuple:
    """The benchmark cases whose files are present in `directory`; raises on gaps."""
    d = Path(directory)
    missing = [c.file for c in CASES if not (d / c.file).is_file()]
    if missing:
        raise MissingCase(f"corpus {d} lacks {', '.join(missing)}")
    return CASES


def corpus_dir() -> Path:
    return Path(str(resources.files("lrt").joinpath("corpus")))


@dataclass
class OracleResult:
    runs: int = 0
    exact_runs: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class BenchmarkResult:
    case: BenchmarkCase
    verdict: str
    elapsed: float
    bindings: dict
    oracle: OracleResult | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return (self.error is None and self.verdict == self.case.expected
                and (self.oracle is None or self.oracle.ok))

    def to_json(self) -> dict:
        return {
            "id": self.case.id, "name": self.case.name, "file": self.case.file,
            "verdict": self.verdict, "expected": self.case.expected,
            "elapsed_ms": round(self.elapsed * 1000, 1),
            "bindings": self.bindings,
            "oracle": None if self.oracle is None else {
                "runs": self.oracle.runs, "exact_runs": self.oracle.exact_runs,
                "violations": [str(v) for v in self.oracle.violations],
            },
            "error": self.error, "ok": self.ok,
        }


def verify_module(module: S.Module, cfg=None) -> dict:
    """Check and solve every signed binding; name → SolveResult."""
    from . import checker, solver

    out = {}
    for name, cs in checker.check_program(module).items():
        out[name] = solver.solve_constraints(cs, cfg)
    return out


def combined_verdict(results: dict) -> str:
    statuses = [r.status for r in results.values()]
    if all(s == "sat" for s in statuses):
        return "sat"
    if any(s == "unsat" for s in statuses):
        return "unsat"
    return "unknown"


def run_oracle(module: S.Module, entry: str, generate, exact=None, samples: int = 50,
               seed: int = 0, fuel: int = K.DEFAULT_FUEL) -> OracleResult:
    rng = random.Random(seed)
    res = OracleResult()
    for _ in range(samples):
        args = generate(rng)
        phi = input_potential(module, entry, args)
        hwm = K.high_water_mark(applied(module, entry, args), fuel)
        res.runs += 1
        if hwm > phi:
            res.violations.append(("bound", [K.show(a) for a in args], hwm, phi))
        elif exact is not None and exact(args):
            res.exact_runs += 1
            if hwm != phi:
                res.violations.append(("exact", [K.show(a) for a in args], hwm, phi))
    return res


def run_benchmark(case: BenchmarkCase, cfg=None, samples: int = 50, seed: int = 0,
                  directory=None) -> BenchmarkResult:
    start = time.perf_counter()
    try:
        text = (Path(directory) / case.file).read_text() if directory else case.source
        module = load(text, case.file)
        results = verify_module(module, cfg)
    except Exception as exc:  # reported as a row, not raised
        return BenchmarkResult(case, "error", time.perf_counter() - start, {}, None, f"{type(exc).__name__}: {exc}")
    elapsed = time.perf_counter() - start
    verdict = combined_verdict(results)
    bindings = {n: r.status for n, r in results.items()}
    oracle = None
    if verdict == "sat" and samples:
        oracle = run_oracle(module, case.entry, case.generate, case.exact, samples, seed)
    return BenchmarkResult(case, verdict, elapsed, bindings, oracle)


def run_corpus(directory=None, cfg=None, samples: int = 50, seed: int = 0) -> list:
    cases = cases_in(directory) if directory else CASES
    return [run_benchmark(c, cfg, samples, seed, directory) for c in cases]
