"""Command-line entry points: check, eval and bench."""

from __future__ import annotations

import argparse
import ast
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import checker as C
from . import kernel as K
from . import logic as L
from . import solver as V
from . import stdlib
from . import surface as S
from . import typesys as T

SCHEMA = 1

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_ILL_FORMED = 2
EXIT_UNKNOWN = 3
EXIT_RESOURCES = 4
EXIT_FUEL = 5

ILL_FORMED = (S.SurfaceError, C.CheckError, T.TypeError_, L.SortError, L.ArityMismatch,
              L.NotInterpretable, V.NonLinear)


class ConfigError(ValueError):
    pass


@dataclass
class CliConfig:
    command: str
    paths: list = field(default_factory=list)
    template_depth: int = 2
    coeff_bound: int = 2
    ce_bound: int = 16
    timeout: float = 60.0
    format: str = "text"
    dump_constraints: str | None = None
    keep_trivial: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.template_depth < 0:
            raise ConfigError("template depth must be nonnegative")
        if self.coeff_bound < 1 or self.ce_bound < 1:
            raise ConfigError("bounds must be positive")
        if self.timeout < 1:
            raise ConfigError("the solver timeout is at least one second")

    def solver(self) -> V.SolverConfig:
        tmpl = V.Template(depth=self.template_depth, coeff_bound=self.coeff_bound)
        return V.SolverConfig(tmpl, ce_bound=self.ce_bound, timeout=self.timeout)


def exit_code(statuses, ill_formed: bool = False) -> int:
    """Worst outcome wins: ill-formed input, then failure, then unknown."""
    statuses = list(statuses)
    if ill_formed:
        return EXIT_ILL_FORMED
    if any(s in ("unsat", "error") for s in statuses):
        return EXIT_FAILED
    if any(s == "unknown" for s in statuses):
        return EXIT_UNKNOWN
    return EXIT_OK


def _emit(out, text=""):
    print(text, file=out or sys.stdout)


# ---------------------------------------------------------------------------
# check


def cmd_check(paths, cfg: CliConfig, out=None) -> int:
    report, dumps, statuses, ill = [], [], [], False
    for path in paths:
        try:
            text = Path(path).read_text(encoding="utf-8")
            module = stdlib.load(text, str(path))
            chk = C.Checker(module)
        except OSError as exc:
            _emit(out, f"{path}: {exc.strerror or exc}")
            ill = True
            continue
        except ILL_FORMED as exc:
            _emit(out, f"{_where(exc, path)}: error: {_msg(exc)}")
            ill = True
            continue
        for name in _checked_names(module):
            start = time.perf_counter()
            try:
                cs = chk.check_binding(name)
                res = V.solve_constraints(cs, cfg.solver())
            except ILL_FORMED as exc:
                _emit(out, f"{_where(exc, path)}: error in {name}: {_msg(exc)}")
                ill = True
                continue
            elapsed = (time.perf_counter() - start) * 1000
            statuses.append(res.status)
            dumps.append(cs.to_json(cfg.keep_trivial))
            rec = {"file": str(path), "binding": name, "verdict": res.status,
                   "elapsed_ms": round(elapsed, 1), "unknowns": len(cs.unknowns), **res.to_json()}
            rec["elapsed_ms"] = round(elapsed, 1)
            report.append(rec)
            if cfg.format == "text":
                line = f"{name:<16} {res.status:<8} {elapsed:9.1f} ms  {len(cs.unknowns)} unknowns"
                _emit(out, line)
                if not res.sat:
                    _emit(out, f"  {res.reason}")
                    for w in res.witness[:3]:
                        _emit(out, f"  at {w}")
    if cfg.dump_constraints:
        Path(cfg.dump_constraints).write_text(json.dumps({"schema": SCHEMA, "constraint_sets": dumps}, indent=2))
    code = exit_code(statuses, ill)
    if cfg.format == "json":
        _emit(out, json.dumps({"schema": SCHEMA, "exit": code, "results": report}, indent=2))
    return code


def _checked_names(module):
    return [b.name for b in module.core.bindings
            if b.name in module.signatures and b.name not in module.library]


def _where(exc, path):
    span = getattr(exc, "span", None)
    return str(span) if span is not None else str(path)


def _msg(exc):
    return getattr(exc, "msg", None) or str(exc)


# ---------------------------------------------------------------------------
# eval


def parse_argument(text: str, param_type, module):
    """A value from Python-style literal syntax, or from a constructor expression."""
    try:
        obj = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        obj = None
    if obj is not None:
        return _shaped(obj, param_type)
    e = S.desugar_expr(S.parse_expr(text), module.layouts)
    out = K.evaluate(e, 0)
    if not isinstance(out, K.Finished):
        raise ValueError(f"argument {text!r} is not a value")
    return out.value


def _shaped(obj, ty):
    """Read lists according to the parameter's datatype."""
    base = ty.base if isinstance(ty, T.Scalar) else None
    if isinstance(obj, list) and isinstance(base, T.DataB):
        match base.name:
            case "EList":
                return stdlib.elist_value(obj)
            case "LTree":
                return stdlib.ltree_value(obj)
            case "PTree":
                return stdlib.bst_value(obj)
    return stdlib.to_value(obj)


def cmd_eval(path, entry, args, fuel=K.DEFAULT_FUEL, budget=None, trace=False, out=None) -> int:
    try:
        module = stdlib.load(Path(path).read_text(encoding="utf-8"), str(path))
        if entry not in {b.name for b in module.core.bindings}:
            raise ValueError(f"no binding named {entry}")
        sig = module.signatures.get(entry)
        params = _param_types(sig, len(args))
        values = [parse_argument(a, p, module) for a, p in zip(args, params)]
    except (OSError, ValueError, TypeError, *ILL_FORMED) as exc:
        _emit(out, f"error: {_msg(exc)}")
        return EXIT_ILL_FORMED
    expr = stdlib.applied(module, entry, values)
    try:
        hwm = K.high_water_mark(expr, fuel)
    except K.Nonterminating:
        hwm = None
    except K.EvalError:
        hwm = None
    q = hwm if budget is None else budget
    if q is None:
        _emit(out, f"fuel exhausted after {fuel} steps")
        return EXIT_FUEL
    state, steps = K.MachineState(expr, q), 0
    if trace:
        _emit(out, f"step 0: q={q} : {K.summary(expr)}")
    while not K.is_value(state.expr):
        if steps >= fuel:
            _emit(out, f"fuel exhausted after {steps} steps")
            return EXIT_FUEL
        try:
            state = K.step(state)
        except K.InsufficientResources as err:
            _emit(out, f"resources exhausted at step {steps + 1}: need {err.cost}, have {err.state.q}")
            if hwm is not None:
                _emit(out, f"high-water mark: {hwm}")
            return EXIT_RESOURCES
        except K.StuckError as err:
            _emit(out, f"stuck at step {steps + 1}: {err.reason}")
            return EXIT_FAILED
        steps += 1
        if trace:
            _emit(out, f"step {steps}: q={state.q} : {K.summary(state.expr)}")
    _emit(out, f"result: {_show_value(state.expr)}")
    _emit(out, f"steps: {steps}")
    _emit(out, f"leftover: {state.q}")
    _emit(out, f"high-water mark: {hwm}")
    return EXIT_OK


def _param_types(sig, n):
    if sig is None:
        return [None] * n
    body = sig.body if isinstance(sig, T.Poly) else sig
    out = []
    for _ in range(n):
        if not isinstance(body, T.Fun):
            raise ValueError("too many arguments")
        out.append(body.arg)
        body = body.res
    return out


def _show_value(v):
    py = stdlib.from_value(v)
    return K.show(v) if py is v else json.dumps(py).replace('"', "")


# ---------------------------------------------------------------------------
# bench


def cmd_bench(directory, cfg: CliConfig, samples: int = 50, out=None) -> int:
    try:
        results = stdlib.run_corpus(directory, cfg.solver(), samples, cfg.seed)
    except stdlib.MissingCase as exc:
        _emit(out, f"MissingCase: {exc}")
        return EXIT_FAILED
    code = EXIT_OK if all(r.ok for r in results) else EXIT_FAILED
    if cfg.format == "json":
        _emit(out, json.dumps({"schema": SCHEMA, "exit": code, "cases": [r.to_json() for r in results]}, indent=2))
        return code
    _emit(out, f"{'No.':>3}  {'Description':<26} {'verdict':<8} {'oracle':<10} {'t (s)':>7}")
    for r in results:
        oracle = "-" if r.oracle is None else ("ok" if r.oracle.ok else "VIOLATED")
        _emit(out, f"{r.case.id:>3}  {r.case.name:<26} {r.verdict:<8} {oracle:<10} {r.elapsed:7.2f}")
        if r.error:
            _emit(out, f"     {r.error}")
    return code


# ---------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="lrt", description="Resource-bound checking for annotated functional programs.")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--template-depth", type=int, default=2)
        sp.add_argument("--coeff-bound", type=int, default=2)
        sp.add_argument("--ce-bound", type=int, default=16)
        sp.add_argument("--solver-timeout", type=float, default=None, help="seconds; LRT_SOLVER_TIMEOUT overrides")
        sp.add_argument("--format", choices=("text", "json"), default="text")
        sp.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("check", help="check and solve every signed binding")
    c.add_argument("paths", nargs="+")
    c.add_argument("--dump-constraints", metavar="OUT.json")
    c.add_argument("--keep-trivial", action="store_true")
    solver_flags(c)

    e = sub.add_parser("eval", help="run a binding on argument values")
    e.add_argument("path")
    e.add_argument("entry")
    e.add_argument("args", nargs="*")
    e.add_argument("--budget", type=int, default=None, help="initial budget (default: the high-water mark)")
    e.add_argument("--fuel", type=int, default=K.DEFAULT_FUEL)
    e.add_argument("--trace", action="store_true")

    b = sub.add_parser("bench", help="run the benchmark corpus with oracles")
    b.add_argument("directory", nargs="?", default=None)
    b.add_argument("--samples", type=int, default=50)
    solver_flags(b)
    return p


def _config(ns) -> CliConfig:
    timeout = ns.solver_timeout if ns.solver_timeout is not None else 60.0
    env = os.environ.get("LRT_SOLVER_TIMEOUT")
    if env:
        timeout = float(env)
    return CliConfig(ns.command, getattr(ns, "paths", []), ns.template_depth, ns.coeff_bound, ns.ce_bound,
                     timeout, ns.format, getattr(ns, "dump_constraints", None),
                     getattr(ns, "keep_trivial", False), ns.seed)


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    if ns.command == "eval":
        if ns.budget is not None and ns.budget < 0:
            print("error: budget must be nonnegative")
            return EXIT_ILL_FORMED
        return cmd_eval(ns.path, ns.entry, ns.args, ns.fuel, ns.budget, ns.trace)
    try:
        cfg = _config(ns)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}")
        return EXIT_ILL_FORMED
    if ns.command == "check":
        return cmd_check(ns.paths, cfg)
    return cmd_bench(ns.directory, cfg, ns.samples)


if __name__ == "__main__":
    sys.exit(main())
