"""Surface syntax: lexer, parser, printer, ANF lowering and datatype elaboration.

The grammar is layout-light. A top-level declaration starts in the first
column; `match` alternatives may be separated by `|` or by starting each
pattern on a new line at a common column.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Any

from . import kernel as K
from . import logic as L
from . import potential as P
from . import typesys as T
from .logic import NU, NU_VAR, TRUE, ZERO


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class SourceSpan:
    file: str
    start: int
    end: int
    line: int
    col: int

    def __str__(self):
        return f"{self.file}:{self.line}:{self.col}"

    def to_json(self):
        return {"file": self.file, "start": self.start, "end": self.end, "line": self.line, "col": self.col}


class SurfaceError(Exception):
    def __init__(self, msg, span: SourceSpan | None = None):
        super().__init__(f"{span}: {msg}" if span else msg)
        self.msg = msg
        self.span = span


class ParseError(SurfaceError):
    def __init__(self, msg, span=None, expected=()):
        super().__init__(msg, span)
        self.expected = tuple(expected)


class DuplicateDeclaration(SurfaceError):
    pass


class UnsupportedFeature(SurfaceError):
    pass


class SortMismatch(SurfaceError):
    pass


class NonScalarContent(SurfaceError):
    pass


class InconsistentDatatype(SurfaceError):
    """Shift or extract do not respect subtyping and sharing of annotations."""


class ScopeError(SurfaceError):
    pass


# ---------------------------------------------------------------------------
# Lexer


KEYWORDS = {
    "data", "where", "measure", "let", "in", "if", "then", "else", "match", "with",
    "tick", "impossible", "fix", "forall", "True", "False", "not", "ite",
}

SYMBOLS = sorted([
    "::", "->", "==>", "=>", "<=", ">=", "==", "!=", "&&", "||", "\\", "λ", ".", ",",
    "(", ")", "{", "}", "<", ">", "|", "=", ":", "^", "*", "+", "-", ";", "∀", "ν", "_",
], key=len, reverse=True)

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>--[^\n]*)|(?P<block>\{-.*?-\})"
    r"|(?P<int>[0-9]+)|(?P<ident>[A-Za-z_][A-Za-z0-9_']*)"
    r"|(?P<sym>" + "|".join(re.escape(s) for s in SYMBOLS) + ")",
    re.S,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident, uident, int, kw, sym, eof
    text: str
    line: int
    col: int
    start: int
    end: int
    bol: bool  # first token on its line


def tokenize(text: str, file: str = "<input>") -> list:
    out, pos, line, line_start, bol = [], 0, 1, 0, True
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            span = SourceSpan(file, pos, pos + 1, line, pos - line_start + 1)
            raise ParseError(f"unexpected character {text[pos]!r}", span)
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line, line_start, bol = line + 1, m.end(), True
        elif kind == "block":
            nls = s.count("\n")
            if nls:
                line += nls
                line_start = pos + s.rfind("\n") + 1
                bol = True
        elif kind not in ("ws", "comment"):
            if kind == "ident":
                if s in KEYWORDS:
                    kind = "kw"
                elif s == "_":
                    kind = "sym"
                else:
                    kind = "uident" if s[0].isupper() else "ident"
            out.append(Token(kind, s, line, m.start() - line_start + 1, m.start(), m.end(), bol))
            bol = False
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1, pos, pos, True))
    return out


# ---------------------------------------------------------------------------
# Surface syntax tree


def _span_field():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EVar:
    name: str
    span: Any = _span_field()


@dataclass(frozen=True)
class ECon:
    name: str
    span: Any = _span_field()


@dataclass(frozen=True)
class ENat:
    value: int
    span: Any = _span_field()


@dataclass(frozen=True)
class EBool:
    value: bool
    span: Any = _span_field()


@dataclass(frozen=True)
class EUnit:
    span: Any = _span_field()


@dataclass(frozen=True)
class EPair:
    left: Any
    right: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class EApp:
    fn: Any
    arg: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class EBinOp:
    op: str
    left: Any
    right: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class ENot:
    arg: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class ELam:
    params: tuple
    body: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class EFix:
    fname: str
    param: str
    body: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class ELet:
    name: str
    bound: Any
    body: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class EIf:
    guard: Any
    then: Any
    orelse: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class PCon:
    con: str
    vars: tuple


@dataclass(frozen=True)
class PPair:
    left: str
    right: str


@dataclass(frozen=True)
class Alt:
    pat: Any
    body: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class EMatch:
    scrut: Any
    alts: tuple
    span: Any = _span_field()


@dataclass(frozen=True)
class ETick:
    cost: int
    body: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class EImpossible:
    span: Any = _span_field()


# surface types


@dataclass(frozen=True)
class TyNat:
    pass


@dataclass(frozen=True)
class TyBool:
    pass


@dataclass(frozen=True)
class TyUnit:
    pass


@dataclass(frozen=True)
class TyVar:
    name: str
    mult: int = 1


@dataclass(frozen=True)
class TyProd:
    left: Any
    right: Any


@dataclass(frozen=True)
class TyData:
    name: str
    args: tuple = ()
    theta: tuple | None = None


@dataclass(frozen=True)
class TyScalar:
    base: Any
    refinement: Any = None
    potential: Any = None


@dataclass(frozen=True)
class TyFun:
    param: str | None
    arg: Any
    res: Any


@dataclass(frozen=True)
class TyForall:
    tvars: tuple
    body: Any


# declarations


@dataclass(frozen=True)
class ConDecl:
    name: str
    fields: tuple  # ((name or None, surface type), ...)
    result: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class DataDecl:
    name: str
    tparams: tuple
    params: tuple  # ((name, sort), ...)
    constructors: tuple
    span: Any = _span_field()


@dataclass(frozen=True)
class MeasureDecl:
    name: str
    dtype: str
    sort: Any
    cases: tuple  # ((con, vars, term), ...)
    span: Any = _span_field()


@dataclass(frozen=True)
class SigDecl:
    name: str
    type: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class BindDecl:
    name: str
    params: tuple
    expr: Any
    span: Any = _span_field()


@dataclass(frozen=True)
class SurfaceProgram:
    decls: tuple = ()

    @property
    def datatypes(self):
        return [d for d in self.decls if isinstance(d, DataDecl)]

    @property
    def measures(self):
        return [d for d in self.decls if isinstance(d, MeasureDecl)]

    @property
    def signatures(self):
        return [d for d in self.decls if isinstance(d, SigDecl)]

    @property
    def bindings(self):
        return [d for d in self.decls if isinstance(d, BindDecl)]


# ---------------------------------------------------------------------------
# Parser


_EXPR_START_KW = {"True", "False", "impossible", "not", "fix", "let", "if", "match", "tick"}
_BINOPS = [("||",), ("&&",), ("<", "<=", ">", ">=", "=="), ("+", "-")]


class Parser:
    def __init__(self, text: str, file: str = "<input>"):
        self.file = file
        self.toks = tokenize(text, file)
        self.i = 0
        self.bounds = [1]
        self.angle = False

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def span(self, t: Token | None = None) -> SourceSpan:
        t = t or self.tok
        return SourceSpan(self.file, t.start, t.end, t.line, t.col)

    def span_from(self, t: Token) -> SourceSpan:
        last = self.toks[max(self.i - 1, 0)]
        return SourceSpan(self.file, t.start, max(last.end, t.start), t.line, t.col)

    def at(self, *texts) -> bool:
        t = self.tok
        return t.kind in ("sym", "kw") and t.text in texts

    def at_boundary(self) -> bool:
        t = self.tok
        return t.kind == "eof" or (t.bol and t.col <= self.bounds[-1])

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text) -> Token:
        if not self.at(text):
            raise ParseError(f"expected {text!r}, found {self.tok.text or 'end of input'!r}", self.span(), (text,))
        return self.advance()

    def expect_kind(self, kind) -> Token:
        if self.tok.kind != kind:
            raise ParseError(f"expected {kind}, found {self.tok.text or 'end of input'!r}", self.span(), (kind,))
        return self.advance()

    def binder(self) -> str:
        if self.at("_"):
            self.advance()
            return "_"
        return self.expect_kind("ident").text

    # program
    def program(self) -> SurfaceProgram:
        decls = []
        while self.tok.kind != "eof":
            if self.at(";"):
                self.advance()
                continue
            decls.append(self.decl())
        return SurfaceProgram(tuple(decls))

    def decl(self):
        t = self.tok
        if not t.bol or t.col != 1:
            raise ParseError("declarations must start in the first column", self.span())
        self.bounds.append(1)
        try:
            if self.at("data"):
                return self.data_decl()
            if self.at("measure"):
                return self.measure_decl()
            name = self.expect_kind("ident")
            if self.at("::"):
                self.advance()
                ty = self.type_()
                return SigDecl(name.text, ty, self.span_from(t))
            params = []
            while self.tok.kind == "ident" or self.at("_"):
                params.append(self.binder())
            self.expect("=")
            e = self.expr()
            return BindDecl(name.text, tuple(params), e, self.span_from(t))
        finally:
            self.bounds.pop()

    def data_decl(self) -> DataDecl:
        t = self.expect("data")
        name = self.expect_kind("uident").text
        tparams = []
        while self.tok.kind == "ident":
            tparams.append(self.advance().text)
        params = []
        if self.at("<"):
            self.advance()
            while True:
                pname = self.expect_kind("ident").text
                self.expect("::")
                params.append((pname, self.sort_()))
                if self.at(","):
                    self.advance()
                    continue
                break
            self.expect(">")
        self.expect("where")
        cons = []
        while True:
            if self.at("|", ";") and not (self.tok.bol and self.tok.col == 1):
                self.advance()
                continue
            if not (self.tok.kind == "uident" and self.peek().text == "::" and self.tok.col > 1):
                break
            ct = self.tok
            cname = self.advance().text
            self.expect("::")
            self.bounds.append(ct.col)
            try:
                ty = self.type_()
            finally:
                self.bounds.pop()
            fields, res = [], ty
            while isinstance(res, TyFun):
                fields.append((res.param, res.arg))
                res = res.res
            cons.append(ConDecl(cname, tuple(fields), res, self.span_from(ct)))
        return DataDecl(name, tuple(tparams), tuple(params), tuple(cons), self.span_from(t))

    def measure_decl(self) -> MeasureDecl:
        t = self.expect("measure")
        name = self.expect_kind("ident").text
        self.expect("::")
        dtype = self.expect_kind("uident").text
        while self.tok.kind == "ident":
            self.advance()
        self.expect("->")
        sort = self.sort_()
        self.expect("where")
        cases = []
        while not self.at_boundary():
            if self.at("|", ";"):
                self.advance()
                continue
            ct = self.tok
            con = self.expect_kind("uident").text
            vs = []
            while self.tok.kind == "ident" or self.at("_"):
                vs.append(self.binder())
            self.expect("->")
            self.bounds.append(ct.col)
            try:
                body = self.term()
            finally:
                self.bounds.pop()
            cases.append((con, tuple(vs), body))
        return MeasureDecl(name, dtype, sort, tuple(cases), self.span_from(t))

    # sorts
    def sort_(self):
        parts = [self.sort_atom()]
        while self.at("->"):
            self.advance()
            parts.append(self.sort_atom())
        if len(parts) == 1:
            return parts[0]
        return L.SArrow(tuple(parts[:-1]), parts[-1])

    def sort_atom(self):
        t = self.tok
        if t.kind == "uident":
            self.advance()
            match t.text:
                case "Nat" | "Int":
                    return L.NAT
                case "Bool":
                    return L.BOOL
                case "Unit":
                    return L.UNIT
            raise ParseError(f"unknown sort {t.text}", self.span(t))
        if t.kind == "ident":
            self.advance()
            return L.STVar(t.text)
        if self.at("("):
            self.advance()
            a = self.sort_()
            if self.at(","):
                self.advance()
                b = self.sort_()
                self.expect(")")
                return L.SProd(a, b)
            self.expect(")")
            return a
        raise ParseError("expected a sort", self.span(), ("sort",))

    # types
    def type_(self):
        if self.at("forall", "∀"):
            self.advance()
            tvs = []
            while self.tok.kind == "ident":
                tvs.append(self.advance().text)
            self.expect(".")
            return TyForall(tuple(tvs), self.type_())
        name = None
        if self.tok.kind == "ident" and self.peek().text == ":" and self.peek().kind == "sym":
            name = self.advance().text
            self.advance()
        arg = self.type_pot()
        if self.at("->"):
            self.advance()
            return TyFun(name, arg, self.type_())
        if name is not None:
            raise ParseError("a named parameter must be followed by '->'", self.span(), ("->",))
        return arg

    def type_pot(self):
        base = self.type_base()
        return self.potential_suffix(base)

    def potential_suffix(self, ty):
        if not self.at("^"):
            return ty
        self.advance()
        pot = self.potential_term()
        match ty:
            case TyScalar(b, r, None):
                return TyScalar(b, r, pot)
            case TyScalar(b, r, p):
                return TyScalar(b, r, L.Add((p, pot)))
            case TyFun() | TyForall():
                raise ParseError("potential on arrow types is written on the scalar result", self.span())
        return TyScalar(ty, None, pot)

    def potential_term(self):
        t = self.tok
        if t.kind == "int":
            self.advance()
            return L.RInt(int(t.text))
        if t.kind == "ident":
            self.advance()
            return L.RVar(t.text)
        if self.at("{"):
            self.advance()
            saved, self.angle = self.angle, False
            try:
                tm = self.term()
            finally:
                self.angle = saved
            self.expect("}")
            return tm
        if self.at("("):
            self.advance()
            saved, self.angle = self.angle, False
            try:
                tm = self.term()
            finally:
                self.angle = saved
            self.expect(")")
            return tm
        raise ParseError("expected a potential annotation", self.span(), ("number", "{"))

    def type_base(self):
        """A scalar type without its potential, or a parenthesized type."""
        t = self.tok
        if self.at("{"):
            self.advance()
            b = self.type_base_core()
            self.expect("|")
            saved, self.angle = self.angle, False
            try:
                psi = self.term()
            finally:
                self.angle = saved
            self.expect("}")
            return TyScalar(b.base if isinstance(b, TyScalar) else b, psi, None)
        if self.at("("):
            self.advance()
            if self.at(")"):
                self.advance()
                return TyScalar(TyUnit())
            saved, self.angle = self.angle, False
            try:
                a = self.type_()
                if self.at(","):
                    self.advance()
                    b = self.type_()
                    self.expect(")")
                    return TyScalar(TyProd(_as_base(a, self), _as_base(b, self)))
            finally:
                self.angle = saved
            self.expect(")")
            return a
        return TyScalar(self.type_base_core())

    def type_base_core(self):
        t = self.tok
        if t.kind == "int" and self.peek().text == "*":
            self.advance()
            self.advance()
            v = self.expect_kind("ident").text
            return TyVar(v, int(t.text))
        if t.kind == "ident":
            self.advance()
            return TyVar(t.text)
        if self.at("("):
            ty = self.type_base()
            return _as_base(ty, self)
        if t.kind == "uident":
            self.advance()
            match t.text:
                case "Nat" | "Int":
                    return TyNat()
                case "Bool":
                    return TyBool()
                case "Unit":
                    return TyUnit()
            args = []
            while not self.at_boundary() and (self.tok.kind in ("ident", "uident") or self.at("(", "{")) \
                    and not (self.tok.kind == "ident" and self.peek().text == ":"):
                if self.tok.kind == "uident" and self.peek().text == "::":
                    break
                args.append(self.type_arg())
            theta = None
            if self.at("<"):
                self.advance()
                saved, self.angle = self.angle, True
                try:
                    comps = [self.term()]
                    while self.at(","):
                        self.advance()
                        comps.append(self.term())
                finally:
                    self.angle = saved
                self.expect(">")
                theta = tuple(comps)
            return TyData(t.text, tuple(args), theta)
        raise ParseError("expected a type", self.span(), ("type",))

    def type_arg(self):
        t = self.tok
        if t.kind == "uident" and t.text not in ("Nat", "Int", "Bool", "Unit"):
            self.advance()
            return self.potential_suffix(TyScalar(TyData(t.text)))
        if t.kind == "uident":
            return self.potential_suffix(TyScalar(self.type_base_core()))
        if t.kind == "ident":
            self.advance()
            return self.potential_suffix(TyScalar(TyVar(t.text)))
        return self.potential_suffix(self.type_base())

    # refinement terms
    def term(self):
        if self.at("\\", "λ"):
            self.advance()
            ps = []
            while self.tok.kind == "ident" or self.at("_"):
                ps.append((self.binder(), None))
            if self.at("->"):
                self.advance()
            else:
                self.expect(".")
            return L.RLam(tuple(ps), self.term())
        return self.term_implies()

    def term_implies(self):
        a = self.term_or()
        if self.at("==>"):
            self.advance()
            return L.Implies(a, self.term_implies())
        return a

    def term_or(self):
        args = [self.term_and()]
        while self.at("||") and not self.at_boundary():
            self.advance()
            args.append(self.term_and())
        return args[0] if len(args) == 1 else L.Or(tuple(args))

    def term_and(self):
        args = [self.term_not()]
        while self.at("&&") and not self.at_boundary():
            self.advance()
            args.append(self.term_not())
        return args[0] if len(args) == 1 else L.And(tuple(args))

    def term_not(self):
        if self.at("not"):
            self.advance()
            return L.Not(self.term_not())
        return self.term_cmp()

    def term_cmp(self):
        a = self.term_add()
        ops = ("<", "<=", ">", ">=", "==", "!=", "=")
        if self.at(*ops) and not self.at_boundary():
            if self.angle and self.at(">", ">="):
                return a
            op = self.advance().text
            b = self.term_add()
            match op:
                case "<":
                    return L.Lt(a, b)
                case "<=":
                    return L.Le(a, b)
                case ">":
                    return L.Lt(b, a)
                case ">=":
                    return L.Le(b, a)
                case "==" | "=":
                    return L.Eq(a, b)
                case "!=":
                    return L.Not(L.Eq(a, b))
        return a

    def term_add(self):
        a = self.term_mul()
        while self.at("+", "-") and not self.at_boundary():
            op = self.advance().text
            b = self.term_mul()
            if op == "+":
                a = L.Add(((a.args if isinstance(a, L.Add) else (a,)) + (b,)))
            else:
                a = L.Sub(a, b)
        return a

    def term_mul(self):
        a = self.term_app()
        while self.at("*") and not self.at_boundary():
            self.advance()
            b = self.term_app()
            if isinstance(a, L.RInt):
                a = L.Mul(a.value, b)
            elif isinstance(b, L.RInt):
                a = L.Mul(b.value, a)
            else:
                raise ParseError("multiplication needs a literal factor", self.span())
        return a

    def term_app(self):
        t = self.tok
        head = self.term_atom()
        if isinstance(head, L.RVar) and head.name != NU and t.kind == "ident":
            if self.at("(") and self.tok.start == t.end:
                self.advance()
                args = self.term_args(")")
                return L.RApp(head, tuple(args))
            args = []
            while not self.at_boundary() and (self.tok.kind in ("ident", "int") or self.at("(", "ν")):
                args.append(self.term_atom())
            if args:
                return L.RApp(head, tuple(args))
        return head

    def term_args(self, close):
        saved, self.angle = self.angle, False
        try:
            args = [self.term()]
            while self.at(","):
                self.advance()
                args.append(self.term())
        finally:
            self.angle = saved
        self.expect(close)
        return args

    def term_atom(self):
        t = self.tok
        if t.kind == "int":
            self.advance()
            return L.RInt(int(t.text))
        if self.at("ν") or (t.kind == "ident" and t.text == "nu"):
            self.advance()
            return NU_VAR
        if self.at("True"):
            self.advance()
            return TRUE
        if self.at("False"):
            self.advance()
            return L.FALSE
        if self.at("ite"):
            self.advance()
            self.expect("(")
            args = self.term_args(")")
            if len(args) != 3:
                raise ParseError("ite takes three arguments", self.span(t))
            return L.Ite(*args)
        if t.kind == "ident" and t.text in ("fst", "snd") and self.peek().text == "(":
            self.advance()
            self.advance()
            (a,) = self.term_args(")")
            return L.Fst(a) if t.text == "fst" else L.Snd(a)
        if t.kind == "ident":
            self.advance()
            return L.RVar(t.text)
        if self.at("("):
            self.advance()
            if self.at(")"):
                self.advance()
                return L.RStar()
            args = self.term_args(")")
            if len(args) == 1:
                return args[0]
            if len(args) == 2:
                return L.RPair(*args)
            raise ParseError("tuples have two components", self.span(t))
        raise ParseError(f"expected a refinement term, found {t.text or 'end of input'!r}", self.span(), ("term",))

    # expressions
    def expr(self):
        t = self.tok
        if self.at("\\", "λ"):
            self.advance()
            ps = []
            while self.tok.kind == "ident" or self.at("_"):
                ps.append(self.binder())
            if not ps:
                raise ParseError("lambda needs a parameter", self.span())
            if self.at("->"):
                self.advance()
            else:
                self.expect(".")
            return ELam(tuple(ps), self.expr(), self.span_from(t))
        if self.at("fix"):
            self.advance()
            f = self.expect_kind("ident").text
            x = self.binder()
            self.expect(".")
            return EFix(f, x, self.expr(), self.span_from(t))
        if self.at("let"):
            self.advance()
            x = self.binder()
            params = []
            while self.tok.kind == "ident" or self.at("_"):
                params.append(self.binder())
            self.expect("=")
            self.bounds.append(0)
            try:
                e1 = self.expr()
            finally:
                self.bounds.pop()
            self.expect("in")
            if params:
                e1 = ELam(tuple(params), e1, e1.span)
            return ELet(x, e1, self.expr(), self.span_from(t))
        if self.at("if"):
            self.advance()
            self.bounds.append(0)
            try:
                g = self.expr()
                self.expect("then")
                a = self.expr()
                self.expect("else")
            finally:
                self.bounds.pop()
            return EIf(g, a, self.expr(), self.span_from(t))
        if self.at("match"):
            return self.match_expr()
        if self.at("tick"):
            self.advance()
            c = int(self.expect_kind("int").text)
            return ETick(c, self.expr(), self.span_from(t))
        return self.binop(0)

    def match_expr(self):
        t = self.expect("match")
        self.bounds.append(0)
        try:
            s = self.expr()
            self.expect("with")
        finally:
            self.bounds.pop()
        alts = []
        col = None
        while True:
            if self.at("|"):
                if alts and self.tok.bol and self.tok.col <= self.bounds[-1]:
                    break
                self.advance()
            elif alts and not (self.tok.bol and self.tok.col == col and self._pattern_start()):
                break
            if col is None:
                col = self.tok.col
            at = self.tok
            pat = self.pattern()
            self.expect("->")
            self.bounds.append(col)
            try:
                body = self.expr()
            finally:
                self.bounds.pop()
            alts.append(Alt(pat, body, self.span_from(at)))
        if not alts:
            raise ParseError("match needs at least one alternative", self.span())
        return EMatch(s, tuple(alts), self.span_from(t))

    def _pattern_start(self) -> bool:
        return self.tok.kind == "uident" or self.at("(")

    def pattern(self):
        if self.at("("):
            self.advance()
            a = self.binder()
            self.expect(",")
            b = self.binder()
            self.expect(")")
            return PPair(a, b)
        con = self.expect_kind("uident").text
        vs = []
        while self.tok.kind == "ident" or self.at("_"):
            vs.append(self.binder())
        return PCon(con, tuple(vs))

    def binop(self, level):
        if level == len(_BINOPS):
            return self.unary()
        t = self.tok
        a = self.binop(level + 1)
        ops = _BINOPS[level]
        while self.at(*ops) and not self.at_boundary():
            op = self.advance().text
            b = self.binop(level + 1)
            a = EBinOp(op, a, b, self.span_from(t))
            if level == 2:
                break
        return a

    def unary(self):
        if self.at("not"):
            t = self.advance()
            return ENot(self.unary(), self.span_from(t))
        return self.application()

    def _arg_start(self) -> bool:
        if self.at_boundary():
            return False
        t = self.tok
        return t.kind in ("ident", "uident", "int") or self.at("(", "True", "False", "impossible", "\\", "λ", "tick")

    def application(self):
        t = self.tok
        head = self.atom()
        while self._arg_start():
            if self.at("\\", "λ", "tick"):
                arg = self.expr()
            else:
                arg = self.atom()
            head = EApp(head, arg, self.span_from(t))
        return head

    def atom(self):
        t = self.tok
        if t.kind == "ident":
            self.advance()
            return EVar(t.text, self.span(t))
        if t.kind == "uident":
            self.advance()
            return ECon(t.text, self.span(t))
        if t.kind == "int":
            self.advance()
            return ENat(int(t.text), self.span(t))
        if self.at("True", "False"):
            self.advance()
            return EBool(t.text == "True", self.span(t))
        if self.at("impossible"):
            self.advance()
            return EImpossible(self.span(t))
        if self.at("("):
            self.advance()
            if self.at(")"):
                self.advance()
                return EUnit(self.span_from(t))
            self.bounds.append(0)
            try:
                a = self.expr()
                if self.at(","):
                    self.advance()
                    b = self.expr()
                    self.expect(")")
                    return EPair(a, b, self.span_from(t))
                self.expect(")")
            finally:
                self.bounds.pop()
            return a
        raise ParseError(f"expected an expression, found {t.text or 'end of input'!r}", self.span(), ("expression",))


def _as_base(ty, parser):
    match ty:
        case TyScalar(b, None, None):
            return b
        case TyScalar():
            raise ParseError("refined or annotated types cannot appear inside a product", parser.span())
    raise ParseError("function types cannot appear inside a product", parser.span())


def parse_program(text: str, file: str = "<input>") -> SurfaceProgram:
    prog = Parser(text, file).program()
    seen = {}
    for d in prog.decls:
        key = (type(d).__name__, d.name)
        if key in seen:
            raise DuplicateDeclaration(f"duplicate declaration of {d.name}", d.span)
        seen[key] = d
    return prog


def parse_type(text: str):
    p = Parser(text)
    ty = p.type_()
    if p.tok.kind != "eof":
        raise ParseError(f"trailing input {p.tok.text!r}", p.span())
    return ty


def parse_term(text: str):
    p = Parser(text)
    tm = p.term()
    if p.tok.kind != "eof":
        raise ParseError(f"trailing input {p.tok.text!r}", p.span())
    return tm


def parse_expr(text: str):
    p = Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        raise ParseError(f"trailing input {p.tok.text!r}", p.span())
    return e


# ---------------------------------------------------------------------------
# Printer


def print_term(t) -> str:
    return _pt(t, 0)


def _pt(t, prec) -> str:
    def wrap(s, mine):
        return f"({s})" if mine < prec else s

    match t:
        case L.RVar(x):
            return "ν" if x == NU else x
        case L.RInt(n):
            return str(n)
        case L.RBool(b):
            return "True" if b else "False"
        case L.RStar():
            return "()"
        case L.RPair(a, b):
            return f"({_pt(a, 0)}, {_pt(b, 0)})"
        case L.Fst(a):
            return f"fst({_pt(a, 0)})"
        case L.Snd(a):
            return f"snd({_pt(a, 0)})"
        case L.Ite(c, a, b):
            return f"ite({_pt(c, 0)}, {_pt(a, 0)}, {_pt(b, 0)})"
        case L.RApp(f, args):
            return f"{_pt(f, 9)}({', '.join(_pt(a, 0) for a in args)})"
        case L.Unknown(n, args):
            return f"{n}({', '.join(_pt(a, 0) for a in args)})"
        case L.RLam(ps, body):
            return wrap("\\" + " ".join(p for p, _ in ps) + ". " + _pt(body, 0), 0)
        case L.Implies(a, b):
            return wrap(f"{_pt(a, 2)} ==> {_pt(b, 1)}", 1)
        case L.Or(args):
            return wrap(" || ".join(_pt(a, 3) for a in args), 2)
        case L.And(args):
            return wrap(" && ".join(_pt(a, 4) for a in args), 3)
        case L.Not(a):
            return wrap(f"not {_pt(a, 4)}", 4)
        case L.Le(a, b):
            return wrap(f"{_pt(a, 6)} <= {_pt(b, 6)}", 5)
        case L.Lt(a, b):
            return wrap(f"{_pt(a, 6)} < {_pt(b, 6)}", 5)
        case L.Eq(a, b):
            return wrap(f"{_pt(a, 6)} == {_pt(b, 6)}", 5)
        case L.Add(args):
            return wrap(" + ".join(_pt(a, 6) for a in args), 6)
        case L.Sub(a, b):
            return wrap(f"{_pt(a, 6)} - {_pt(b, 7)}", 6)
        case L.Mul(k, a):
            return wrap(f"{k} * {_pt(a, 8)}", 7)
        case L.Forall():
            raise UnsupportedFeature("quantifiers have no surface syntax")
    raise UnsupportedFeature(f"cannot print {t!r}")


def _pot_suffix(p) -> str:
    if p is None:
        return ""
    if isinstance(p, L.RInt) or (isinstance(p, L.RVar) and p.name != NU):
        return "^" + print_term(p)
    return "^{" + print_term(p) + "}"


def print_type(t) -> str:
    match t:
        case TyForall(tvs, body):
            return f"forall {' '.join(tvs)}. {print_type(body)}"
        case TyFun(x, a, r):
            lhs = print_type(a)
            if isinstance(a, (TyFun, TyForall)):
                lhs = f"({lhs})"
            return (f"{x}:" if x else "") + f"{lhs} -> {print_type(r)}"
        case TyScalar(b, ref, pot):
            if ref is not None:
                core = "{" + _print_base(b) + " | " + print_term(ref) + "}"
            elif pot is not None and isinstance(b, (TyData, TyProd)):
                core = _print_base(b)
                if isinstance(b, TyData):
                    core = f"({core})"
            else:
                core = _print_base(b)
            return core + _pot_suffix(pot)
    return _print_base(t)


def _print_base(b) -> str:
    match b:
        case TyNat():
            return "Nat"
        case TyBool():
            return "Bool"
        case TyUnit():
            return "Unit"
        case TyVar(a, m):
            return a if m == 1 else f"{m}*{a}"
        case TyProd(l, r):
            return f"({_print_base(l)}, {_print_base(r)})"
        case TyData(n, args, theta):
            parts = [n]
            for a in args:
                s = print_type(a)
                if isinstance(a, TyScalar) and isinstance(a.base, TyData) and (a.base.args or a.base.theta):
                    s = f"({s})"
                elif isinstance(a, TyScalar) and (isinstance(a.base, TyVar) and a.base.mult != 1):
                    s = f"({s})"
                parts.append(s)
            if theta is not None:
                parts.append("<" + ", ".join(print_term(c) if not isinstance(c, L.RLam) else f"({print_term(c)})"
                                             for c in theta) + ">")
            return " ".join(parts)
    raise UnsupportedFeature(f"cannot print type {b!r}")


def print_sort(s) -> str:
    match s:
        case L.SNat():
            return "Nat"
        case L.SBool():
            return "Bool"
        case L.SUnit():
            return "Unit"
        case L.STVar(a):
            return a
        case L.SProd(a, b):
            return f"({print_sort(a)}, {print_sort(b)})"
        case L.SArrow(ps, r):
            return " -> ".join(print_sort(p) if not isinstance(p, L.SArrow) else f"({print_sort(p)})"
                               for p in ps + (r,))
    return str(s)


_GREEDY = (ELam, EFix, ELet, EIf, EMatch, ETick)


def print_expr(e, safe=True) -> str:
    """One-line rendering; `safe` means nothing follows that the construct could absorb."""

    def sub(x, safe_here):
        s = print_expr(x, safe_here)
        return f"({s})" if isinstance(x, _GREEDY) and not safe_here else s

    match e:
        case EVar(x):
            return x
        case ECon(c):
            return c
        case ENat(n):
            return str(n)
        case EBool(b):
            return "True" if b else "False"
        case EUnit():
            return "()"
        case EImpossible():
            return "impossible"
        case EPair(a, b):
            return f"({print_expr(a)}, {print_expr(b)})"
        case EApp(f, a):
            fs = print_expr(f, False) if isinstance(f, (EApp, EVar, ECon)) else f"({print_expr(f)})"
            return f"{fs} {_arg(a)}"
        case ENot(a):
            return f"not {_arg(a)}"
        case EBinOp(op, a, b):
            return f"{_operand(a, op, False)} {op} {_operand(b, op, True)}"
        case ELam(ps, body):
            return "\\" + " ".join(ps) + ". " + print_expr(body, True)
        case EFix(f, x, body):
            return f"fix {f} {x}. {print_expr(body, True)}"
        case ELet(x, e1, e2):
            return f"let {x} = {print_expr(e1, True)} in {print_expr(e2, True)}"
        case EIf(g, a, b):
            return f"if {print_expr(g, True)} then {print_expr(a, True)} else {print_expr(b, True)}"
        case ETick(c, body):
            return f"tick {c} {sub(body, True)}"
        case EMatch(s, alts):
            parts = []
            for i, alt in enumerate(alts):
                last = i == len(alts) - 1
                parts.append(f"| {_print_pat(alt.pat)} -> {sub(alt.body, last)}")
            return f"match {print_expr(s, True)} with " + " ".join(parts)
    raise UnsupportedFeature(f"cannot print {e!r}")


_OP_LEVEL = {"||": 0, "&&": 1, "<": 2, "<=": 2, ">": 2, ">=": 2, "==": 2, "+": 3, "-": 3}


def _operand(x, op, right) -> str:
    s = print_expr(x, False)
    if isinstance(x, _GREEDY):
        return f"({s})"
    if isinstance(x, EBinOp):
        mine, theirs = _OP_LEVEL[op], _OP_LEVEL[x.op]
        if theirs < mine or (theirs == mine and (right or mine == 2)):
            return f"({s})"
    return s


def _arg(a) -> str:
    if isinstance(a, (EVar, ECon, ENat, EBool, EUnit, EPair, EImpossible)):
        return print_expr(a)
    return f"({print_expr(a)})"


def _print_pat(p) -> str:
    match p:
        case PPair(a, b):
            return f"({a}, {b})"
        case PCon(c, vs):
            return " ".join((c,) + vs)
    raise UnsupportedFeature(repr(p))


def print_program(prog: SurfaceProgram) -> str:
    out = []
    for d in prog.decls:
        match d:
            case DataDecl(name, tps, params, cons):
                head = " ".join((name,) + tps)
                if params:
                    head += " <" + ", ".join(f"{p} :: {print_sort(s)}" for p, s in params) + ">"
                lines = [f"data {head} where"]
                for c in cons:
                    ty = c.result
                    for fname, fty in reversed(c.fields):
                        ty = TyFun(fname, fty, ty)
                    lines.append(f"  {c.name} :: {print_type(ty)}")
                out.append("\n".join(lines))
            case MeasureDecl(name, dt, sort, cases):
                lines = [f"measure {name} :: {dt} -> {print_sort(sort)} where"]
                for con, vs, body in cases:
                    lines.append("  | " + " ".join((con,) + vs) + f" -> {print_term(body)}")
                out.append("\n".join(lines))
            case SigDecl(name, ty):
                out.append(f"{name} :: {print_type(ty)}")
            case BindDecl(name, ps, e):
                out.append(" ".join((name,) + ps) + f" = {print_expr(e)}")
    return "\n".join(out) + ("\n" if out else "")


# ---------------------------------------------------------------------------
# Datatype elaboration


@dataclass(frozen=True)
class ConLayout:
    """Field order of a constructor: which position (if any) is the content."""

    datatype: str
    name: str
    fields: tuple  # ("content" | "child", ...)

    @property
    def arity(self) -> int:
        return sum(1 for f in self.fields if f == "child")

    @property
    def has_content(self) -> bool:
        return "content" in self.fields


def constructor_layouts(decls) -> dict:
    out = {}
    for d in decls:
        for c in d.constructors:
            kinds = []
            for _, fty in c.fields:
                kinds.append("child" if _is_self(fty, d.name) else "content")
            if kinds.count("content") > 1:
                raise NonScalarContent(f"constructor {c.name} has more than one non-recursive field; "
                                       "use a pair", c.span)
            out[c.name] = ConLayout(d.name, c.name, tuple(kinds))
    return out


def _is_self(ty, name) -> bool:
    return isinstance(ty, TyScalar) and isinstance(ty.base, TyData) and ty.base.name == name


def _subst_sort(s, mapping):
    match s:
        case L.STVar(a):
            return mapping.get(a, s)
        case L.SProd(a, b):
            return L.SProd(_subst_sort(a, mapping), _subst_sort(b, mapping))
        case L.SArrow(ps, r):
            return L.SArrow(tuple(_subst_sort(p, mapping) for p in ps), _subst_sort(r, mapping))
    return s


def coerce_theta_component(comp, sort, where="annotation"):
    """Fill lambda parameter sorts and lift constants to constant functions."""
    if isinstance(sort, L.SArrow):
        n = len(sort.params)
        match comp:
            case L.RLam(ps, body):
                if len(ps) != n:
                    raise SortMismatch(f"{where}: expected a function of {n} arguments")
                return L.RLam(tuple((p, s) for (p, _), s in zip(ps, sort.params)), _fill_lams(body))
            case L.RVar():
                return comp
        return L.const_fn(tuple((f"x{i + 1}", s) for i, s in enumerate(sort.params)), _fill_lams(comp))
    if isinstance(comp, L.RLam):
        raise SortMismatch(f"{where}: a function is not allowed for a first-order parameter")
    return _fill_lams(comp)


def _fill_lams(t):
    return t


def elaborate_datatype(decl: DataDecl, measure: MeasureDecl | None = None,
                       known: dict | None = None) -> P.InductiveSignature:
    """Build the signature: per constructor, content type, extract and shift."""
    if len(decl.tparams) > 1:
        raise UnsupportedFeature(f"{decl.name}: at most one type parameter is supported", decl.span)
    tparams = decl.tparams
    theta_params = tuple(P.ThetaParam(n, s) for n, s in decl.params)
    pnames = [p.name for p in theta_params]
    identity = tuple(L.RVar(n) for n in pnames)
    cons = []
    for c in decl.constructors:
        res = c.result
        if not (isinstance(res, TyScalar) and isinstance(res.base, TyData) and res.base.name == decl.name):
            raise SortMismatch(f"constructor {c.name} must return {decl.name}", c.span)
        if res.base.theta is not None and tuple(res.base.theta) != identity:
            raise SortMismatch(f"constructor {c.name} must return {decl.name} at its declared parameters", c.span)
        content_var, content_ty, extract, children = "_", T.Scalar(T.UnitB()), ZERO, []
        field_no = 0
        for fname, fty in c.fields:
            field_no += 1
            if _is_self(fty, decl.name):
                children.append(_elab_child(decl, c, fname or f"_c{field_no}", fty, theta_params, content_var))
            else:
                if isinstance(fty, (TyFun, TyForall)):
                    raise NonScalarContent(f"constructor {c.name}: content must be a scalar type", c.span)
                content_var = fname or f"_x{field_no}"
                base = elaborate_type(TyScalar(fty.base, fty.refinement, None), known or {}, set(tparams),
                                      sorts=_param_sorts(theta_params))
                content_ty = base
                if fty.potential is not None:
                    extract = L.substitute(fty.potential, {NU: L.RVar(content_var)})
        cons.append(P.ConstructorSig(c.name, content_var, content_ty, tuple(children), extract))
    sig = P.InductiveSignature(decl.name, tparams, theta_params, tuple(cons),
                               _elab_measure(decl, measure, cons))
    _check_sig_sorts(sig)
    _check_consistency(sig, decl.span)
    return sig


def _check_consistency(sig, span):
    problems = P.index_consistency(sig)
    for kind, con, *_ in problems:
        if kind in ("subtyping", "nonnegative"):
            raise InconsistentDatatype(f"{sig.name}: constructor {con} violates {kind} of annotations", span)
    for kind, con, *rest in problems:
        if kind == "unsupported":
            warnings.warn(f"{sig.name}.{con}: consistency not checked ({rest[0]})", stacklevel=3)
    if any(kind == "sharing" for kind, *_ in problems):
        # usable, but the checker refuses to split values of this type
        warnings.warn(f"{sig.name}: annotations are not additive, so values cannot be shared", stacklevel=3)


def _param_sorts(theta_params):
    return {p.name: p.sort for p in theta_params}


def _elab_child(decl, con, fname, fty, theta_params, content_var):
    b = fty.base
    inc = None
    if decl.tparams:
        if len(b.args) != 1:
            raise SortMismatch(f"{con.name}: child {fname} must apply {decl.name} to its type parameter", con.span)
        arg = b.args[0]
        if not (isinstance(arg, TyScalar) and isinstance(arg.base, TyVar) and arg.base.name == decl.tparams[0]
                and arg.refinement is None):
            raise SortMismatch(f"{con.name}: child {fname} must use the type parameter {decl.tparams[0]}", con.span)
        inc = arg.potential
    elif b.args:
        raise SortMismatch(f"{decl.name} takes no type arguments", con.span)
    if fty.potential is not None:
        raise SortMismatch(f"{con.name}: child {fname} cannot carry top-level potential", con.span)
    if b.theta is None:
        theta = tuple(L.RVar(p.name) for p in theta_params)
    else:
        if len(b.theta) != len(theta_params):
            raise SortMismatch(f"{con.name}: child {fname} needs {len(theta_params)} annotations", con.span)
        theta = tuple(coerce_theta_component(t, p.sort, f"{con.name}.{fname}") for t, p in zip(b.theta, theta_params))
    return P.ChildSig(fname, theta, inc)


def _elab_measure(decl, measure, cons):
    if measure is None:
        return L.star_measure(f"{decl.name}_shape", [(c.name, c.arity) for c in cons])
    cases = []
    by_con = {c: (vs, body) for c, vs, body in measure.cases}
    for c in cons:
        if c.name not in by_con:
            raise SortMismatch(f"measure {measure.name} has no case for {c.name}", measure.span)
        vs, body = by_con[c.name]
        has_content = c.content_var != "_"
        need = c.arity + (1 if has_content else 0)
        if len(vs) != need:
            raise SortMismatch(f"measure case {c.name} binds {len(vs)} variables, expected {need}", measure.span)
        content = vs[0] if has_content else "_"
        kids = tuple(vs[1:] if has_content else vs)
        cases.append((c.name, L.MeasureCase(content, kids, body)))
    extra = set(by_con) - {c.name for c in cons}
    if extra:
        raise SortMismatch(f"measure {measure.name} mentions unknown constructors {sorted(extra)}", measure.span)
    return L.Measure(measure.name, measure.sort, tuple(cases))


def _check_sig_sorts(sig: P.InductiveSignature):
    base_ctx = {p.name: p.sort for p in sig.theta_params}
    elem_sort = L.STVar(sig.tparams[0]) if sig.tparams else L.UNIT
    for c in sig.constructors:
        ctx = dict(base_ctx)
        ctx[c.content_var] = T.base_sort(c.content_type.base)
        try:
            if L.sort_of(ctx, c.extract) != L.NAT:
                raise SortMismatch(f"{c.name}: content annotation must be a number")
            for ch in c.children:
                for t, p in zip(ch.theta, sig.theta_params):
                    s = L.sort_of(ctx, t)
                    if s != p.sort:
                        raise SortMismatch(f"{c.name}.{ch.name}: annotation for {p.name} has sort {s}, "
                                           f"expected {p.sort}")
                if ch.increment is not None:
                    if L.sort_of({**ctx, NU: elem_sort}, ch.increment) != L.NAT:
                        raise SortMismatch(f"{c.name}.{ch.name}: element annotation must be a number")
        except L.SortError as exc:
            raise SortMismatch(f"{sig.name}.{c.name}: {exc}") from exc
    mctx_sort = sig.measure.sort
    for con, mc in sig.measure.cases:
        c = sig.constructor(con)
        ctx = {mc.content: T.base_sort(c.content_type.base)}
        ctx.update({k: mctx_sort for k in mc.children})
        try:
            s = L.sort_of(ctx, mc.body)
        except L.SortError as exc:
            raise SortMismatch(f"measure {sig.measure.name}.{con}: {exc}") from exc
        if s != mctx_sort:
            raise SortMismatch(f"measure {sig.measure.name}.{con} has sort {s}, expected {mctx_sort}")


# ---------------------------------------------------------------------------
# Type elaboration


def elaborate_type(ty, dts: dict, tvars: set, sorts: dict | None = None):
    """Surface type to a resource-annotated type; free type variables are allowed if in `tvars`."""
    match ty:
        case TyForall(tvs, body):
            return T.Poly(tuple(tvs), elaborate_type(body, dts, tvars | set(tvs), sorts))
        case TyFun(x, a, r):
            return T.Fun(x or "_", elaborate_type(a, dts, tvars, sorts), elaborate_type(r, dts, tvars, sorts))
        case TyScalar(b, ref, pot):
            base = _elab_base(b, dts, tvars, sorts)
            return T.Scalar(base, ref if ref is not None else TRUE, pot if pot is not None else ZERO)
    return T.Scalar(_elab_base(ty, dts, tvars, sorts))


def _elab_base(b, dts, tvars, sorts):
    match b:
        case TyNat():
            return T.NatB()
        case TyBool():
            return T.BoolB()
        case TyUnit():
            return T.UnitB()
        case TyVar(a, m):
            if tvars is not None and a not in tvars:
                raise ScopeError(f"type variable {a} is not in scope")
            return T.TVarB(a, m)
        case TyProd(l, r):
            return T.ProdB(_elab_base(l, dts, tvars, sorts), _elab_base(r, dts, tvars, sorts))
        case TyData(name, args, theta):
            if name not in dts:
                raise ScopeError(f"unknown datatype {name}")
            sig = dts[name]
            if len(args) != len(sig.tparams):
                raise SortMismatch(f"{name} expects {len(sig.tparams)} type arguments, got {len(args)}")
            elem = None
            mapping = {}
            if sig.tparams:
                elem = elaborate_type(args[0], dts, tvars, sorts)
                if not isinstance(elem, T.Scalar):
                    raise SortMismatch(f"{name}: elements must have scalar types")
                mapping[sig.tparams[0]] = T.base_sort(elem.base, dts)
            if theta is None:
                th = tuple(_resort(c, mapping) for c in sig.zero_theta())
            else:
                if len(theta) != len(sig.theta_params):
                    raise SortMismatch(f"{name} expects {len(sig.theta_params)} annotations, got {len(theta)}")
                th = tuple(coerce_theta_component(c, _subst_sort(p.sort, mapping), name)
                           for c, p in zip(theta, sig.theta_params))
            return T.DataB(name, elem, th)
    raise SortMismatch(f"not a base type: {b!r}")


def _resort(c, mapping):
    if isinstance(c, L.RLam):
        return L.RLam(tuple((p, _subst_sort(s, mapping)) for p, s in c.params), c.body)
    return c


def type_tvars(ty) -> list:
    """Free type variables in order of first occurrence."""
    out = []

    def go(t):
        match t:
            case TyForall(tvs, body):
                for v in type_tvars(body):
                    if v not in tvs and v not in out:
                        out.append(v)
            case TyFun(_, a, r):
                go(a)
                go(r)
            case TyScalar(b, _, _):
                go(b)
            case TyVar(a, _):
                if a not in out:
                    out.append(a)
            case TyProd(l, r):
                go(l)
                go(r)
            case TyData(_, args, _):
                for a in args:
                    go(a)

    go(ty)
    return out


def elaborate_signature(ty, dts):
    """Generalize a top-level signature over its free type variables."""
    if isinstance(ty, TyForall):
        return elaborate_type(ty, dts, set())
    tvs = type_tvars(ty)
    body = elaborate_type(ty, dts, set(tvs))
    return T.Poly(tuple(tvs), body) if tvs else body


# ---------------------------------------------------------------------------
# ANF lowering


_OP_NAMES = {"<": "lt", ">": "gt", "<=": "le", ">=": "ge", "==": "eq", "+": "add", "-": "sub",
             "&&": "and", "||": "or", "not": "not"}


class Lowering:
    def __init__(self, layouts: dict, globals_: set | None = None):
        self.layouts = layouts
        self.counter = 0
        self.globals = globals_ or set()

    def fresh(self, hint: str) -> str:
        self.counter += 1
        return f"{hint}${self.counter}"

    # tail position
    def tail(self, e) -> Any:
        binds, core = self.expr(e)
        return _wrap(binds, core)

    def expr(self, e):
        """Returns (bindings, core expression) with bindings to wrap around it."""
        match e:
            case ELam() | EFix():
                return [], self.lam(e)
            case ELet(x, e1, e2):
                return [], K.Let(x, self.tail(e1), self.tail(e2))
            case EIf(g, a, b):
                binds, ga = self.atomize(g, "c", simple=True)
                return binds, K.Cond(ga, self.tail(a), self.tail(b))
            case ETick(c, body):
                return [], K.Tick(c, self.tail(body))
            case EImpossible():
                return [], K.Impossible()
            case EMatch(s, alts):
                return self.match(s, alts, e)
            case EApp() | EBinOp() | ENot():
                return self.call(e)
        binds, a = self.atomize_shallow(e)
        return binds, a

    def lam(self, e):
        match e:
            case ELam(ps, body):
                core = self.tail(body)
                for p in reversed(ps):
                    core = K.Lam(self._binder(p), core)
                return core
            case EFix(f, x, body):
                return K.Fix(f, self._binder(x), self.tail(body))
        raise AssertionError(e)

    def _binder(self, x):
        return self.fresh("_") if x == "_" else x

    def match(self, s, alts, e):
        binds, sa = self.atomize(s, _hint(s), simple=True)
        if any(isinstance(a.pat, PPair) for a in alts):
            if len(alts) != 1:
                raise UnsupportedFeature("a pair match has exactly one alternative", e.span)
            p = alts[0].pat
            return binds, K.MatP(sa, self._binder(p.left), self._binder(p.right), self.tail(alts[0].body))
        first = alts[0].pat.con
        if first not in self.layouts:
            raise ScopeError(f"unknown constructor {first}", e.span)
        dt = self.layouts[first].datatype
        all_cons = [c for c, lay in self.layouts.items() if lay.datatype == dt]
        branches = {}
        for alt in alts:
            lay = self.layouts.get(alt.pat.con)
            if lay is None or lay.datatype != dt:
                raise ScopeError(f"constructor {alt.pat.con} does not belong to {dt}", alt.span)
            if alt.pat.con in branches:
                continue
            if len(alt.pat.vars) != len(lay.fields):
                raise ParseError(f"{alt.pat.con} binds {len(lay.fields)} variables", alt.span)
            content, kids = None, []
            for kind, v in zip(lay.fields, alt.pat.vars):
                v = self._binder(v)
                if kind == "content":
                    content = v
                else:
                    kids.append(v)
            content = content or self.fresh("_")
            branches[alt.pat.con] = K.Branch(alt.pat.con, content, tuple(kids), self.tail(alt.body))
        out = []
        for c in all_cons:
            if c in branches:
                out.append(branches[c])
            else:
                lay = self.layouts[c]
                out.append(K.Branch(c, self.fresh("_"), tuple(self.fresh("_") for _ in range(lay.arity)),
                                    K.Impossible()))
        return binds, K.MatD(sa, tuple(out))

    def call(self, e):
        head, args = _spine(e)
        binds = []
        match head:
            case ECon(c):
                return self.construct(c, args, e)
            case "prim", op:
                fn = K.Prim(op)
                hint = _OP_NAMES[op]
            case _:
                b, fn = self.atomize(head, _hint(head), simple=False)
                binds += b
                hint = _hint(head)
        atoms = []
        for a in args:
            b, at = self.atomize(a, _hint(a), simple=False)
            binds += b
            atoms.append(at)
        for a in atoms[:-1]:
            name = self.fresh(hint)
            binds.append((name, K.App(fn, a)))
            fn = K.Var(name)
        return binds, K.App(fn, atoms[-1])

    def construct(self, c, args, e):
        lay = self.layouts.get(c)
        if lay is None:
            raise ScopeError(f"unknown constructor {c}", getattr(e, "span", None))
        if len(args) != len(lay.fields):
            raise UnsupportedFeature(f"constructor {c} must be fully applied ({len(lay.fields)} arguments)",
                                     getattr(e, "span", None))
        binds, content, kids = [], K.Triv(), []
        for kind, a in zip(lay.fields, args):
            b, at = self.atomize(a, _hint(a), simple=True, nested=True)
            binds += b
            if kind == "content":
                content = at
            else:
                kids.append(at)
        return binds, K.Con(c, content, tuple(kids))

    def atomize_shallow(self, e):
        """A surface atom in tail or bound position, nested compounds let-bound."""
        match e:
            case EVar(x):
                return [], K.Var(x)
            case ENat(n):
                return [], K.Nat(n)
            case EBool(b):
                return [], K.BoolLit(b)
            case EUnit():
                return [], K.Triv()
            case ECon(c):
                return self.construct(c, [], e)
            case EPair(a, b):
                b1, x = self.atomize(a, _hint(a), simple=True, nested=True)
                b2, y = self.atomize(b, _hint(b), simple=True, nested=True)
                return b1 + b2, K.PairA(x, y)
        raise UnsupportedFeature(f"unsupported expression {e!r}", getattr(e, "span", None))

    def atomize(self, e, hint, simple, nested=False):
        """Bindings plus an atom standing for e (simple: no lambdas)."""
        match e:
            case EVar() | ENat() | EBool() | EUnit():
                return self.atomize_shallow(e)
            case ELam() | EFix() if not simple:
                return [], self.lam(e)
            case ECon(c) if self.layouts.get(c) is not None and not self.layouts[c].fields:
                return self.construct(c, [], e)
            case ECon() | EPair() if not nested:
                return self.atomize_shallow(e)
            case EApp() if not nested and isinstance(_spine(e)[0], ECon):
                return self.call(e)
        binds, core = self.expr(e)
        name = self.fresh(hint)
        return binds + [(name, core)], K.Var(name)


def _hint(e) -> str:
    match e:
        case EVar(x):
            return x
        case ECon(c):
            return c.lower()
        case EApp():
            head = _spine(e)[0]
            return _hint(head) if not isinstance(head, tuple) else _OP_NAMES[head[1]]
        case EBinOp(op, _, _):
            return _OP_NAMES[op]
        case ETick(_, body):
            return _hint(body)
        case ENot():
            return "not"
        case EPair():
            return "pair"
    return "v"


def _spine(e):
    match e:
        case EApp(f, a):
            head, args = _spine(f)
            return head, args + [a]
        case EBinOp(op, a, b):
            return ("prim", op), [a, b]
        case ENot(a):
            return ("prim", "not"), [a]
    return e, []


def _wrap(binds, core):
    for name, b in reversed(binds):
        core = K.Let(name, b, core)
    return core


def desugar_expr(e, layouts: dict):
    return Lowering(layouts).tail(e)


def desugar_to_anf(prog: SurfaceProgram, layouts: dict | None = None) -> K.CoreProgram:
    layouts = layouts if layouts is not None else constructor_layouts(prog.datatypes)
    low = Lowering(layouts)
    out = []
    for b in prog.bindings:
        body = b.expr
        if b.params:
            body = ELam(b.params, body, b.span)
        core = low.tail(body)
        if b.name in K.free_vars(core):
            match core:
                case K.Lam(x, inner):
                    core = K.Fix(b.name, x, inner)
                case _:
                    raise UnsupportedFeature(f"recursive binding {b.name} must be a function", b.span)
        out.append(K.CoreBinding(b.name, core))
    return K.CoreProgram(tuple(out))


# ---------------------------------------------------------------------------
# Whole-program loading


@dataclass
class Module:
    """A parsed and lowered program with its datatypes and signatures."""

    surface: SurfaceProgram
    core: K.CoreProgram
    datatypes: P.Registry
    signatures: dict
    layouts: dict
    spans: dict = field(default_factory=dict)
    library: tuple = ()

    def binding(self, name):
        return self.core.lookup(name)


def elaborate_datatypes(decls, measures, into: P.Registry | None = None) -> P.Registry:
    reg = P.Registry(into or {})
    by_dt = {}
    for m in measures:
        if m.dtype in by_dt:
            raise DuplicateDeclaration(f"{m.dtype} already has a measure", m.span)
        by_dt[m.dtype] = m
    for d in decls:
        if d.name in reg:
            raise DuplicateDeclaration(f"datatype {d.name} already declared", d.span)
        reg[d.name] = elaborate_datatype(d, by_dt.get(d.name), reg)
    unknown = set(by_dt) - {d.name for d in decls}
    if unknown:
        raise ScopeError(f"measure for undeclared datatype {sorted(unknown)}")
    return reg


def load_program(text: str, file: str = "<input>", prelude: SurfaceProgram | None = None) -> Module:
    """Parse, elaborate and lower a program, optionally on top of a prelude."""
    prog = parse_program(text, file)
    lib_decls = list(prelude.datatypes) if prelude else []
    lib_measures = list(prelude.measures) if prelude else []
    reg = elaborate_datatypes(lib_decls, lib_measures)
    reg = elaborate_datatypes(prog.datatypes, prog.measures, reg)
    layouts = constructor_layouts(lib_decls + list(prog.datatypes))
    sigs, spans = {}, {}
    lib_sigs = list(prelude.signatures) if prelude else []
    lib_binds = list(prelude.bindings) if prelude else []
    names = {b.name for b in prog.bindings}
    for s in lib_sigs + list(prog.signatures):
        if s in lib_sigs and s.name in names:
            continue
        sigs[s.name] = elaborate_signature(s.type, reg)
        spans[s.name] = s.span
    have = {b.name for b in prog.bindings}
    bindings = [b for b in lib_binds if b.name not in have] + list(prog.bindings)
    for b in prog.bindings:
        spans.setdefault(b.name, b.span)
    merged = SurfaceProgram(tuple(bindings))
    core = desugar_to_anf(merged, layouts)
    library = tuple(b.name for b in lib_binds if b.name not in have)
    return Module(prog, core, reg, sigs, layouts, spans, library)
