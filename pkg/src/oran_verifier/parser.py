"""Text front end for models (``.pm``/``.prism``) and CSL properties (``.csl``).

The model grammar is the CTMC subset of the PRISM language used by the
generated scenarios: constants, modules with bounded variables and
action-labelled guarded commands, and state reward structures. The property
grammar covers ``S=?[..]``, ``R{"name"}=?[S]``, ``P=?[F<=t ..]`` and one level
of ``filter(min|max, .., ..)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

from . import ir
from .ir import Binary, Expr, Ident, Literal, Unary

KEYWORDS = frozenset(
    "ctmc const int double bool module endmodule init true false rewards endrewards".split()
)


@dataclass(frozen=True)
class SourceDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self):
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


class ParseError(Exception):
    """Raised with the diagnostics that stopped a parse."""

    def __init__(self, diagnostics: list[SourceDiagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))


# ---------------------------------------------------------------------------
# lexer


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "ident", "kw", "str", "op", "eof"
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+|\n)
  | (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*)
  | (?P<num>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"\n]*")
  | (?P<op>->|\.\.|<=|>=|!=|=\?|[\[\](){};:,'=<>&|!+\-*/?])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError([SourceDiagnostic(line, col, f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        tok = m.group()
        if kind == "bcomment":
            end = text.find("*/", pos + 2)
            if end < 0:
                raise ParseError([SourceDiagnostic(line, col, "unterminated block comment")])
            chunk = text[pos:end + 2]
            newlines = chunk.count("\n")
            if newlines:
                line += newlines
                line_start = pos + chunk.rfind("\n") + 1
            pos = end + 2
            continue
        if kind == "ws" and tok == "\n":
            line += 1
            line_start = pos + 1
        elif kind == "ident":
            tokens.append(Token("kw" if tok in KEYWORDS else "ident", tok, line, col))
        elif kind not in ("ws", "lcomment"):
            tokens.append(Token(kind, tok, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# shared recursive-descent machinery

_COMPARE = {"=", "!=", "<", "<=", ">", ">="}


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ParseError([SourceDiagnostic(tok.line, tok.col, message)])

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw", "ident")

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")
        return tok

    def ident(self) -> Token:
        tok = self.tok
        if tok.kind != "ident":
            found = tok.text or "end of input"
            self.error(f"expected identifier, found {found!r}")
        self.i += 1
        return tok

    # expressions: | < & < comparison < + - < * / < unary
    def expr(self) -> Expr:
        left = self.conjunction()
        while self.accept("|"):
            left = Binary("|", left, self.conjunction())
        return left

    def conjunction(self) -> Expr:
        left = self.comparison()
        while self.accept("&"):
            left = Binary("&", left, self.comparison())
        return left

    def comparison(self) -> Expr:
        left = self.additive()
        if self.tok.kind == "op" and self.tok.text in _COMPARE:
            op = self.tok.text
            self.i += 1
            left = Binary(op, left, self.additive())
        return left

    def additive(self) -> Expr:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.accept("!"):
            return Unary("!", self.unary())
        if self.accept("-"):
            return Unary("-", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Literal(_number(tok.text))
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self.i += 1
            return Literal(tok.text == "true")
        if tok.kind == "ident":
            self.i += 1
            return Ident(tok.text)
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        found = tok.text or "end of input"
        self.error(f"expected expression, found {found!r}")


def _number(text: str) -> int | float:
    if re.fullmatch(r"\d+", text):
        return int(text)
    return float(text)


# ---------------------------------------------------------------------------
# models


class _ModelParser(_Parser):
    def model(self) -> ir.ModelIR:
        if self.tok.text != "ctmc":
            self.error("expected model type 'ctmc'")
        self.i += 1
        constants: list[ir.Constant] = []
        modules: list[ir.ModuleDecl] = []
        rewards: list[ir.RewardStruct] = []
        while self.tok.kind != "eof":
            if self.at("const"):
                constants.append(self.constant())
            elif self.at("module"):
                modules.append(self.module())
            elif self.at("rewards"):
                rewards.append(self.reward_struct())
            elif self.at("ctmc"):
                self.error("duplicate model type declaration")
            else:
                self.error(f"unexpected {self.tok.text!r} at top level")
        return ir.ModelIR("ctmc", tuple(constants), tuple(modules), tuple(rewards))

    def constant(self) -> ir.Constant:
        start = self.expect("const")
        if self.tok.text in ("int", "double", "bool") and self.tok.kind == "kw":
            type_ = self.tok.text
            self.i += 1
        else:
            self.error("expected constant type (int, double or bool)")
        name = self.ident().text
        if not self.accept("="):
            self.error(f"constant {name!r} needs a value")
        expr = self.expr()
        self.expect(";")
        return ir.Constant(name, type_, expr, line=start.line)

    def module(self) -> ir.ModuleDecl:
        start = self.expect("module")
        name = self.ident().text
        variables, commands = [], []
        while not self.at("endmodule"):
            if self.tok.kind == "eof":
                self.error(f"missing 'endmodule' for module {name!r}")
            if self.at("["):
                commands.append(self.command())
            else:
                variables.append(self.variable())
        self.expect("endmodule")
        self.accept(";")
        return ir.ModuleDecl(name, tuple(variables), tuple(commands), line=start.line)

    def variable(self) -> ir.VarDecl:
        tok = self.ident()
        self.expect(":")
        if self.accept("bool"):
            self.expect("init")
            init = self.expr()
            self.expect(";")
            return ir.VarDecl(tok.text, ir.BOOL, init, line=tok.line)
        self.expect("[")
        low = self.expr()
        self.expect("..")
        high = self.expr()
        self.expect("]")
        self.expect("init")
        init = self.expr()
        self.expect(";")
        return ir.VarDecl(tok.text, ir.INT, init, low, high, line=tok.line)

    def command(self) -> ir.Command:
        start = self.expect("[")
        action = None
        if self.tok.kind == "ident":
            action = self.ident().text
        self.expect("]")
        guard = self.expr()
        self.expect("->")
        rate = self.expr()
        self.expect(":")
        updates = []
        if self.accept("true"):
            pass
        else:
            while True:
                self.expect("(")
                name = self.ident().text
                self.expect("'")
                self.expect("=")
                updates.append((name, self.expr()))
                self.expect(")")
                if not self.accept("&"):
                    break
        self.expect(";")
        return ir.Command(action, guard, rate, tuple(updates), line=start.line)

    def reward_struct(self) -> ir.RewardStruct:
        start = self.expect("rewards")
        tok = self.tok
        if tok.kind != "str":
            self.error("expected reward structure name in double quotes")
        self.i += 1
        items = []
        while not self.at("endrewards"):
            if self.tok.kind == "eof":
                self.error("missing 'endrewards'")
            if self.at("["):
                self.error("transition rewards are not supported")
            line = self.tok.line
            guard = self.expr()
            self.expect(":")
            value = self.expr()
            self.expect(";")
            items.append(ir.RewardItem(guard, value, line=line))
        self.expect("endrewards")
        return ir.RewardStruct(tok.text[1:-1], tuple(items), line=start.line)


def parse_expr(text: str) -> Expr:
    """Parse a single expression."""
    p = _Parser(tokenize(text))
    expr = p.expr()
    if p.tok.kind != "eof":
        p.error(f"unexpected {p.tok.text!r} after expression")
    return expr


def parse_model(text: str, check: bool = True) -> ir.ModelIR:
    """Parse model text; raises :class:`ParseError` on lexical, syntax or
    (when ``check``) well-formedness errors."""
    model = _ModelParser(tokenize(text)).model()
    if check:
        problems = ir.wellformed(model)
        if problems:
            raise ParseError([_locate(d) for d in problems])
    return model


def _locate(d: ir.Diagnostic) -> SourceDiagnostic:
    m = re.search(r"\(line (\d+)\)", d.location)
    line = int(m.group(1)) if m else 1
    return SourceDiagnostic(line, 1, str(d))


# ---------------------------------------------------------------------------
# properties


@dataclass(frozen=True)
class SteadyProb:
    condition: Expr

    def __str__(self):
        return f"S=? [{ir.format_expr(self.condition)}]"


@dataclass(frozen=True)
class LongRunReward:
    name: str

    def __str__(self):
        return f'R{{"{self.name}"}}=? [S]'


@dataclass(frozen=True)
class BoundedReach:
    bound: Union[float, str]  # str = parameter name bound at evaluation time
    target: Expr

    def __str__(self):
        b = self.bound if isinstance(self.bound, str) else ir.format_value(self.bound)
        return f"P=? [F<={b} {ir.format_expr(self.target)}]"


@dataclass(frozen=True)
class Filter:
    mode: str  # "min" | "max"
    inner: Union[SteadyProb, LongRunReward, BoundedReach]
    condition: Expr

    def __str__(self):
        return f"filter({self.mode}, {self.inner}, {ir.format_expr(self.condition)})"


PropertyAST = Union[SteadyProb, LongRunReward, BoundedReach, Filter]


@dataclass(frozen=True)
class NamedProperty:
    name: str | None
    prop: PropertyAST
    line: int


def bind(prop: PropertyAST, params: Mapping[str, float]) -> PropertyAST:
    """Substitute named time bounds from ``params``."""
    if isinstance(prop, Filter):
        return Filter(prop.mode, bind(prop.inner, params), prop.condition)
    if isinstance(prop, BoundedReach) and isinstance(prop.bound, str):
        if prop.bound not in params:
            raise KeyError(f"time bound {prop.bound!r} is not bound")
        t = float(params[prop.bound])
        if t < 0:
            raise ValueError(f"time bound {prop.bound}={t} is negative")
        return BoundedReach(t, prop.target)
    return prop


class _PropertyParser(_Parser):
    def outside(self, what: str, tok: Token | None = None):
        self.error(f"{what} is outside supported subset", tok)

    def named(self) -> NamedProperty:
        line = self.tok.line
        name = None
        if self.tok.kind == "str" and self.peek().text == ":":
            name = self.tok.text[1:-1]
            self.i += 2
        prop = self.prop(top=True)
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r} after property")
        return NamedProperty(name, prop, line)

    def query(self, letter: str, tok: Token):
        if self.accept("=?"):
            return
        if self.tok.kind == "op" and self.tok.text in ("<", "<=", ">", ">=", "="):
            self.outside(f"bounded {letter} operator ({letter}{self.tok.text}...)", tok)
        self.expect("=?")

    def prop(self, top: bool) -> PropertyAST:
        tok = self.tok
        if tok.kind != "ident":
            self.error(f"expected property, found {tok.text or 'end of input'!r}")
        if tok.text == "filter":
            if not top:
                self.outside("nested filter", tok)
            self.i += 1
            self.expect("(")
            mode = self.tok.text
            if mode not in ("min", "max"):
                self.outside(f"filter operator {mode!r}")
            self.i += 1
            self.expect(",")
            inner = self.prop(top=False)
            cond = ir.TRUE
            if self.accept(","):
                cond = self.expr()
            self.expect(")")
            return Filter(mode, inner, cond)
        if tok.text == "S":
            self.i += 1
            self.query("S", tok)
            self.expect("[")
            cond = self.expr()
            self.expect("]")
            return SteadyProb(cond)
        if tok.text == "R":
            self.i += 1
            if not self.accept("{"):
                self.outside("unnamed reward operator")
            name_tok = self.tok
            if name_tok.kind != "str":
                self.error("expected reward structure name in double quotes")
            self.i += 1
            self.expect("}")
            self.query("R", tok)
            self.expect("[")
            if not (self.tok.kind == "ident" and self.tok.text == "S"):
                self.outside(f"reward path operator {self.tok.text!r}")
            self.i += 1
            self.expect("]")
            return LongRunReward(name_tok.text[1:-1])
        if tok.text == "P":
            self.i += 1
            self.query("P", tok)
            self.expect("[")
            f = self.tok
            if not (f.kind == "ident" and f.text == "F"):
                self.outside(f"path formula starting with {f.text!r}")
            self.i += 1
            if not self.accept("<="):
                self.outside("unbounded or interval eventually", self.tok)
            b = self.tok
            if b.kind == "num":
                bound: float | str = float(b.text)
            elif b.kind == "ident":
                bound = b.text
            else:
                self.error("expected time bound")
            self.i += 1
            target = self.expr()
            self.expect("]")
            return BoundedReach(bound, target)
        self.outside(f"operator {tok.text!r}", tok)


def parse_property(text: str, line: int = 1) -> NamedProperty:
    tokens = tokenize(text)
    tokens = [Token(t.kind, t.text, t.line + line - 1, t.col) for t in tokens]
    return _PropertyParser(tokens).named()


def read_properties(text: str) -> list[NamedProperty]:
    """Parse a property file: one property per non-empty line."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("//", 1)[0]
        if body.strip():
            out.append(parse_property(body, lineno))
    return out


def parse_properties(text: str, params: Mapping[str, float] | None = None) -> list[PropertyAST]:
    """Parse properties, binding symbolic time bounds found in ``params``."""
    props = [p.prop for p in read_properties(text)]
    if params:
        props = [_bind_known(p, params) for p in props]
    return props


def _bind_known(prop: PropertyAST, params: Mapping[str, float]) -> PropertyAST:
    try:
        return bind(prop, params)
    except KeyError:
        return prop


_T_DIRECTIVE = re.compile(r"^\s*//\s*t-values\s*:\s*(.*)$", re.MULTILINE)


def read_t_values(text: str) -> list[float] | None:
    """Time bounds recorded by a ``// t-values: 1,2,3`` comment, if any."""
    m = _T_DIRECTIVE.search(text)
    if not m:
        return None
    return [float(x) for x in m.group(1).split(",") if x.strip()]
