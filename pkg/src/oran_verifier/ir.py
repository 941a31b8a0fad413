"""In-memory form of guarded-command CTMC models.

Expressions are immutable trees of :class:`Literal`, :class:`Ident`,
:class:`Unary` and :class:`Binary` nodes. A model is a tuple of constants,
modules and reward structures; everything is a frozen dataclass so models can
be hashed, compared structurally and shared between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Union

Value = Union[bool, int, float]

BOOL = "bool"
INT = "int"
DOUBLE = "double"

ARITH_OPS = ("+", "-", "*", "/")
COMPARE_OPS = ("=", "!=", "<", "<=", ">", ">=")
LOGIC_OPS = ("&", "|")

# tightest binds highest
PRECEDENCE = {
    "|": 1,
    "&": 2,
    "=": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "+": 4, "-": 4,
    "*": 5, "/": 5,
}
UNARY_PRECEDENCE = 6


class EvalError(Exception):
    """Base class for expression evaluation failures."""


class UnboundIdentifierError(EvalError):
    pass


class TypeMismatchError(EvalError):
    pass


class DivisionByZeroError(EvalError):
    pass


class FoldError(Exception):
    """Raised when constants cannot be folded (cycles, bad rates, ...)."""


def kind_of(value: Value) -> str:
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, int):
        return INT
    if isinstance(value, float):
        return DOUBLE
    raise TypeMismatchError(f"unsupported value {value!r}")


# ---------------------------------------------------------------------------
# expression nodes


@dataclass(frozen=True)
class Literal:
    value: Value
    kind: str = ""

    def __post_init__(self):
        if not self.kind:
            object.__setattr__(self, "kind", kind_of(self.value))

    def __str__(self):
        return format_expr(self)


@dataclass(frozen=True)
class Ident:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    operand: "Expr"

    def __str__(self):
        return format_expr(self)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __str__(self):
        return format_expr(self)


Expr = Union[Literal, Ident, Unary, Binary]

TRUE = Literal(True)
FALSE = Literal(False)


def conj(terms: Iterable[Expr]) -> Expr:
    """Left-nested conjunction of ``terms`` (``true`` when empty)."""
    out = None
    for t in terms:
        out = t if out is None else Binary("&", out, t)
    return TRUE if out is None else out


def identifiers(expr: Expr) -> Iterator[str]:
    if isinstance(expr, Ident):
        yield expr.name
    elif isinstance(expr, Unary):
        yield from identifiers(expr.operand)
    elif isinstance(expr, Binary):
        yield from identifiers(expr.left)
        yield from identifiers(expr.right)


def contains_division(expr: Expr) -> bool:
    if isinstance(expr, Binary):
        return expr.op == "/" or contains_division(expr.left) or contains_division(expr.right)
    if isinstance(expr, Unary):
        return contains_division(expr.operand)
    return False


# ---------------------------------------------------------------------------
# evaluation


def _numeric(v: Value, op: str) -> Value:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeMismatchError(f"operator {op!r} expects a number, got {v!r}")
    return v


def _boolean(v: Value, op: str) -> bool:
    if not isinstance(v, bool):
        raise TypeMismatchError(f"operator {op!r} expects a boolean, got {v!r}")
    return v


def eval_expr(expr: Expr, env: Mapping[str, Value]) -> Value:
    """Evaluate ``expr`` with identifiers looked up in ``env``."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Ident):
        try:
            return env[expr.name]
        except KeyError:
            raise UnboundIdentifierError(f"unbound identifier {expr.name!r}") from None
    if isinstance(expr, Unary):
        v = eval_expr(expr.operand, env)
        if expr.op == "!":
            return not _boolean(v, "!")
        return -_numeric(v, "-")
    op = expr.op
    if op in LOGIC_OPS:
        a = _boolean(eval_expr(expr.left, env), op)
        b = _boolean(eval_expr(expr.right, env), op)
        return (a and b) if op == "&" else (a or b)
    a = eval_expr(expr.left, env)
    b = eval_expr(expr.right, env)
    if op in ("=", "!="):
        if (kind_of(a) == BOOL) != (kind_of(b) == BOOL):
            raise TypeMismatchError(f"cannot compare {a!r} and {b!r}")
        return (a == b) if op == "=" else (a != b)
    a = _numeric(a, op)
    b = _numeric(b, op)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise DivisionByZeroError(f"division by zero in {format_expr(expr)}")
        return a / b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise TypeMismatchError(f"unknown operator {op!r}")


def type_of(expr: Expr, tenv: Mapping[str, str], promote: bool = False) -> str:
    """Static type of ``expr``; ``promote`` allows int/double mixing in comparisons."""
    if isinstance(expr, Literal):
        return expr.kind
    if isinstance(expr, Ident):
        try:
            return tenv[expr.name]
        except KeyError:
            raise UnboundIdentifierError(f"unbound identifier {expr.name!r}") from None
    if isinstance(expr, Unary):
        t = type_of(expr.operand, tenv, promote)
        if expr.op == "!":
            if t != BOOL:
                raise TypeMismatchError(f"'!' applied to {t} in {format_expr(expr)}")
            return BOOL
        if t == BOOL:
            raise TypeMismatchError(f"'-' applied to bool in {format_expr(expr)}")
        return t
    op = expr.op
    a = type_of(expr.left, tenv, promote)
    b = type_of(expr.right, tenv, promote)
    where = format_expr(expr)
    if op in LOGIC_OPS:
        if a != BOOL or b != BOOL:
            raise TypeMismatchError(f"{op!r} expects booleans in {where}")
        return BOOL
    if op in ("=", "!=") and (a == BOOL or b == BOOL):
        if a != b:
            raise TypeMismatchError(f"cannot compare {a} with {b} in {where}")
        return BOOL
    if a == BOOL or b == BOOL:
        raise TypeMismatchError(f"{op!r} expects numbers in {where}")
    if op in COMPARE_OPS:
        if a != b and not promote:
            raise TypeMismatchError(f"comparison of {a} with {b} in {where}")
        return BOOL
    if op == "/":
        return DOUBLE
    return INT if a == b == INT else DOUBLE


# ---------------------------------------------------------------------------
# model structure


@dataclass(frozen=True)
class Constant:
    name: str
    type: str
    expr: Expr
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class VarDecl:
    name: str
    type: str  # BOOL or INT
    init: Expr
    low: Expr | None = None
    high: Expr | None = None
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Command:
    action: str | None
    guard: Expr
    rate: Expr
    updates: tuple[tuple[str, Expr], ...]
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ModuleDecl:
    name: str
    variables: tuple[VarDecl, ...]
    commands: tuple[Command, ...]
    line: int | None = field(default=None, compare=False)

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(c.action for c in self.commands if c.action)


@dataclass(frozen=True)
class RewardItem:
    guard: Expr
    value: Expr
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class RewardStruct:
    name: str
    items: tuple[RewardItem, ...]
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class ModelIR:
    kind: str
    constants: tuple[Constant, ...]
    modules: tuple[ModuleDecl, ...]
    rewards: tuple[RewardStruct, ...] = ()

    @property
    def variables(self) -> tuple[VarDecl, ...]:
        """All variables in global declaration order."""
        return tuple(v for m in self.modules for v in m.variables)

    def constant(self, name: str) -> Constant:
        for c in self.constants:
            if c.name == name:
                return c
        raise KeyError(name)

    def reward(self, name: str) -> RewardStruct:
        for r in self.rewards:
            if r.name == name:
                return r
        raise KeyError(name)

    def module(self, name: str) -> ModuleDecl:
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)

    def type_env(self) -> dict[str, str]:
        tenv = {c.name: c.type for c in self.constants}
        tenv.update((v.name, v.type) for v in self.variables)
        return tenv


# ---------------------------------------------------------------------------
# constant folding


def _coerce(value: Value, type_: str, name: str) -> Value:
    k = kind_of(value)
    if type_ == DOUBLE and k in (INT, DOUBLE):
        return float(value)
    if k != type_:
        raise FoldError(f"constant {name!r} declared {type_} but evaluates to {k}")
    return value


def constant_values(model: ModelIR) -> dict[str, Value]:
    """Resolve every constant to a value, detecting cycles."""
    defs = {c.name: c for c in model.constants}
    values: dict[str, Value] = {}
    visiting: list[str] = []

    def resolve(name: str) -> Value:
        if name in values:
            return values[name]
        if name in visiting:
            cycle = " -> ".join(visiting[visiting.index(name):] + [name])
            raise FoldError(f"cyclic constant definition: {cycle}")
        const = defs[name]
        visiting.append(name)
        env = {}
        for ident in identifiers(const.expr):
            if ident not in defs:
                raise FoldError(f"constant {name!r} refers to unresolvable identifier {ident!r}")
            env[ident] = resolve(ident)
        visiting.pop()
        try:
            values[name] = _coerce(eval_expr(const.expr, env), const.type, name)
        except EvalError as exc:
            raise FoldError(f"constant {name!r}: {exc}") from None
        return values[name]

    for c in model.constants:
        resolve(c.name)
    return values


def simplify(expr: Expr, values: Mapping[str, Value]) -> Expr:
    """Substitute ``values`` and collapse closed subtrees to literals.

    Also drops boolean units (``true & x`` -> ``x``, ``false & x`` -> ``false``)
    so that coverage constants vanish from guards.
    """
    if isinstance(expr, Literal):
        return expr
    if isinstance(expr, Ident):
        if expr.name in values:
            return Literal(values[expr.name])
        return expr
    if isinstance(expr, Unary):
        inner = simplify(expr.operand, values)
        if isinstance(inner, Literal):
            return Literal(eval_expr(Unary(expr.op, inner), {}))
        if expr.op == "!" and isinstance(inner, Unary) and inner.op == "!":
            return inner.operand
        return Unary(expr.op, inner)
    left = simplify(expr.left, values)
    right = simplify(expr.right, values)
    if isinstance(left, Literal) and isinstance(right, Literal):
        return Literal(eval_expr(Binary(expr.op, left, right), {}))
    if expr.op in LOGIC_OPS:
        absorbing = expr.op == "|"  # true absorbs |, false absorbs &
        for lit, other in ((left, right), (right, left)):
            if isinstance(lit, Literal) and lit.kind == BOOL:
                return lit if lit.value == absorbing else other
    return Binary(expr.op, left, right)


def fold_constants(model: ModelIR) -> ModelIR:
    """Replace constant identifiers by literals throughout ``model``.

    Rates must fold to positive reals, bounds to integers and reward values to
    non-negative reals; anything else raises :class:`FoldError`.
    """
    values = constant_values(model)

    def lit(name: str, expr: Expr, what: str) -> Literal:
        out = simplify(expr, values)
        if not isinstance(out, Literal):
            raise FoldError(f"{what} of {name!r} is not constant: {format_expr(out)}")
        return out

    modules = []
    for m in model.modules:
        variables = []
        for v in m.variables:
            init = lit(v.name, v.init, "initial value")
            low = high = None
            if v.type == INT:
                low = lit(v.name, v.low, "lower bound")
                high = lit(v.name, v.high, "upper bound")
                if low.kind != INT or high.kind != INT:
                    raise FoldError(f"bounds of {v.name!r} must be integers")
            variables.append(replace(v, init=init, low=low, high=high))
        commands = []
        for i, c in enumerate(m.commands):
            rate = lit(f"{m.name}[{i}]", c.rate, "rate")
            if rate.kind == BOOL or rate.value <= 0:
                raise FoldError(
                    f"module {m.name!r} command {i + 1}: rate {format_expr(c.rate)} "
                    f"folds to non-positive value {rate.value!r}"
                )
            commands.append(
                replace(
                    c,
                    guard=simplify(c.guard, values),
                    rate=Literal(float(rate.value)),
                    updates=tuple((n, simplify(e, values)) for n, e in c.updates),
                )
            )
        modules.append(replace(m, variables=tuple(variables), commands=tuple(commands)))

    rewards = []
    for r in model.rewards:
        items = []
        for item in r.items:
            value = lit(r.name, item.value, "reward value")
            if value.kind == BOOL or value.value < 0:
                raise FoldError(f"reward {r.name!r}: value {value.value!r} is not a non-negative number")
            items.append(replace(item, guard=simplify(item.guard, values), value=Literal(float(value.value))))
        rewards.append(replace(r, items=tuple(items)))

    constants = tuple(replace(c, expr=Literal(values[c.name])) for c in model.constants)
    return ModelIR(model.kind, constants, tuple(modules), tuple(rewards))


def is_folded(model: ModelIR) -> bool:
    return all(isinstance(c.expr, Literal) for c in model.constants) and all(
        isinstance(cmd.rate, Literal) for m in model.modules for cmd in m.commands
    )


# ---------------------------------------------------------------------------
# well-formedness


@dataclass(frozen=True)
class Diagnostic:
    category: str
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.category}: {self.message}"


def wellformed(model: ModelIR) -> list[Diagnostic]:
    """Collect every violated structural or typing rule of ``model``."""
    diags: list[Diagnostic] = []

    def add(category, location, message):
        diags.append(Diagnostic(category, location, message))

    if model.kind != "ctmc":
        add("kind", "model", f"model kind must be ctmc, not {model.kind!r}")

    seen: dict[str, str] = {}
    for c in model.constants:
        if c.name in seen:
            add("name collision", f"constant {c.name}", f"{c.name!r} already declared as {seen[c.name]}")
        seen[c.name] = "constant"
    owner: dict[str, str] = {}
    for m in model.modules:
        for v in m.variables:
            if v.name in seen:
                add("name collision", f"module {m.name}", f"variable {v.name!r} already declared as {seen[v.name]}")
            else:
                seen[v.name] = f"variable of module {m.name}"
                owner[v.name] = m.name

    values: dict[str, Value] = {}
    try:
        values = constant_values(model)
    except FoldError as exc:
        add("constant", "constants", str(exc))

    tenv = model.type_env()
    state_vars = set(owner)

    def check_type(expr, expected, location, promote=False):
        try:
            t = type_of(expr, tenv, promote)
        except UnboundIdentifierError as exc:
            add("unbound identifier", location, str(exc))
            return None
        except TypeMismatchError as exc:
            add("type", location, str(exc))
            return None
        if expected == "numeric":
            if t == BOOL:
                add("type", location, f"expected a number, got bool in {format_expr(expr)}")
        elif expected == INT and t != INT:
            add("type", location, f"expected int, got {t} in {format_expr(expr)}")
        elif expected == BOOL and t != BOOL:
            add("type", location, f"expected bool, got {t} in {format_expr(expr)}")
        return t

    def try_value(expr):
        try:
            out = simplify(expr, values)
        except EvalError:
            return None
        return out.value if isinstance(out, Literal) else None

    for m in model.modules:
        for v in m.variables:
            loc = f"module {m.name}, variable {v.name}"
            for ident in identifiers(v.init):
                if ident in state_vars:
                    add("init", loc, "initial value must be constant")
            if v.type == INT:
                if v.low is None or v.high is None:
                    add("bounds", loc, "integer variable needs bounds")
                    continue
                check_type(v.low, INT, loc)
                check_type(v.high, INT, loc)
                check_type(v.init, INT, loc)
                lo, hi, init = try_value(v.low), try_value(v.high), try_value(v.init)
                if None not in (lo, hi, init) and not lo <= init <= hi:
                    add("bounds", loc, f"init {init} outside [{lo}..{hi}]")
            else:
                check_type(v.init, BOOL, loc)
        for i, c in enumerate(m.commands, 1):
            loc = f"module {m.name}, command {i}" + (f" [{c.action}]" if c.action else "")
            if c.line is not None:
                loc += f" (line {c.line})"
            check_type(c.guard, BOOL, loc)
            if contains_division(c.guard) and any(n in state_vars for n in identifiers(c.guard)):
                add("division in guard", loc, "division over state variables is not allowed in guards")
            check_type(c.rate, "numeric", loc, promote=True)
            if any(n in state_vars for n in identifiers(c.rate)):
                add("rate", loc, "rate must be constant")
            else:
                r = try_value(c.rate)
                if r is not None and not isinstance(r, bool) and r <= 0:
                    add("rate", loc, f"rate folds to non-positive value {r}")
            targets = [n for n, _ in c.updates]
            for name in sorted({n for n in targets if targets.count(n) > 1}):
                add("duplicate update", loc, f"variable {name!r} updated more than once")
            for name, expr in c.updates:
                if name not in owner:
                    add("unbound identifier", loc, f"update of undeclared variable {name!r}")
                    continue
                if owner[name] != m.name:
                    add("foreign write", loc, f"variable {name!r} belongs to module {owner[name]!r}")
                check_type(expr, tenv[name], loc)

    for r in model.rewards:
        for i, item in enumerate(r.items, 1):
            loc = f"rewards {r.name!r}, item {i}"
            check_type(item.guard, BOOL, loc)
            check_type(item.value, "numeric", loc, promote=True)
            val = try_value(item.value)
            if any(n in state_vars for n in identifiers(item.value)):
                add("reward", loc, "reward value must be constant")
            elif val is not None and not isinstance(val, bool) and val < 0:
                add("reward", loc, f"reward value {val} is negative")
    names = [r.name for r in model.rewards]
    for name in sorted({n for n in names if names.count(n) > 1}):
        add("name collision", f"rewards {name!r}", "reward structure declared twice")
    return diags


# ---------------------------------------------------------------------------
# pretty printing


def format_value(value: Value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if math.isfinite(value):
        return repr(value)
    raise ValueError(f"cannot print non-finite literal {value!r}")


def _prec(expr: Expr) -> int:
    if isinstance(expr, Binary):
        return PRECEDENCE[expr.op]
    if isinstance(expr, Unary):
        return UNARY_PRECEDENCE
    if isinstance(expr, Literal) and not isinstance(expr.value, bool) and expr.value < 0:
        return UNARY_PRECEDENCE
    return UNARY_PRECEDENCE + 1


def format_expr(expr: Expr) -> str:
    """Render with the minimum parentheses that reparse to the same tree."""
    if isinstance(expr, Literal):
        return format_value(expr.value)
    if isinstance(expr, Ident):
        return expr.name
    if isinstance(expr, Unary):
        inner = format_expr(expr.operand)
        if isinstance(expr.operand, Binary):
            inner = f"({inner})"
        return f"{expr.op}{inner}"
    p = PRECEDENCE[expr.op]
    left = format_expr(expr.left)
    right = format_expr(expr.right)
    left_p, right_p = _prec(expr.left), _prec(expr.right)
    # comparisons do not chain; other binary ops associate to the left
    if left_p < p or (p == 3 and left_p == 3):
        left = f"({left})"
    if right_p <= p:
        right = f"({right})"
    sep = "" if p >= 4 and expr.op in ("*", "/") else " "
    return f"{left}{sep}{expr.op}{sep}{right}"


def format_command(c: Command) -> str:
    label = c.action or ""
    if c.updates:
        upd = " & ".join(f"({n}'={format_expr(e)})" for n, e in c.updates)
    else:
        upd = "true"
    return f"[{label}] {format_expr(c.guard)} -> {format_expr(c.rate)} : {upd};"


def format_model(model: ModelIR) -> str:
    """Serialize ``model`` back to the modelling language."""
    out = [model.kind, ""]
    for c in model.constants:
        out.append(f"const {c.type} {c.name} = {format_expr(c.expr)};")
    for m in model.modules:
        out.append("")
        out.append(f"module {m.name}")
        for v in m.variables:
            if v.type == BOOL:
                out.append(f"  {v.name} : bool init {format_expr(v.init)};")
            else:
                out.append(
                    f"  {v.name} : [{format_expr(v.low)}..{format_expr(v.high)}] init {format_expr(v.init)};"
                )
        for c in m.commands:
            out.append("  " + format_command(c))
        out.append("endmodule")
    for r in model.rewards:
        out.append("")
        out.append(f'rewards "{r.name}"')
        for item in r.items:
            out.append(f"  {format_expr(item.guard)} : {format_expr(item.value)};")
        out.append("endrewards")
    return "\n".join(out) + "\n"
