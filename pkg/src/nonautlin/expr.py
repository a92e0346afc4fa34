"""Small arithmetic expression language for time-dependent coefficients.

Grammar (whitespace-insensitive)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | "+" unary | primary
    primary := NUMBER | NAME | NAME "(" expr ("," expr)* ")" | "(" expr ")"
    NUMBER  := digits ["." digits] [("e" | "E") ["+" | "-"] digits]
    NAME    := letter (letter | digit | "_")*

Functions: sin, cos, exp, ln, abs, sqrt (one argument), pow, min, max (two).
There is no ``^`` operator and no implicit multiplication.  A minus sign
directly in front of a numeric literal folds into a negative constant, so
``-1`` parses to ``Const(-1.0)`` while ``-x`` parses to ``Neg(Var("x"))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

__all__ = [
    "Const", "Var", "Neg", "BinOp", "Call", "Expression",
    "ExprError", "ParseError", "EvalError", "UnboundVariableError", "DomainError",
    "FUNCTIONS", "parse", "evaluate", "to_source", "free_variables",
    "compile_expr", "compile_many", "check_variables",
]


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expression = Union[Const, Var, Neg, BinOp, Call]

# name -> arity
FUNCTIONS = {
    "sin": 1, "cos": 1, "exp": 1, "ln": 1, "abs": 1, "sqrt": 1,
    "pow": 2, "min": 2, "max": 2,
}


class ExprError(Exception):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, expected=frozenset()):
        self.offset = offset
        self.expected = frozenset(expected)
        detail = f"{message} at byte {offset}"
        if self.expected:
            detail += f" (expected one of: {', '.join(sorted(self.expected))})"
        super().__init__(detail)


class EvalError(ExprError):
    pass


class UnboundVariableError(EvalError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable {name!r}")


class DomainError(EvalError):
    def __init__(self, message: str, node: Expression):
        self.node = node
        super().__init__(f"{message} in {to_source(node)!r}")


# ---------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/(),])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str  # num, name, op, end
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list:
    toks = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        boff = len(source[:pos].encode("utf-8"))
        if m is None:
            ch = source[pos]
            if ch == "^":
                raise ParseError("'^' is not supported, use pow(a, b)", boff)
            raise ParseError(f"unexpected character {ch!r}", boff)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), boff))
        pos = m.end()
    toks.append(_Tok("end", "", len(source.encode("utf-8"))))
    return toks


_OPERAND_START = frozenset({"number", "name", "(", "-", "+"})


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        if self.tok.kind == "op" and self.tok.text == text:
            return self.advance()
        raise ParseError(f"unexpected {self._describe(self.tok)}", self.tok.offset, {text})

    @staticmethod
    def _describe(t: _Tok) -> str:
        return "end of input" if t.kind == "end" else f"token {t.text!r}"

    def parse(self) -> Expression:
        node = self.expr()
        if self.tok.kind != "end":
            raise ParseError(
                f"unexpected {self._describe(self.tok)}", self.tok.offset,
                {"+", "-", "*", "/", "end of input"},
            )
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expression:
        t = self.tok
        if t.kind == "op" and t.text == "-":
            self.advance()
            if self.tok.kind == "num":
                return Const(-float(self.advance().text))
            return Neg(self.unary())
        if t.kind == "op" and t.text == "+":
            self.advance()
            return self.unary()
        return self.primary()

    def primary(self) -> Expression:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(t)
            return Var(t.text)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {self._describe(t)}", t.offset, _OPERAND_START)

    def call(self, name_tok: _Tok) -> Expression:
        name = name_tok.text
        if name not in FUNCTIONS:
            raise ParseError(
                f"unknown function {name!r}", name_tok.offset, set(FUNCTIONS)
            )
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ParseError(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                name_tok.offset,
            )
        return Call(name, tuple(args))


def parse(source: str) -> Expression:
    """Parse ``source`` into an expression tree.

    Raises ParseError carrying the byte offset and the expected-token set.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# evaluation

def _checked_call(node: Call, a: Sequence[float]) -> float:
    name = node.func
    if name == "sin":
        return math.sin(a[0])
    if name == "cos":
        return math.cos(a[0])
    if name == "exp":
        try:
            return math.exp(a[0])
        except OverflowError:
            return math.inf
    if name == "ln":
        if not a[0] > 0.0:
            raise DomainError(f"ln of non-positive value {a[0]!r}", node)
        return math.log(a[0])
    if name == "abs":
        return abs(a[0])
    if name == "sqrt":
        if a[0] < 0.0:
            raise DomainError(f"sqrt of negative value {a[0]!r}", node)
        return math.sqrt(a[0])
    if name == "pow":
        try:
            return math.pow(a[0], a[1])
        except OverflowError:
            neg = a[0] < 0 and float(a[1]).is_integer() and int(a[1]) % 2 == 1
            return -math.inf if neg else math.inf
        except (ValueError, ZeroDivisionError):
            raise DomainError(f"pow undefined for ({a[0]!r}, {a[1]!r})", node) from None
    if name == "min":
        return min(a[0], a[1])
    if name == "max":
        return max(a[0], a[1])
    raise EvalError(f"unknown function {name!r}")


def evaluate(e: Expression, ctx: Mapping[str, float]) -> float:
    """Evaluate ``e`` with variable bindings ``ctx`` (operands left to right)."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(ctx[e.name])
        except KeyError:
            raise UnboundVariableError(e.name) from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, ctx)
    if isinstance(e, BinOp):
        a = evaluate(e.left, ctx)
        b = evaluate(e.right, ctx)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise DomainError("division by zero", e)
        return a / b
    if isinstance(e, Call):
        args = [evaluate(arg, ctx) for arg in e.args]
        return _checked_call(e, args)
    raise TypeError(f"not an expression node: {e!r}")


def free_variables(e: Expression) -> frozenset:
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Neg):
        return free_variables(e.operand)
    if isinstance(e, BinOp):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Call):
        out = frozenset()
        for a in e.args:
            out |= free_variables(a)
        return out
    return frozenset()


_STATE_RE = re.compile(r"x[1-9][0-9]*$")


def check_variables(e: Expression, dim: int, params: Sequence[str] = ()) -> None:
    """Raise ExprError unless every variable is t, x1..x{dim} or a parameter."""
    allowed = {"t", *params, *(f"x{i}" for i in range(1, dim + 1))}
    bad = sorted(free_variables(e) - allowed)
    if bad:
        raise ExprError(f"undeclared variable(s) {bad} in {to_source(e)!r}")


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_const(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise ExprError(f"constant {s} has no source form")
    return s


def to_source(e: Expression) -> str:
    """Render ``e`` as source text that reparses to the same tree."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        inner = to_source(e.operand)
        if isinstance(e.operand, (BinOp, Neg)) or (
            isinstance(e.operand, Const)
        ):
            return f"-({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_source(e.left)
        if isinstance(e.left, BinOp) and _PREC[e.left.op] < p:
            left = f"({left})"
        right = to_source(e.right)
        if isinstance(e.right, BinOp) and _PREC[e.right.op] <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# compilation to a Python closure (fast path for integrators)

def _py(e: Expression) -> str:
    if isinstance(e, Const):
        return f"({e.value!r})"
    if isinstance(e, Var):
        return f"v_{e.name}"
    if isinstance(e, Neg):
        return f"(-{_py(e.operand)})"
    if isinstance(e, BinOp):
        return f"({_py(e.left)} {e.op} {_py(e.right)})"
    if isinstance(e, Call):
        args = ", ".join(_py(a) for a in e.args)
        return f"f_{e.func}({args})"
    raise TypeError(f"not an expression node: {e!r}")


_FAST_FUNCS = {
    "f_sin": math.sin, "f_cos": math.cos, "f_exp": math.exp, "f_ln": math.log,
    "f_abs": abs, "f_sqrt": math.sqrt, "f_pow": math.pow, "f_min": min, "f_max": max,
}


def compile_expr(e: Expression, argnames: Sequence[str],
                 consts: Mapping[str, float] | None = None) -> Callable[..., float]:
    """Compile ``e`` to a positional-argument function.

    Variables listed in ``consts`` are frozen into the closure; the rest must
    appear in ``argnames``.  Results are bit-identical to :func:`evaluate`;
    any arithmetic exception reruns the tree walker so errors carry the
    offending subexpression.
    """
    consts = dict(consts or {})
    missing = free_variables(e) - set(argnames) - set(consts)
    if missing:
        raise UnboundVariableError(sorted(missing)[0])
    ns = dict(_FAST_FUNCS)
    for k, v in consts.items():
        ns[f"v_{k}"] = float(v)
    args = ", ".join(f"v_{a}" for a in argnames)
    fast = eval(f"lambda {args}: {_py(e)}", ns)  # noqa: S307 - source built from our own AST
    names = tuple(argnames)

    def fn(*vals):
        try:
            return fast(*vals)
        except (ArithmeticError, ValueError):
            ctx = dict(consts)
            ctx.update(zip(names, vals))
            return evaluate(e, ctx)

    fn.expression = e
    return fn


def compile_many(exprs: Sequence[Expression], argnames: Sequence[str],
                 consts: Mapping[str, float] | None = None) -> Callable[..., list]:
    """Compile several expressions into one function returning a list."""
    consts = dict(consts or {})
    for e in exprs:
        missing = free_variables(e) - set(argnames) - set(consts)
        if missing:
            raise UnboundVariableError(sorted(missing)[0])
    ns = dict(_FAST_FUNCS)
    for k, v in consts.items():
        ns[f"v_{k}"] = float(v)
    args = ", ".join(f"v_{a}" for a in argnames)
    body = ", ".join(_py(e) for e in exprs)
    fast = eval(f"lambda {args}: [{body}]", ns)  # noqa: S307
    names = tuple(argnames)
    exprs = tuple(exprs)

    def fn(*vals):
        try:
            return fast(*vals)
        except (ArithmeticError, ValueError):
            ctx = dict(consts)
            ctx.update(zip(names, vals))
            return [evaluate(e, ctx) for e in exprs]

    return fn
