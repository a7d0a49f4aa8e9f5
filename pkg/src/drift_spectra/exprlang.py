"""Small expression language for scalar fields on meshes.

Grammar (lowest to highest binding)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Parsing is a Pratt loop over binding powers; the AST is a handful of frozen
dataclasses so trees compare structurally with ``==``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

__all__ = [
    "Expr", "Num", "Var", "Neg", "BinOp", "Call",
    "ExprSyntaxError", "ExprEvalError", "UnboundVariableError", "DomainError",
    "FUNCTIONS", "VARIABLES",
    "parse", "evaluate", "free_vars", "to_string",
]

VARIABLES = frozenset({"x", "y", "z", "u", "v"})


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class ExprEvalError(ValueError):
    pass


class UnboundVariableError(ExprEvalError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable {name!r}")


class DomainError(ExprEvalError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Call]


def _log(a):
    if a <= 0.0:
        raise DomainError(f"log of non-positive value {a!r}")
    return math.log(a)


def _sqrt(a):
    if a < 0.0:
        raise DomainError(f"sqrt of negative value {a!r}")
    return math.sqrt(a)


def _tan(a):
    r = math.tan(a)
    if not math.isfinite(r):
        raise DomainError(f"tan({a!r}) is not finite")
    return r


FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": _tan,
    "exp": math.exp,
    "log": _log,
    "sqrt": _sqrt,
    "abs": abs,
    "tanh": math.tanh,
}


# ---------------------------------------------------------------------------
# lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str   # 'num', 'name', 'op', 'end'
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    # byte offsets, so non-ASCII input reports positions consistently
    byte_pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", byte_pos, text)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, chunk, byte_pos))
        byte_pos += len(chunk.encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("end", "", byte_pos))
    return tokens


# ---------------------------------------------------------------------------
# Pratt parser

_INFIX_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_UNARY_BP = 30


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.tok
        return ExprSyntaxError(message, tok.offset, self.text)

    def expect(self, text: str) -> _Token:
        if self.tok.kind != "op" or self.tok.text != text:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse(self) -> Expr:
        e = self.expression(0)
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return e

    def expression(self, rbp: int) -> Expr:
        left = self.prefix()
        while True:
            t = self.tok
            if t.kind != "op" or t.text not in _INFIX_BP:
                break
            lbp = _INFIX_BP[t.text]
            if lbp <= rbp:
                break
            self.advance()
            if t.text == "^":
                # right operand may itself carry a unary minus: 2^-3
                right = self.expression(_UNARY_BP - 1)
            else:
                right = self.expression(lbp)
            left = BinOp(t.text, left, right)
        return left

    def prefix(self) -> Expr:
        t = self.advance()
        if t.kind == "num":
            value = float(t.text)
            if not math.isfinite(value):
                raise self.error(f"numeric literal {t.text!r} out of range", t)
            return Num(value)
        if t.kind == "name":
            if self.tok.kind == "op" and self.tok.text == "(":
                if t.text not in FUNCTIONS:
                    raise self.error(f"unknown function {t.text!r}", t)
                self.advance()
                arg = self.expression(0)
                self.expect(")")
                return Call(t.text, arg)
            if t.text in FUNCTIONS:
                raise self.error(f"function {t.text!r} needs a parenthesized argument", t)
            return Var(t.text)
        if t.kind == "op" and t.text == "-":
            # binds looser than ^ so that -x^2 == -(x^2)
            return Neg(self.expression(_UNARY_BP))
        if t.kind == "op" and t.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        if t.kind == "end":
            raise self.error("unexpected end of input", t)
        raise self.error(f"unexpected token {t.text!r}", t)


def parse(text: str | bytes) -> Expr:
    """Parse ``text`` into an :data:`Expr` tree.

    Raises :class:`ExprSyntaxError` (carrying ``offset``) on malformed input
    or unknown function names. Unknown variable names parse fine and are only
    rejected when evaluated.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# evaluation


def _power(a: float, b: float) -> float:
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError("non-finite operand to ^")
    if b == int(b) and abs(b) <= 1024:
        n = int(b)
        if a == 0.0 and n < 0:
            raise DomainError("zero raised to a negative power")
        return a ** n
    if a < 0.0:
        raise DomainError(f"negative base {a!r} with non-integer exponent {b!r}")
    if a == 0.0:
        if b < 0.0:
            raise DomainError("zero raised to a negative power")
        return 0.0
    return math.exp(b * math.log(a))


def _binop(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    return _power(a, b)


def evaluate(e: Expr, ctx: Mapping[str, float]) -> float:
    """Evaluate ``e`` with variables bound by ``ctx``.

    Unbound variables raise :class:`UnboundVariableError`; domain violations
    (log of non-positive, sqrt of negative, division by zero, overflow) raise
    :class:`DomainError` instead of producing NaN or inf.
    """
    try:
        r = _eval(e, ctx)
    except OverflowError as exc:
        raise DomainError(str(exc)) from None
    if not math.isfinite(r):
        raise DomainError("result is not finite")
    return r


def _eval(e: Expr, ctx: Mapping[str, float]) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return float(ctx[e.name])
        except KeyError:
            raise UnboundVariableError(e.name) from None
    if isinstance(e, Neg):
        return -_eval(e.operand, ctx)
    if isinstance(e, BinOp):
        return _binop(e.op, _eval(e.left, ctx), _eval(e.right, ctx))
    if isinstance(e, Call):
        return float(FUNCTIONS[e.func](_eval(e.arg, ctx)))
    raise TypeError(f"not an expression node: {e!r}")


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Neg):
        return free_vars(e.operand)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    if isinstance(e, Call):
        return free_vars(e.arg)
    raise TypeError(f"not an expression node: {e!r}")


def to_string(e: Expr) -> str:
    """Fully parenthesized rendering; ``parse(to_string(e)) == e``."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")
