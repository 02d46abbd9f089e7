"""Tiny arithmetic expression language for terminal conditions g(x) and inhomogeneities h0(t, x).

Grammar (highest binding first)::

    atom    := number | 't' | 'x' | func '(' expr ')' | ('max'|'min') '(' expr ',' expr ')' | '(' expr ')'
    power   := atom ['^' unary]          # right-associative through unary
    unary   := '-' unary | power
    term    := unary (('*' | '/') unary)*
    expr    := term (('+' | '-') term)*
"""

import math
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import EvalDomainError, ExprSyntaxError

VARIABLES = ("t", "x")
UNARY_FUNCS = ("exp", "abs", "sin", "cos", "sqrt")
BINARY_FUNCS = ("max", "min")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of UNARY_FUNCS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * / ^
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    func: str  # one of BINARY_FUNCS
    lhs: "Expr"
    rhs: "Expr"


Expr = Union[Const, Var, Unary, Binary, Call]


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_PAT = re.compile(
    r"\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number, ident, op, end
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_PAT.match(source, pos)
        if m is None or m.lastgroup is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), start))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.open_parens: list[int] = []

    @property
    def token(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def unexpected(self) -> ExprSyntaxError:
        tok = self.token
        if tok.kind == "end":
            if self.open_parens:
                return ExprSyntaxError("unbalanced parentheses", self.open_parens[-1])
            return ExprSyntaxError("unexpected end of input", tok.offset)
        if tok.text == ")" and not self.open_parens:
            return ExprSyntaxError("unbalanced parentheses", tok.offset)
        return ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)

    def expect(self, text: str) -> _Token:
        if self.token.text != text or self.token.kind == "end":
            raise self.unexpected()
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.token.kind != "end":
            raise self.unexpected()
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.token.text in ("+", "-") and self.token.kind == "op":
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.token.text in ("*", "/") and self.token.kind == "op":
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.token.kind == "op" and self.token.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.token.kind == "op" and self.token.text == "^":
            self.advance()
            return Binary("^", base, self.unary())
        return base

    def group(self) -> Expr:
        self.open_parens.append(self.token.offset)
        self.expect("(")
        inner = self.expr()
        self.expect(")")
        self.open_parens.pop()
        return inner

    def atom(self) -> Expr:
        tok = self.token
        if tok.kind == "number":
            self.advance()
            value = float(tok.text)
            if not math.isfinite(value):
                raise ExprSyntaxError("numeric literal out of range", tok.offset)
            return Const(value)
        if tok.kind == "ident":
            name = tok.text
            if name in VARIABLES:
                self.advance()
                return Var(name)
            if name in UNARY_FUNCS:
                self.advance()
                if self.token.text != "(":
                    raise ExprSyntaxError(f"expected '(' after {name}", self.token.offset)
                return Unary(name, self.group())
            if name in BINARY_FUNCS:
                self.advance()
                self.open_parens.append(self.token.offset)
                if self.token.text != "(":
                    raise ExprSyntaxError(f"expected '(' after {name}", self.token.offset)
                self.advance()
                lhs = self.expr()
                self.expect(",")
                rhs = self.expr()
                self.expect(")")
                self.open_parens.pop()
                return Call(name, lhs, rhs)
            raise ExprSyntaxError(f"unknown identifier {name!r}", tok.offset)
        if tok.kind == "op" and tok.text == "(":
            return self.group()
        raise self.unexpected()


def parse(source: str) -> Expr:
    """Parse expression source into an AST; raises ExprSyntaxError with an offset."""
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# Canonical printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}
_ATOM_PREC = 5


def _prec(e: Expr) -> int:
    match e:
        case Binary(op, _, _):
            return _PREC[op]
        case Unary("neg", _):
            return _PREC["neg"]
        case _:
            return _ATOM_PREC


def _wrap(e: Expr, needs_parens: bool) -> str:
    text = to_source(e)
    return f"({text})" if needs_parens else text


def to_source(e: Expr) -> str:
    """Print with the fewest parentheses that re-parse to the same tree."""
    match e:
        case Const(value):
            return repr(float(value))
        case Var(name):
            return name
        case Unary("neg", arg):
            return "-" + _wrap(arg, _prec(arg) < _PREC["neg"])
        case Unary(op, arg):
            return f"{op}({to_source(arg)})"
        case Call(func, lhs, rhs):
            return f"{func}({to_source(lhs)}, {to_source(rhs)})"
        case Binary("^", lhs, rhs):
            return _wrap(lhs, _prec(lhs) <= _PREC["^"]) + "^" + _wrap(rhs, _prec(rhs) < _PREC["neg"])
        case Binary(op, lhs, rhs):
            p = _PREC[op]
            return f"{_wrap(lhs, _prec(lhs) < p)} {op} {_wrap(rhs, _prec(rhs) <= p)}"
    raise TypeError(f"not an expression node: {e!r}")


def variables(e: Expr) -> set[str]:
    match e:
        case Const(_):
            return set()
        case Var(name):
            return {name}
        case Unary(_, arg):
            return variables(arg)
        case Binary(_, lhs, rhs) | Call(_, lhs, rhs):
            return variables(lhs) | variables(rhs)
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _pow(base: float, exponent: float) -> float:
    if base < 0 and not float(exponent).is_integer():
        raise EvalDomainError(f"non-integer power {exponent} of negative base {base}")
    if base == 0 and exponent < 0:
        raise EvalDomainError("zero raised to a negative power")
    return math.pow(base, exponent)


def _eval(e: Expr, t: float, x: float) -> float:
    match e:
        case Const(value):
            return value
        case Var("t"):
            return t
        case Var("x"):
            return x
        case Unary("neg", arg):
            return -_eval(arg, t, x)
        case Unary("exp", arg):
            return math.exp(_eval(arg, t, x))
        case Unary("abs", arg):
            return abs(_eval(arg, t, x))
        case Unary("sin", arg):
            return math.sin(_eval(arg, t, x))
        case Unary("cos", arg):
            return math.cos(_eval(arg, t, x))
        case Unary("sqrt", arg):
            v = _eval(arg, t, x)
            if v < 0:
                raise EvalDomainError(f"sqrt of negative value {v}")
            return math.sqrt(v)
        case Call("max", lhs, rhs):
            return max(_eval(lhs, t, x), _eval(rhs, t, x))
        case Call("min", lhs, rhs):
            return min(_eval(lhs, t, x), _eval(rhs, t, x))
        case Binary(op, lhs, rhs):
            a = _eval(lhs, t, x)
            b = _eval(rhs, t, x)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if b == 0:
                    raise EvalDomainError("division by zero")
                return a / b
            return _pow(a, b)
    raise TypeError(f"not an expression node: {e!r}")


def evaluate(e: Expr, t: float, x: float) -> float:
    """Evaluate at one (t, x). Pure; raises EvalDomainError outside the domain."""
    try:
        value = _eval(e, float(t), float(x))
    except OverflowError as exc:
        raise EvalDomainError(f"overflow while evaluating {to_source(e)}") from exc
    if not math.isfinite(value):
        raise EvalDomainError(f"non-finite result evaluating {to_source(e)} at t={t}, x={x}")
    return value


def _sample(e: Expr, t: float, xs: np.ndarray) -> np.ndarray:
    match e:
        case Const(value):
            return np.full_like(xs, value)
        case Var("t"):
            return np.full_like(xs, t)
        case Var("x"):
            return xs.copy()
        case Unary("neg", arg):
            return -_sample(arg, t, xs)
        case Unary("exp", arg):
            return np.exp(_sample(arg, t, xs))
        case Unary("abs", arg):
            return np.abs(_sample(arg, t, xs))
        case Unary("sin", arg):
            return np.sin(_sample(arg, t, xs))
        case Unary("cos", arg):
            return np.cos(_sample(arg, t, xs))
        case Unary("sqrt", arg):
            v = _sample(arg, t, xs)
            if np.any(v < 0):
                raise EvalDomainError("sqrt of negative value")
            return np.sqrt(v)
        case Call("max", lhs, rhs):
            return np.maximum(_sample(lhs, t, xs), _sample(rhs, t, xs))
        case Call("min", lhs, rhs):
            return np.minimum(_sample(lhs, t, xs), _sample(rhs, t, xs))
        case Binary(op, lhs, rhs):
            a = _sample(lhs, t, xs)
            b = _sample(rhs, t, xs)
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if np.any(b == 0):
                    raise EvalDomainError("division by zero")
                return a / b
            if np.any((a < 0) & (b != np.round(b))):
                raise EvalDomainError("non-integer power of negative base")
            if np.any((a == 0) & (b < 0)):
                raise EvalDomainError("zero raised to a negative power")
            return np.power(a, b)
    raise TypeError(f"not an expression node: {e!r}")


def sample(e: Expr, t: float, xs) -> np.ndarray:
    """Vectorized evaluate over an array of states at a fixed time."""
    xs = np.asarray(xs, dtype=float)
    with np.errstate(all="ignore"):
        values = _sample(e, float(t), xs)
    if not np.all(np.isfinite(values)):
        raise EvalDomainError(f"non-finite values sampling {to_source(e)} at t={t}")
    return values
