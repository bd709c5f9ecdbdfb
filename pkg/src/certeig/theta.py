"""Scalar coefficient expressions over box parameters.

Coefficients are closed-form expressions in the variables ``mu1 .. mup``
built from constants, ``+ - * /``, integer powers (``^``), ``exp`` and
``square``. The grammar is deliberately small so run configurations stay
declarative; non-smooth constructs (``abs``, piecewise, ...) are rejected
at parse time.

Grammar (whitespace insignificant)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' int)?
    atom    := number | 'mu' int | func '(' expr ')' | '(' expr ')'
    func    := 'exp' | 'square'

Parsing is deterministic: identical text yields a structurally identical
tree, and ``parse(to_text(tree))`` reproduces the tree.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import ThetaSyntaxError, UnknownVariableError


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based parameter index


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Add:
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Sub:
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Mul:
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Div:
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Pow:
    base: object
    exponent: int


@dataclass(frozen=True)
class Exp:
    arg: object


@dataclass(frozen=True)
class Square:
    arg: object


_NUMBER = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")
_MU = re.compile(r"mu(\d+)")
_FUNC = re.compile(r"(exp|square)\b")
_INT = re.compile(r"[+-]?\d+")


class _Parser:
    def __init__(self, text, p):
        self.text = text
        self.p = p
        self.pos = 0

    def error(self, message):
        raise ThetaSyntaxError(message, self.pos)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        if self.pos < len(self.text):
            return self.text[self.pos]
        return ""

    def accept(self, chars):
        ch = self.peek()
        if ch and ch in chars:
            self.pos += 1
            return ch
        return None

    def expect(self, ch):
        if not self.accept(ch):
            self.error(f"expected '{ch}'")

    def parse(self):
        node = self.expr()
        self.skip_ws()
        if self.pos != len(self.text):
            self.error(f"unexpected character {self.text[self.pos]!r}")
        return node

    def expr(self):
        node = self.term()
        while True:
            op = self.accept("+-")
            if op is None:
                return node
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)

    def term(self):
        node = self.unary()
        while True:
            op = self.accept("*/")
            if op is None:
                return node
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)

    def unary(self):
        op = self.accept("+-")
        if op == "-":
            return Neg(self.unary())
        if op == "+":
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            self.skip_ws()
            m = _INT.match(self.text, self.pos)
            if not m:
                self.error("exponent must be an integer literal")
            self.pos = m.end()
            return Pow(base, int(m.group()))
        return base

    def atom(self):
        self.skip_ws()
        if self.pos >= len(self.text):
            self.error("unexpected end of expression")
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        m = _FUNC.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            self.expect("(")
            node = self.expr()
            self.expect(")")
            return Exp(node) if m.group(1) == "exp" else Square(node)
        m = _MU.match(self.text, self.pos)
        if m:
            index = int(m.group(1))
            if not 1 <= index <= self.p:
                raise UnknownVariableError(
                    f"variable mu{index} outside 1..{self.p}", self.pos
                )
            self.pos = m.end()
            return Var(index)
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return Const(float(m.group()))
        self.error(f"unexpected character {self.text[self.pos]!r}")


def parse_theta(text, p):
    """Parse a coefficient expression over ``p`` parameters."""
    if not text or not text.strip():
        raise ThetaSyntaxError("empty expression", 0)
    return _Parser(text, p).parse()


def evaluate(node, mu):
    """Evaluate an expression tree at a parameter point (1-D sequence)."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return float(mu[node.index - 1])
    if isinstance(node, Neg):
        return -evaluate(node.arg, mu)
    if isinstance(node, Add):
        return evaluate(node.lhs, mu) + evaluate(node.rhs, mu)
    if isinstance(node, Sub):
        return evaluate(node.lhs, mu) - evaluate(node.rhs, mu)
    if isinstance(node, Mul):
        return evaluate(node.lhs, mu) * evaluate(node.rhs, mu)
    if isinstance(node, Div):
        rhs = evaluate(node.rhs, mu)
        if rhs == 0.0:
            return math.inf
        return evaluate(node.lhs, mu) / rhs
    if isinstance(node, Pow):
        base = evaluate(node.base, mu)
        try:
            return float(base**node.exponent)
        except (OverflowError, ZeroDivisionError):
            return math.inf
    if isinstance(node, Exp):
        try:
            return math.exp(evaluate(node.arg, mu))
        except OverflowError:
            return math.inf
    if isinstance(node, Square):
        v = evaluate(node.arg, mu)
        return v * v
    raise TypeError(f"not an expression node: {node!r}")


# printer precedence levels; higher binds tighter
_LEVEL_ADD = 1
_LEVEL_MUL = 2
_LEVEL_NEG = 3
_LEVEL_POW = 4
_LEVEL_ATOM = 5


def _fmt(node, parent_level):
    if isinstance(node, Const):
        text, level = repr(node.value), _LEVEL_ATOM
        if node.value < 0:  # never produced by the parser; keep reparseable
            level = _LEVEL_NEG
    elif isinstance(node, Var):
        text, level = f"mu{node.index}", _LEVEL_ATOM
    elif isinstance(node, Neg):
        text, level = f"-{_fmt(node.arg, _LEVEL_NEG)}", _LEVEL_NEG
    elif isinstance(node, Add):
        text = f"{_fmt(node.lhs, _LEVEL_ADD)} + {_fmt(node.rhs, _LEVEL_ADD + 1)}"
        level = _LEVEL_ADD
    elif isinstance(node, Sub):
        text = f"{_fmt(node.lhs, _LEVEL_ADD)} - {_fmt(node.rhs, _LEVEL_ADD + 1)}"
        level = _LEVEL_ADD
    elif isinstance(node, Mul):
        text = f"{_fmt(node.lhs, _LEVEL_MUL)}*{_fmt(node.rhs, _LEVEL_MUL + 1)}"
        level = _LEVEL_MUL
    elif isinstance(node, Div):
        text = f"{_fmt(node.lhs, _LEVEL_MUL)}/{_fmt(node.rhs, _LEVEL_MUL + 1)}"
        level = _LEVEL_MUL
    elif isinstance(node, Pow):
        # signed exponents print bare ("x^-2"); the exponent rule re-reads them
        text = f"{_fmt(node.base, _LEVEL_POW + 1)}^{node.exponent}"
        level = _LEVEL_POW
    elif isinstance(node, Exp):
        text, level = f"exp({_fmt(node.arg, 0)})", _LEVEL_ATOM
    elif isinstance(node, Square):
        text, level = f"square({_fmt(node.arg, 0)})", _LEVEL_ATOM
    else:
        raise TypeError(f"not an expression node: {node!r}")
    if level < parent_level:
        return f"({text})"
    return text


def to_text(node):
    """Render an expression tree back to parseable text."""
    return _fmt(node, 0)
