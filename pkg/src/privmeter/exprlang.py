"""Small arithmetic expression language for recombination equations.

Equations produced by the estimation pipeline (and the per-query combine
expressions attached to decomposed queries) are restricted to this grammar
rather than handed to a general-purpose interpreter:

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := NUMBER | SLOT | '(' expr ')'

NUMBER is a non-negative decimal literal with optional fraction and optional
scientific exponent. SLOT is an identifier (letters, digits, underscore, not
starting with a digit) naming a substitution point for a subquery answer.
Evaluation is plain binary double precision, left-associative, with the usual
precedence. Division by zero is an error: a zero denominator means a malformed
query upstream and must surface, not propagate.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

__all__ = [
    "Expr",
    "Lit",
    "Slot",
    "BinOp",
    "ExprError",
    "ParseError",
    "EvalError",
    "parse",
    "evaluate",
    "render",
    "slots_of",
]


class ExprError(Exception):
    """Base class for expression language failures."""


class ParseError(ExprError):
    """Malformed expression text. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EvalError(ExprError):
    """Evaluation failure: unbound slot or division by zero."""


@dataclass(frozen=True)
class Lit:
    """Non-negative finite numeric literal."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"literal must be finite and non-negative, got {self.value!r}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Slot:
    """Named substitution point, e.g. ``s1`` in a combine expression."""

    name: str

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", self.name):
            raise ValueError(f"invalid slot name {self.name!r}")


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in ("+", "-", "*", "/"):
            raise ValueError(f"unknown operator {self.op!r}")


Expr = Union[Lit, Slot, BinOp]

_NUMBER = re.compile(r"\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> Expr:
        node = self.expr()
        self._skip_ws()
        if self.pos != len(self.text):
            raise ParseError(f"trailing input {self.text[self.pos:]!r}", self.pos)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self._peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self._peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        ch = self._peek()
        if ch == "(":
            self.pos += 1
            node = self.expr()
            if self._peek() != ")":
                raise ParseError("unbalanced parenthesis", self.pos)
            self.pos += 1
            return node
        if ch.isdigit():
            m = _NUMBER.match(self.text, self.pos)
            self.pos = m.end()
            return Lit(float(m.group()))
        m = _IDENT.match(self.text, self.pos) if ch else None
        if m:
            self.pos = m.end()
            return Slot(m.group())
        raise ParseError("expected number, slot or '('", self.pos)


def parse(text: str) -> Expr:
    """Parse expression text into an AST; raise ParseError with byte offset."""
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    return _Parser(text).parse()


def evaluate(expr: Expr, bindings: Mapping[str, float] | None = None) -> float:
    """Evaluate an expression tree in double precision.

    Every slot appearing in the tree must be bound. Referentially
    transparent: same tree and bindings always give the same bits.
    """
    b = bindings or {}
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Slot):
        if expr.name not in b:
            raise EvalError(f"unbound slot {expr.name!r}")
        return float(b[expr.name])
    left = evaluate(expr.left, b)
    right = evaluate(expr.right, b)
    if expr.op == "+":
        return left + right
    if expr.op == "-":
        return left - right
    if expr.op == "*":
        return left * right
    if right == 0.0:
        raise EvalError("division by zero")
    return left / right


def render(expr: Expr) -> str:
    """Render to the canonical fully-parenthesized form.

    ``parse(render(e))`` evaluates bit-identically to ``e``: literals are
    printed with ``repr``, whose shortest-round-trip guarantee preserves the
    exact double.
    """
    if isinstance(expr, Lit):
        v = expr.value
        return str(int(v)) if v.is_integer() and abs(v) < 1e16 else repr(v)
    if isinstance(expr, Slot):
        return expr.name
    return f"({render(expr.left)} {expr.op} {render(expr.right)})"


def slots_of(expr: Expr) -> list[str]:
    """All slot names in the tree, in left-to-right order, with repeats."""
    if isinstance(expr, Lit):
        return []
    if isinstance(expr, Slot):
        return [expr.name]
    return slots_of(expr.left) + slots_of(expr.right)
