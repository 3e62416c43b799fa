"""Scalar analytic expressions in x, y, z.

A small recursive-descent parser for the closed grammar used by the
configuration files (potentials, sources, boundary data and exact
solutions). Parsed trees evaluate pointwise on floats or element-wise on
numpy arrays; the array path is what the quadrature loops use.

Grammar, lowest to highest precedence::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right associative
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

so ``-2^2 == -4`` and ``2^-1 == 0.5``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "UnknownIdentifierError",
    "EvaluationDomainError",
    "parse",
    "evaluate",
]

VARIABLES = ("x", "y", "z")
CONSTANTS = {"pi": np.pi}
FUNCTIONS = ("exp", "sqrt", "sin", "cos", "log", "abs")


class ExpressionError(ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message, column):
        super().__init__(f"{message} at column {column}")
        self.column = column


class UnknownIdentifierError(ExpressionError):
    def __init__(self, name, column):
        super().__init__(f"unknown identifier '{name}' at column {column}")
        self.name = name
        self.column = column


class EvaluationDomainError(ExpressionError, ArithmeticError):
    """Raised instead of returning NaN/inf from an ill-defined operation."""

    def __init__(self, message, subexpression):
        super().__init__(f"{message} in '{subexpression}'")
        self.subexpression = subexpression


# ---------------------------------------------------------------------------
# AST

@dataclass(frozen=True)
class Num:
    value: float

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg:
    operand: object

    def __str__(self):
        return f"(-{self.operand})"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call:
    func: str
    arg: object

    def __str__(self):
        return f"{self.func}({self.arg})"


# ---------------------------------------------------------------------------
# Tokenizer / parser

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character '{text[pos]}'", pos + 1)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", n + 1))
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, col = self.take()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else f"'{val}'"
            raise ExpressionSyntaxError(f"expected '{value}', found {found}", col)

    def parse(self):
        node = self.expr()
        kind, val, col = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected '{val}'", col)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in VARIABLES:
                return Var(val)
            if val in CONSTANTS:
                return Const(val)
            raise UnknownIdentifierError(val, col)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else f"'{val}'"
        raise ExpressionSyntaxError(f"unexpected {found}", col)


# ---------------------------------------------------------------------------
# Evaluation

def _eval(node, env):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise EvaluationDomainError(
                f"variable '{node.name}' not supplied", node) from None
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Neg):
        return -_eval(node.operand, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        with np.errstate(all="ignore"):
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                if np.any(np.asarray(b) == 0):
                    raise EvaluationDomainError("division by zero", node)
                return a / b
            out = np.power(a, b)
        if np.any(np.isnan(out)) and not (np.any(np.isnan(a)) or np.any(np.isnan(b))):
            raise EvaluationDomainError("undefined power", node)
        if np.any(np.isinf(out)) and np.any(np.asarray(a) == 0):
            raise EvaluationDomainError("division by zero", node)
        return out
    # Call
    a = _eval(node.arg, env)
    f = node.func
    if f == "log":
        if np.any(np.asarray(a) <= 0):
            raise EvaluationDomainError("log of non-positive value", node)
        return np.log(a)
    if f == "sqrt":
        if np.any(np.asarray(a) < 0):
            raise EvaluationDomainError("sqrt of negative value", node)
        return np.sqrt(a)
    with np.errstate(over="ignore"):
        return getattr(np, f)(a)


class Expression:
    """Immutable parsed expression.

    Call with scalars for a float, or with equally shaped arrays for an
    element-wise array result.

    >>> e = Expression("x*y - y")
    >>> e(3.0, 2.0)
    4.0
    """

    __slots__ = ("text", "tree", "variables")

    def __init__(self, text):
        if isinstance(text, Expression):
            text = text.text
        object.__setattr__(self, "text", str(text))
        object.__setattr__(self, "tree", _Parser(self.text).parse())
        object.__setattr__(self, "variables", frozenset(_variables(self.tree)))

    def __setattr__(self, name, value):
        raise AttributeError("Expression is immutable")

    def __call__(self, x, y=0.0, z=0.0):
        env = {"x": x, "y": y, "z": z}
        out = _eval(self.tree, env)
        if np.ndim(x) or np.ndim(y) or np.ndim(z):
            shape = np.broadcast(np.asarray(x), np.asarray(y), np.asarray(z)).shape
            return np.broadcast_to(np.asarray(out, dtype=float), shape)
        return float(out)

    def at(self, points):
        """Evaluate on an array of points with trailing dimension 2 or 3."""
        pts = np.asarray(points, dtype=float)
        dim = pts.shape[-1]
        self._check_dim(dim)
        if dim == 2:
            return self(pts[..., 0], pts[..., 1])
        return self(pts[..., 0], pts[..., 1], pts[..., 2])

    def _check_dim(self, dim):
        missing = {"x", "y", "z"}.difference(VARIABLES[:dim]) & self.variables
        if missing:
            raise EvaluationDomainError(
                f"variable '{sorted(missing)[0]}' needs a {dim + 1}-D point", self.text)

    def pretty(self):
        """Fully parenthesised text that re-parses to an equivalent tree."""
        return str(self.tree)

    def __str__(self):
        return self.text

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)


def _variables(node):
    if isinstance(node, Var):
        yield node.name
    elif isinstance(node, Neg):
        yield from _variables(node.operand)
    elif isinstance(node, BinOp):
        yield from _variables(node.left)
        yield from _variables(node.right)
    elif isinstance(node, Call):
        yield from _variables(node.arg)


def parse(text) -> Expression:
    return Expression(text)


def evaluate(e, point) -> float:
    """Evaluate ``e`` at a single 2- or 3-vector."""
    if isinstance(e, str):
        e = Expression(e)
    point = tuple(float(c) for c in point)
    if len(point) not in (2, 3):
        raise ValueError("point must have 2 or 3 coordinates")
    e._check_dim(len(point))
    return e(*point)
