"""Arithmetic expressions for declaring drift and diffusion functions.

Drift and diffusion entries are given as text like ``"2 + 0.08*x1 - 0.01*x1^2"``
over the variables ``x1 .. xd``.  Supported: ``+ - * / ^``, unary minus and the
functions ``sin, cos, exp, abs, sqrt``.  Precedence (tightest first):
``^``, unary minus, ``* /``, ``+ -``; ``^`` is right associative, the rest are
left associative.

Evaluation is vectorized over numpy arrays of points and either returns finite
values or raises :class:`ExprDomainError` (e.g. sqrt of a negative number,
division by zero, overflow to inf).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarExpr",
    "ExprError",
    "ExprSyntaxError",
    "ExprDomainError",
    "parse_expr",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    """Bad source text; ``position`` is the 0-based offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (position {position})")
        self.position = position


class ExprDomainError(ExprError):
    """Evaluation left the real domain (sqrt of negative, 1/0, overflow)."""


# ---------------------------------------------------------------------------
# Nodes

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    arg: object


_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "sqrt": np.sqrt,
}

# precedence levels used by both the parser and the printer
_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


class ScalarExpr:
    """A parsed scalar-valued expression over d variables.

    Immutable and reentrant; two expressions compare equal iff their trees
    are structurally identical.
    """

    def __init__(self, root, dim: int, names: tuple[str, ...]):
        self.root = root
        self.dim = int(dim)
        self.names = tuple(names)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at an ``(npts, d)`` array; returns ``(npts,)`` float64."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :] if self.dim > 1 else pts[:, None]
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise ExprError(
                f"expected points of dimension {self.dim}, got shape {pts.shape}"
            )
        cols = [np.ascontiguousarray(pts[:, k]) for k in range(self.dim)]
        with np.errstate(all="ignore"):
            out = _eval_node(self.root, cols)
        out = np.broadcast_to(np.asarray(out, dtype=np.float64), (pts.shape[0],))
        bad = ~np.isfinite(out)
        if bad.any():
            i = int(np.argmax(bad))
            raise ExprDomainError(
                f"non-finite value from '{self.pretty()}' at point index {i}"
            )
        return np.array(out, dtype=np.float64)

    def eval_at(self, point) -> float:
        """Evaluate at a single point given as a scalar or length-d sequence."""
        arr = np.atleast_1d(np.asarray(point, dtype=np.float64))
        return float(self.evaluate(arr.reshape(1, self.dim))[0])

    # -- structure ----------------------------------------------------------

    @property
    def is_constant(self) -> bool:
        return not _references_var(self.root)

    def constant_value(self) -> float:
        if not self.is_constant:
            raise ExprError(f"'{self.pretty()}' is not constant")
        return self.eval_at(np.zeros(self.dim))

    def pretty(self) -> str:
        return _print_node(self.root, 0)

    def __repr__(self):
        return f"ScalarExpr({self.pretty()!r}, dim={self.dim})"

    def __eq__(self, other):
        return (
            isinstance(other, ScalarExpr)
            and self.dim == other.dim
            and self.root == other.root
        )

    def __hash__(self):
        return hash((self.dim, repr(self.root)))


def _references_var(node) -> bool:
    if isinstance(node, Var):
        return True
    if isinstance(node, Neg):
        return _references_var(node.arg)
    if isinstance(node, BinOp):
        return _references_var(node.left) or _references_var(node.right)
    if isinstance(node, Call):
        return _references_var(node.arg)
    return False


def _eval_node(node, cols):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return cols[node.index]
    if isinstance(node, Neg):
        return -_eval_node(node.arg, cols)
    if isinstance(node, Call):
        return _FUNCTIONS[node.fn](_eval_node(node.arg, cols))
    left = _eval_node(node.left, cols)
    right = _eval_node(node.right, cols)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left / right
    return np.power(left, right)


def _print_node(node, context: int) -> str:
    if isinstance(node, Const):
        text = repr(node.value)
        return text[:-2] if text.endswith(".0") else text
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        body = f"-{_print_node(node.arg, _PREC_UNARY)}"
        return f"({body})" if context > _PREC_UNARY else body
    if isinstance(node, Call):
        return f"{node.fn}({_print_node(node.arg, 0)})"
    if node.op == "^":
        # right associative; base must be an atom, exponent may be unary/pow
        body = (
            f"{_print_node(node.left, _PREC_ATOM)} ^ "
            f"{_print_node(node.right, _PREC_UNARY)}"
        )
        return f"({body})" if context > _PREC_POW else body
    prec = _PREC_MUL if node.op in "*/" else _PREC_ADD
    body = (
        f"{_print_node(node.left, prec)} {node.op} "
        f"{_print_node(node.right, prec + 1)}"
    )
    return f"({body})" if context > prec else body


# ---------------------------------------------------------------------------
# Parser (recursive descent)

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            at = len(source) - len(stripped)
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", at)
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num")), m.start("num")))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    tokens.append(("end", None, len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens, names):
        self.tokens = tokens
        self.pos = 0
        self.names = {name: i for i, name in enumerate(names)}

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, value, at = self.peek()
        if kind != "op" or value != op:
            raise ExprSyntaxError(f"expected '{op}'", at)
        self.advance()

    def parse(self):
        node = self.parse_sum()
        kind, value, at = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {value!r}", at)
        return node

    def parse_sum(self):
        node = self.parse_term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                node = BinOp(value, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_unary()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                node = BinOp(value, node, self.parse_unary())
            else:
                return node

    def parse_unary(self):
        kind, value, _ = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            return Neg(self.parse_unary())
        if kind == "op" and value == "+":
            self.advance()
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self):
        node = self.parse_atom()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            return BinOp("^", node, self.parse_unary())  # right associative
        return node

    def parse_atom(self):
        kind, value, at = self.advance()
        if kind == "num":
            return Const(value)
        if kind == "name":
            if value in _FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_sum()
                self.expect_op(")")
                return Call(value, arg)
            if value in self.names:
                return Var(self.names[value], value)
            raise ExprSyntaxError(f"unknown identifier {value!r}", at)
        if kind == "op" and value == "(":
            node = self.parse_sum()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(
            "expected a number, variable, function or '('", at
        )


def parse_expr(source: str, dim: int, names: tuple[str, ...] | None = None) -> ScalarExpr:
    """Parse ``source`` into a :class:`ScalarExpr` over ``x1 .. x<dim>``.

    ``names`` overrides the variable names (used e.g. for interaction kernels
    written in the pairwise distance ``r``); its length must equal ``dim``.
    """
    if dim < 1:
        raise ExprError(f"dimension must be >= 1, got {dim}")
    if names is None:
        names = tuple(f"x{k + 1}" for k in range(dim))
    elif len(names) != dim:
        raise ExprError("number of variable names must match dim")
    tokens = _tokenize(source)
    # distinguish "unknown identifier" from "xk with k > dim" for diagnostics
    for kind, value, at in tokens:
        if kind == "name" and value not in names and value not in _FUNCTIONS:
            m = re.fullmatch(r"x(\d+)", value)
            if m and int(m.group(1)) > dim:
                raise ExprSyntaxError(
                    f"variable {value!r} exceeds dimension {dim}", at
                )
    root = _Parser(tokens, names).parse()
    return ScalarExpr(root, dim, names)


def const_expr(value: float, dim: int) -> ScalarExpr:
    """Expression that is identically ``value`` in dimension ``dim``."""
    if not math.isfinite(value):
        raise ExprError("constant must be finite")
    return ScalarExpr(Const(float(value)), dim, tuple(f"x{k+1}" for k in range(dim)))


def product_expr(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr:
    """Tree-level product a*b (used to form covariance entries from sigma)."""
    if a.dim != b.dim:
        raise ExprError("dimension mismatch in product")
    return ScalarExpr(BinOp("*", a.root, b.root), a.dim, a.names)


def sum_exprs(terms: list[ScalarExpr]) -> ScalarExpr:
    """Tree-level sum of one or more expressions of equal dimension."""
    if not terms:
        raise ExprError("empty sum")
    root = terms[0].root
    for t in terms[1:]:
        if t.dim != terms[0].dim:
            raise ExprError("dimension mismatch in sum")
        root = BinOp("+", root, t.root)
    return ScalarExpr(root, terms[0].dim, terms[0].names)
