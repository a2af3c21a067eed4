"""Scalar arithmetic expressions with forward-mode derivatives.

Grammar (loosest to tightest binding)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' intexp)*
    intexp := ['-'] INTEGER | '(' ['-'] INTEGER ')'
    atom   := NUMBER | 'x' INDEX | FUNC '(' expr ')' | '(' expr ')'

Variables are ``x1 .. xn`` (1-based) and FUNC is one of ``sin``, ``cos``,
``exp``, ``sqrt``.  Exponents must be integer literals, so ``-x1^2`` is
``-(x1^2)`` and ``x1^2^3`` is ``(x1^2)^3``.

Evaluation never produces NaN or infinity silently: division by zero, square
roots of negative numbers and overflow raise :class:`ExprDomainError`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "Call",
    "Const",
    "Dual",
    "ExprDomainError",
    "ExprError",
    "ExprSyntaxError",
    "ExprTree",
    "Neg",
    "Pow",
    "BinOp",
    "UnknownIdentifierError",
    "Var",
    "VariableIndexError",
    "eval_with_grad",
    "evaluate",
    "parse",
    "to_source",
]


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    """Malformed expression text; ``position`` is a 0-based character offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownIdentifierError(ExprSyntaxError):
    pass


class VariableIndexError(ExprSyntaxError):
    pass


class ExprDomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of an operation (e.g. ``sqrt(-1)``, ``1/0``)."""


# ---------------------------------------------------------------------------
# Tree nodes


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Neg, BinOp, Pow, Call]

FUNCTIONS = ("sin", "cos", "exp", "sqrt")


@dataclass(frozen=True)
class ExprTree:
    """A parsed expression over ``n_vars`` variables."""

    root: Node
    n_vars: int

    def __call__(self, x) -> float:
        return evaluate(self, x)

    def __str__(self) -> str:
        return to_source(self)

    def with_grad(self, x) -> tuple[float, np.ndarray]:
        return eval_with_grad(self, x)


# ---------------------------------------------------------------------------
# Dual numbers


class Dual:
    """Value plus a vector of partial derivatives, propagated by the chain rule."""

    __slots__ = ("value", "partials")

    def __init__(self, value: float, partials: np.ndarray):
        self.value = value
        self.partials = partials

    @classmethod
    def constant(cls, value: float, n: int) -> "Dual":
        return cls(float(value), np.zeros(n))

    @classmethod
    def variable(cls, value: float, index: int, n: int) -> "Dual":
        partials = np.zeros(n)
        partials[index] = 1.0
        return cls(float(value), partials)

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.partials!r})"

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual(float(other), np.zeros_like(self.partials))

    def __neg__(self) -> "Dual":
        return Dual(-self.value, -self.partials)

    def __add__(self, other) -> "Dual":
        other = self._coerce(other)
        return Dual(self.value + other.value, self.partials + other.partials)

    __radd__ = __add__

    def __sub__(self, other) -> "Dual":
        other = self._coerce(other)
        return Dual(self.value - other.value, self.partials - other.partials)

    def __rsub__(self, other) -> "Dual":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Dual":
        other = self._coerce(other)
        return Dual(
            self.value * other.value,
            self.partials * other.value + other.partials * self.value,
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Dual":
        other = self._coerce(other)
        if other.value == 0.0:
            raise ExprDomainError("division by zero")
        value = _div(self.value, other.value)
        inv = 1.0 / other.value
        return Dual(value, (self.partials - other.partials * value) * inv)

    def __rtruediv__(self, other) -> "Dual":
        return self._coerce(other) / self

    def __pow__(self, k: int) -> "Dual":
        if not isinstance(k, (int, np.integer)):
            raise TypeError("Dual supports integer exponents only")
        if k == 0:
            return Dual(1.0, np.zeros_like(self.partials))
        value = _ipow(self.value, k)
        slope = k * _ipow(self.value, k - 1)
        return Dual(value, self.partials * slope)

    def sin(self) -> "Dual":
        return Dual(math.sin(self.value), self.partials * math.cos(self.value))

    def cos(self) -> "Dual":
        return Dual(math.cos(self.value), self.partials * -math.sin(self.value))

    def exp(self) -> "Dual":
        value = _exp(self.value)
        return Dual(value, self.partials * value)

    def sqrt(self) -> "Dual":
        value = _sqrt(self.value)
        if value == 0.0:
            # derivative of sqrt is unbounded at 0
            raise ExprDomainError("sqrt is not differentiable at 0")
        return Dual(value, self.partials * (0.5 / value))


def _ipow(base: float, k: int) -> float:
    if base == 0.0 and k < 0:
        raise ExprDomainError("division by zero in negative power")
    try:
        return base**k
    except OverflowError:
        raise ExprDomainError(f"overflow in {base!r}^{k}") from None


def _exp(value: float) -> float:
    try:
        return math.exp(value)
    except OverflowError:
        raise ExprDomainError(f"overflow in exp({value!r})") from None


def _sqrt(value: float) -> float:
    if value < 0.0:
        raise ExprDomainError(f"sqrt of negative number {value!r}")
    return math.sqrt(value)


def _div(a: float, b: float) -> float:
    if b == 0.0:
        raise ExprDomainError("division by zero")
    out = a / b
    if math.isinf(out):
        raise ExprDomainError("overflow in division")
    return out


_FLOAT_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": _exp,
    "sqrt": _sqrt,
}

# ---------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
    r")"
)
_VAR_RE = re.compile(r"x(\d+)")


@dataclass(frozen=True)
class _Token:
    kind: str  # number | ident | op | end
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.lastgroup is None:
            bad = pos + (len(source[pos:]) - len(source[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {source[bad]!r}", bad)
        tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), m.start(m.lastgroup)))
        pos = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str, n_vars: int):
        self.tokens = _tokenize(source)
        self.i = 0
        self.n_vars = n_vars

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        if self.tok.text != text or self.tok.kind != "op":
            found = self.tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", self.tok.pos)
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        while self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            node = Pow(node, self.int_exponent())
        return node

    def int_exponent(self) -> int:
        paren = self.tok.kind == "op" and self.tok.text == "("
        if paren:
            self.advance()
        sign = 1
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            sign = -1
        tok = self.tok
        if tok.kind != "number" or not tok.text.isdigit():
            raise ExprSyntaxError("exponent must be an integer literal", tok.pos)
        self.advance()
        if paren:
            self.expect(")")
        return sign * int(tok.text)

    def atom(self) -> Node:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(tok.text, arg)
            m = _VAR_RE.fullmatch(tok.text)
            if m is None:
                raise UnknownIdentifierError(f"unknown identifier {tok.text!r}", tok.pos)
            k = int(m.group(1))
            if not 1 <= k <= self.n_vars:
                raise VariableIndexError(
                    f"variable {tok.text!r} out of range (n_vars={self.n_vars})", tok.pos
                )
            return Var(k - 1)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected {found!r}", tok.pos)


def parse(source: str, n_vars: int) -> ExprTree:
    """Parse ``source`` into an :class:`ExprTree` over ``n_vars`` variables."""
    if n_vars < 0:
        raise ValueError("n_vars must be non-negative")
    return ExprTree(_Parser(source, n_vars).parse(), n_vars)


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    if isinstance(node, Pow):
        return 4
    if isinstance(node, Const) and (node.value < 0 or math.copysign(1, node.value) < 0):
        return 3
    return 5


def _src(node: Node) -> str:
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Call):
        return f"{node.func}({_src(node.arg)})"
    if isinstance(node, Neg):
        inner = _src(node.arg)
        return f"-({inner})" if _prec(node.arg) < 3 else f"-{inner}"
    if isinstance(node, Pow):
        base = _src(node.base)
        if _prec(node.base) < 5:
            base = f"({base})"
        return f"{base}^{node.exponent}"
    p = _PREC[node.op]
    left, right = _src(node.left), _src(node.right)
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def to_source(tree: ExprTree | Node) -> str:
    """Render a tree back to text accepted by :func:`parse`."""
    return _src(tree.root if isinstance(tree, ExprTree) else tree)


# ---------------------------------------------------------------------------
# Evaluation


def _eval_float(node: Node, x) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return float(x[node.index])
    if isinstance(node, BinOp):
        a = _eval_float(node.left, x)
        b = _eval_float(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return _div(a, b)
    if isinstance(node, Neg):
        return -_eval_float(node.arg, x)
    if isinstance(node, Pow):
        return _ipow(_eval_float(node.base, x), node.exponent)
    return _FLOAT_FUNCS[node.func](_eval_float(node.arg, x))


def _eval_dual(node: Node, x: list[Dual], n: int) -> Dual:
    if isinstance(node, Const):
        return Dual.constant(node.value, n)
    if isinstance(node, Var):
        return x[node.index]
    if isinstance(node, BinOp):
        a = _eval_dual(node.left, x, n)
        b = _eval_dual(node.right, x, n)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Neg):
        return -_eval_dual(node.arg, x, n)
    if isinstance(node, Pow):
        return _eval_dual(node.base, x, n) ** node.exponent
    return getattr(_eval_dual(node.arg, x, n), node.func)()


def _check_point(tree: ExprTree, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != tree.n_vars:
        raise ValueError(f"expected {tree.n_vars} coordinates, got {x.shape[0]}")
    return x


def _check_finite(value: float) -> float:
    if not math.isfinite(value):
        raise ExprDomainError(f"non-finite result {value!r}")
    return value


def evaluate(tree: ExprTree, x) -> float:
    """Value of ``tree`` at ``x``."""
    x = _check_point(tree, x)
    return _check_finite(_eval_float(tree.root, x))


def eval_with_grad(tree: ExprTree, x) -> tuple[float, np.ndarray]:
    """Value and exact gradient of ``tree`` at ``x`` in a single dual sweep."""
    x = _check_point(tree, x)
    n = tree.n_vars
    seeds = [Dual.variable(v, i, n) for i, v in enumerate(x)]
    out = _eval_dual(tree.root, seeds, n)
    _check_finite(out.value)
    if not np.all(np.isfinite(out.partials)):
        raise ExprDomainError("non-finite derivative")
    return out.value, out.partials
