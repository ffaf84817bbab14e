"""Basis-function libraries: parsing, evaluation and symbolic Jacobians.

A library is an ordered list of scalar expressions over ``x1..xn``. The
order is significant: it fixes the row order of ``Z0`` and the column order
of every gain and closed-loop matrix.

Grammar::

    library := expr ((';' | newline) expr)*
    expr    := term (('+' | '-') term)*
    term    := unary ('*' unary)*
    unary   := '-' unary | power
    power   := atom (('^' | '**') unary_int)?
    atom    := number | 'x' index | name '(' expr ')' | '(' expr ')'

Exponents must be non-negative integer literals.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import EvaluationError, LibraryError

FUNCTIONS = ("sin", "cos", "tanh", "exp")


class Expr:
    """Node of a basis expression tree."""

    __slots__ = ()

    def eval(self, x: np.ndarray):
        raise NotImplementedError

    def diff(self, i: int) -> "Expr":
        raise NotImplementedError

    def max_index(self) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def eval(self, x):
        return np.full(x.shape[1:], self.value) if x.ndim > 1 else self.value

    def diff(self, i):
        return ZERO

    def max_index(self):
        return 0

    def __str__(self):
        v = self.value
        return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(v)


ZERO = Const(0.0)
ONE = Const(1.0)


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based

    def eval(self, x):
        return x[self.index - 1]

    def diff(self, i):
        return ONE if i == self.index else ZERO

    def max_index(self):
        return self.index

    def __str__(self):
        return f"x{self.index}"


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def eval(self, x):
        return -self.arg.eval(x)

    def diff(self, i):
        return neg(self.arg.diff(i))

    def max_index(self):
        return self.arg.max_index()

    def __str__(self):
        return f"-{_wrap(self.arg, 2)}"


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr

    def eval(self, x):
        return self.left.eval(x) + self.right.eval(x)

    def diff(self, i):
        return add(self.left.diff(i), self.right.diff(i))

    def max_index(self):
        return max(self.left.max_index(), self.right.max_index())

    def __str__(self):
        return f"{self.left} + {_wrap(self.right, 1)}"


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr

    def eval(self, x):
        return self.left.eval(x) - self.right.eval(x)

    def diff(self, i):
        return sub(self.left.diff(i), self.right.diff(i))

    def max_index(self):
        return max(self.left.max_index(), self.right.max_index())

    def __str__(self):
        return f"{self.left} - {_wrap(self.right, 1)}"


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr

    def eval(self, x):
        return self.left.eval(x) * self.right.eval(x)

    def diff(self, i):
        return add(mul(self.left.diff(i), self.right), mul(self.left, self.right.diff(i)))

    def max_index(self):
        return max(self.left.max_index(), self.right.max_index())

    def __str__(self):
        return f"{_wrap(self.left, 2)}*{_wrap(self.right, 2)}"


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int

    def eval(self, x):
        return self.base.eval(x) ** self.exponent

    def diff(self, i):
        if self.exponent == 0:
            return ZERO
        inner = self.base.diff(i)
        return mul(mul(Const(float(self.exponent)), power(self.base, self.exponent - 1)), inner)

    def max_index(self):
        return self.base.max_index()

    def __str__(self):
        return f"{_wrap(self.base, 3)}^{self.exponent}"


@dataclass(frozen=True)
class Call(Expr):
    name: str
    arg: Expr

    def eval(self, x):
        return getattr(np, self.name)(self.arg.eval(x))

    def diff(self, i):
        inner = self.arg.diff(i)
        if inner == ZERO:
            return ZERO
        a = self.arg
        if self.name == "sin":
            outer = Call("cos", a)
        elif self.name == "cos":
            outer = neg(Call("sin", a))
        elif self.name == "tanh":
            outer = sub(ONE, power(Call("tanh", a), 2))
        else:
            outer = Call("exp", a)
        return mul(outer, inner)

    def max_index(self):
        return self.arg.max_index()

    def __str__(self):
        return f"{self.name}({self.arg})"


_PRECEDENCE = {Add: 1, Sub: 1, Neg: 2, Mul: 2, Pow: 3}


def _wrap(e: Expr, level: int) -> str:
    p = _PRECEDENCE.get(type(e), 4)
    if isinstance(e, Const) and e.value < 0:
        p = 2
    return f"({e})" if p < level or (p == level and isinstance(e, (Sub, Neg))) else str(e)


# Constructors that drop additive zeros and multiplicative ones, so derivative
# trees of polynomial libraries stay small.
def add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    return Sub(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def power(a: Expr, k: int) -> Expr:
    if k == 0:
        return ONE
    if k == 1:
        return a
    return Pow(a, k)


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>\*\*|[-+*^()]))"
)


class _Parser:
    def __init__(self, text: str, offset: int, n: int):
        self.tokens = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                bad = len(text[pos:]) - len(text[pos:].lstrip()) + pos
                raise LibraryError(f"unexpected character {text[bad]!r}", offset + bad)
            kind = m.lastgroup
            self.tokens.append((kind, m.group(kind), offset + m.start(kind)))
            pos = m.end()
        self.end = offset + len(text)
        self.i = 0
        self.n = n

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None, self.end)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value:
            found = "end of expression" if kind is None else repr(val)
            raise LibraryError(f"expected {value!r}, found {found}", pos)

    def parse(self) -> Expr:
        if not self.tokens:
            raise LibraryError("empty expression", self.end)
        e = self.expr()
        kind, val, pos = self.peek()
        if kind is not None:
            raise LibraryError(f"unexpected token {val!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = Add(e, rhs) if op == "+" else Sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] == "*":
            self.take()
            e = Mul(e, self.unary())
        return e

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise LibraryError("exponent must be a non-negative integer literal", pos)
            return Pow(base, int(val))
        return base

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= self.n:
                    raise LibraryError(f"unknown variable {val!r} for dimension n={self.n}", pos)
                return Var(idx)
            if val not in FUNCTIONS:
                raise LibraryError(f"unsupported function {val!r}", pos)
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(val, arg)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of expression" if kind is None else repr(val)
        raise LibraryError(f"unexpected {found}", pos)


@dataclass(frozen=True)
class FunctionLibrary:
    """Ordered library Z(x) of ``s`` basis expressions in ``n`` variables."""

    n: int
    basis: tuple[Expr, ...]
    source: str = ""
    _jac: tuple[tuple[Expr, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise LibraryError("state dimension must be positive")
        if not self.basis:
            raise LibraryError("library must contain at least one expression")
        for e in self.basis:
            if e.max_index() > self.n:
                raise LibraryError(f"expression {e} references x{e.max_index()} but n={self.n}")
        jac = tuple(tuple(e.diff(j) for j in range(1, self.n + 1)) for e in self.basis)
        object.__setattr__(self, "_jac", jac)

    @property
    def s(self) -> int:
        return len(self.basis)

    @property
    def coordinate_prefix(self) -> bool:
        """True iff entries 1..n are exactly x1..xn, i.e. Z(x) = [x; Q(x)]."""
        return self.s >= self.n and all(self.basis[i] == Var(i + 1) for i in range(self.n))

    def canonical(self) -> str:
        return "; ".join(str(e) for e in self.basis)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def prefix(self, k: int) -> "FunctionLibrary":
        return FunctionLibrary(self.n, self.basis[:k], "; ".join(str(e) for e in self.basis[:k]))

    def __str__(self):
        return self.canonical()


def _split(text: str):
    """Yield (piece, offset) for each ';'/newline separated entry."""
    start = 0
    for m in re.finditer(r"[;\n]", text + "\n"):
        piece = text[start:m.start()]
        if piece.strip():
            yield piece, start
        start = m.end()


def parse_library(text: str, n: int) -> FunctionLibrary:
    """Parse a ``;``/newline separated list of expressions over ``x1..xn``.

    Raises LibraryError with the offending character offset on syntax
    errors, unknown variables and unsupported function names.
    """
    if n < 1:
        raise LibraryError("state dimension must be positive")
    basis = tuple(_Parser(piece, off, n).parse() for piece, off in _split(text))
    if not basis:
        raise LibraryError("library must contain at least one expression")
    return FunctionLibrary(n, basis, text)


def _as_points(lib: FunctionLibrary, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != lib.n:
        raise ValueError(f"expected leading dimension {lib.n}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise EvaluationError("non-finite state")
    return x


def evaluate(lib: FunctionLibrary, x) -> np.ndarray:
    """Evaluate Z(x).

    ``x`` is an n-vector, or an (n, K) array of K points in which case the
    result is (s, K).
    """
    x = _as_points(lib, x)
    with np.errstate(over="raise", invalid="raise"):
        try:
            rows = [np.broadcast_to(e.eval(x), x.shape[1:]).astype(float) for e in lib.basis]
        except FloatingPointError as exc:
            raise EvaluationError(f"overflow evaluating library: {exc}") from None
    out = np.array(rows)
    if not np.all(np.isfinite(out)):
        raise EvaluationError("library evaluated to a non-finite value")
    return out


def jacobian(lib: FunctionLibrary, x) -> np.ndarray:
    """Analytic Jacobian Z'(x), shape (s, n); (s, n, K) for an (n, K) batch."""
    x = _as_points(lib, x)
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = np.array(
                [[np.broadcast_to(d.eval(x), x.shape[1:]).astype(float) for d in row] for row in lib._jac]
            )
        except FloatingPointError as exc:
            raise EvaluationError(f"overflow evaluating Jacobian: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise EvaluationError("Jacobian evaluated to a non-finite value")
    return out


def derivative_expr(lib: FunctionLibrary, i: int, j: int) -> Expr:
    """Symbolic d Z_i / d x_j (0-based indices)."""
    return lib._jac[i][j]


def linear_library(n: int) -> FunctionLibrary:
    return parse_library("; ".join(f"x{i}" for i in range(1, n + 1)), n)


def from_exprs(n: int, exprs: Sequence[str]) -> FunctionLibrary:
    return parse_library("; ".join(exprs), n)
