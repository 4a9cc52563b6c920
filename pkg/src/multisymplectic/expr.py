"""Expressions for potentials: recursive-descent parser, printer, derivatives.

Grammar (``^`` binds tighter than unary minus, so ``-q1^2 = -(q1^2)``)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

Identifiers are ``q1..qN`` and ``x1..xn``; functions are sin, cos, exp,
sqrt, log and tanh.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt", "log", "tanh")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()) -> None:
        detail = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at byte offset {offset}{detail}")
        self.offset = offset
        self.expected = expected


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int) -> None:
        super().__init__(f"unknown identifier {name!r} at byte offset {offset}")
        self.name = name
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Var, Neg, Bin, Call]


# -- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # num, ident, op, end
    text: str
    offset: int  # byte offset into the UTF-8 source


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos = 0
    raw = source.encode("utf-8")

    def byte_off(char_pos: int) -> int:
        return len(source[:char_pos].encode("utf-8"))

    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            rest = source[pos:]
            if rest.strip() == "":
                break
            skip = len(rest) - len(rest.lstrip())
            raise ExprSyntaxError(f"unexpected character {source[pos + skip]!r}", byte_off(pos + skip))
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), byte_off(start)))
        pos = m.end()
    toks.append(_Tok("end", "", len(raw)))
    return toks


# -- parser ------------------------------------------------------------------

_PRIMARY_START = ("number", "identifier", "function", "'('")


class _Parser:
    def __init__(self, source: str, variables: frozenset[str] | None) -> None:
        self.toks = _tokenize(source)
        self.i = 0
        self.variables = variables

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _is(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.text in ops

    def _fail(self, expected: tuple[str, ...]):
        t = self.tok
        what = "end of input" if t.kind == "end" else repr(t.text)
        raise ExprSyntaxError(f"unexpected {what}", t.offset, expected)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self._fail(("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return node

    def expr(self) -> Node:
        node = self.term()
        while self._is("+", "-"):
            op = self.tok.text
            self.i += 1
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self._is("*", "/"):
            op = self.tok.text
            self.i += 1
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self._is("-"):
            self.i += 1
            return Neg(self.unary())
        if self._is("+"):
            self.i += 1
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self._is("^"):
            self.i += 1
            return Bin("^", base, self.unary())
        return base

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "ident":
            self.i += 1
            if t.text in FUNCTIONS:
                if not self._is("("):
                    self._fail(("'('",))
                self.i += 1
                arg = self.expr()
                if not self._is(")"):
                    self._fail(("')'",))
                self.i += 1
                return Call(t.text, arg)
            if self.variables is not None and t.text not in self.variables:
                raise UnknownIdentifierError(t.text, t.offset)
            if self.variables is None and not re.fullmatch(r"[qx][1-9]\d*", t.text):
                raise UnknownIdentifierError(t.text, t.offset)
            return Var(t.text)
        if self._is("("):
            self.i += 1
            node = self.expr()
            if not self._is(")"):
                self._fail(("')'",))
            self.i += 1
            return node
        self._fail(_PRIMARY_START)


def variable_names(n: int, N: int) -> frozenset[str]:
    return frozenset([f"x{m + 1}" for m in range(n)] + [f"q{i + 1}" for i in range(N)])


# -- printing ----------------------------------------------------------------

def to_source(node: Node) -> str:
    """Fully parenthesized source text that parses back to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, Bin):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    raise TypeError(f"not an expression node: {node!r}")


# -- evaluation --------------------------------------------------------------

def evaluate(node: Node, env: Mapping[str, object]):
    """Evaluate with numpy broadcasting; ``env`` maps variable names to values."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise EvaluationError(f"no value bound for {node.name!r}") from None
    if isinstance(node, Neg):
        return -evaluate(node.arg, env)
    if isinstance(node, Bin):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        with np.errstate(all="ignore"):
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                if np.any(np.asarray(b) == 0):
                    raise EvaluationError("division by zero")
                return a / b
            out = np.power(np.asarray(a, dtype=float), b)
        if not np.all(np.isfinite(out)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b)):
            raise EvaluationError(f"power {to_source(node)} is undefined for these arguments")
        return out if np.ndim(out) else float(out)
    if isinstance(node, Call):
        a = evaluate(node.arg, env)
        if node.func in ("sqrt", "log"):
            arr = np.asarray(a)
            if np.any(arr < 0) or (node.func == "log" and np.any(arr == 0)):
                raise EvaluationError(f"{node.func} of a value outside its domain")
        return getattr(np, node.func)(a)
    raise TypeError(f"not an expression node: {node!r}")


# -- differentiation ---------------------------------------------------------

def _is_num(node: Node, value: float) -> bool:
    return isinstance(node, Num) and node.value == value


def _add(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Bin("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return Neg(b)
    return Bin("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Bin("*", a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_num(a, 0.0):
        return Num(0.0)
    return Bin("/", a, b)


def _depends(node: Node, var: str) -> bool:
    if isinstance(node, Num):
        return False
    if isinstance(node, Var):
        return node.name == var
    if isinstance(node, (Neg, Call)):
        return _depends(node.arg, var)
    return _depends(node.left, var) or _depends(node.right, var)


def _fold(node: Node) -> Node:
    """Collapse a variable-free subtree to a literal when it evaluates cleanly."""
    if isinstance(node, Num) or _names(node):
        return node
    try:
        value = float(evaluate(node, {}))
    except EvaluationError:
        return node
    return Num(value) if math.isfinite(value) else node


def _names(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, (Neg, Call)):
        return _names(node.arg)
    if isinstance(node, Bin):
        return _names(node.left) | _names(node.right)
    return set()


def differentiate(node: Node, var: str) -> Node:
    """Symbolic partial derivative with light constant folding."""
    if not _depends(node, var):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0)
    if isinstance(node, Neg):
        d = differentiate(node.arg, var)
        return Num(0.0) if _is_num(d, 0.0) else Neg(d)
    if isinstance(node, Bin):
        a, b = node.left, node.right
        da, db = differentiate(a, var), differentiate(b, var)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if node.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), Bin("^", b, Num(2.0)))
        # a^b
        if not _depends(b, var):
            k = _fold(b)
            if _is_num(k, 0.0):
                return Num(0.0)
            if _is_num(k, 1.0):
                return da
            km1 = Num(k.value - 1.0) if isinstance(k, Num) else _sub(k, Num(1.0))
            return _mul(_mul(k, Bin("^", a, km1)), da)
        return _mul(node, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))
    if isinstance(node, Call):
        u = node.arg
        du = differentiate(u, var)
        outer = {
            "sin": lambda: Call("cos", u),
            "cos": lambda: Neg(Call("sin", u)),
            "exp": lambda: Call("exp", u),
            "sqrt": lambda: _div(Num(0.5), Call("sqrt", u)),
            "log": lambda: _div(Num(1.0), u),
            "tanh": lambda: _sub(Num(1.0), Bin("^", Call("tanh", u), Num(2.0))),
        }[node.func]()
        return _mul(outer, du)
    raise TypeError(f"not an expression node: {node!r}")


# -- public wrapper ----------------------------------------------------------

@dataclass(frozen=True)
class PotentialExpr:
    """A parsed potential V(x, q) over identifiers q1..qN, x1..xn."""

    source: str
    ast: Node
    n: int | None = None
    N: int | None = None

    def __call__(self, **values) -> float:
        return evaluate(self.ast, values)

    def variables(self) -> set[str]:
        found: set[str] = set()

        def walk(nd: Node) -> None:
            if isinstance(nd, Var):
                found.add(nd.name)
            elif isinstance(nd, (Neg, Call)):
                walk(nd.arg)
            elif isinstance(nd, Bin):
                walk(nd.left)
                walk(nd.right)

        walk(self.ast)
        return found

    def derivative(self, var: str) -> "PotentialExpr":
        d = differentiate(self.ast, var)
        return PotentialExpr(to_source(d), d, self.n, self.N)

    def to_source(self) -> str:
        return to_source(self.ast)

    def env(self, x, q) -> dict[str, object]:
        """Bind x1.., q1.. from arrays whose last axis indexes components."""
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        out: dict[str, object] = {}
        for m in range(x.shape[-1]):
            out[f"x{m + 1}"] = x[..., m]
        for i in range(q.shape[-1]):
            out[f"q{i + 1}"] = q[..., i]
        return out

    def evaluate_at(self, x, q):
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(q)[:-1])
        val = evaluate(self.ast, self.env(x, q))
        return np.broadcast_to(np.asarray(val, dtype=float), shape).copy() if shape else float(val)


def parse_potential(source: str, n: int | None = None, N: int | None = None) -> PotentialExpr:
    """Parse ``source``; with ``n`` and ``N`` given, only x1..xn and q1..qN are accepted."""
    variables = variable_names(n, N) if n is not None and N is not None else None
    return PotentialExpr(source, _Parser(source, variables).parse(), n, N)


def potential_from_expr(expr: PotentialExpr, n: int, N: int):
    """Wrap a parsed expression as a theories.Potential with symbolic gradients."""
    from .theories import Potential

    dq = [expr.derivative(f"q{i + 1}") for i in range(N)]
    dx = [expr.derivative(f"x{m + 1}") for m in range(n)]
    x_free = all(not _depends(expr.ast, f"x{m + 1}") for m in range(n))

    def value(x, q):
        return expr.evaluate_at(x, q)

    def grad_q(x, q):
        return np.stack([np.asarray(d.evaluate_at(x, q), dtype=float) for d in dq], axis=-1)

    def grad_x(x, q):
        return np.stack([np.asarray(d.evaluate_at(x, q), dtype=float) for d in dx], axis=-1)

    return Potential(value, grad_q, None if x_free else grad_x, source=expr.source)
