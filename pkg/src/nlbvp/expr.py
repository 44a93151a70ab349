"""Small arithmetic expression language for configuration data.

Grammar (standard precedence, ``^`` right-associative and binding tighter
than unary minus)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | "x" | "y" | "pi" | FUNC "(" expr ")" | "(" expr ")"
    FUNC   := sin | cos | exp | abs

Expressions compile to :class:`~nlbvp.convolutions.Field` objects with
symbolic gradients and Hessians.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .convolutions import Field


class ExprError(ValueError):
    """Raised on a malformed expression."""


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")
FUNCS = ("sin", "cos", "exp", "abs")
VARS = ("x", "y")


@dataclass(frozen=True)
class Node:
    op: str
    args: tuple = ()
    value: float = 0.0


def num(c: float) -> Node:
    return Node("num", value=float(c))


def _tokens(text: str) -> list[tuple[str, str]]:
    out, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExprError(f"unexpected input at column {pos + 1} in '{text}'")
        n, name, sym = m.groups()
        if n is not None:
            out.append(("num", n))
        elif name is not None:
            out.append(("name", name))
        elif sym in "+-*/^()":
            out.append(("sym", sym))
        else:
            raise ExprError(f"unexpected character '{sym}' in '{text}'")
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokens(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else ("end", "")

    def take(self, sym: str | None = None):
        tok = self.peek()
        if sym is not None and tok != ("sym", sym):
            raise ExprError(f"expected '{sym}' in '{self.text}'")
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        if self.peek()[0] != "end":
            raise ExprError(f"trailing input '{self.peek()[1]}' in '{self.text}'")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() in (("sym", "+"), ("sym", "-")):
            op = self.take()[1]
            node = Node("add" if op == "+" else "sub", (node, self.term()))
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek() in (("sym", "*"), ("sym", "/")):
            op = self.take()[1]
            node = Node("mul" if op == "*" else "div", (node, self.unary()))
        return node

    def unary(self) -> Node:
        if self.peek() == ("sym", "-"):
            self.take()
            return Node("neg", (self.unary(),))
        if self.peek() == ("sym", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek() == ("sym", "^"):
            self.take()
            return Node("pow", (base, self.unary()))
        return base

    def atom(self) -> Node:
        kind, val = self.take()
        if kind == "num":
            return num(float(val))
        if kind == "name":
            if val in VARS:
                return Node("var", value=VARS.index(val))
            if val == "pi":
                return num(np.pi)
            if val in FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return Node(val, (arg,))
            raise ExprError(f"unknown identifier '{val}' in '{self.text}'")
        if (kind, val) == ("sym", "("):
            node = self.expr()
            self.take(")")
            return node
        raise ExprError(f"unexpected '{val or 'end of input'}' in '{self.text}'")


def parse(text: str) -> Node:
    """Parse ``text`` into an expression tree."""
    return _Parser(str(text)).parse()


def evaluate(node: Node, X: np.ndarray) -> np.ndarray:
    """Evaluate at points ``X`` of shape ``(n, d)``."""
    X = np.atleast_2d(X)
    op, a = node.op, node.args
    if op == "num":
        return np.full(len(X), node.value)
    if op == "var":
        k = int(node.value)
        if k >= X.shape[1]:
            raise ExprError("'y' used in a one-dimensional problem")
        return X[:, k].astype(float)
    if op == "neg":
        return -evaluate(a[0], X)
    if op in FUNCS or op == "log":
        return getattr(np, op)(evaluate(a[0], X))
    l, r = evaluate(a[0], X), evaluate(a[1], X)
    if op == "add":
        return l + r
    if op == "sub":
        return l - r
    if op == "mul":
        return l * r
    if op == "div":
        return l / r
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.power(l, r)


def _simplify(node: Node) -> Node:
    op, a = node.op, node.args
    if op in ("add", "sub", "mul", "div") and all(c.op == "num" for c in a):
        return num(evaluate(node, np.zeros((1, 2)))[0])
    if op == "add":
        if a[0] == num(0):
            return a[1]
        if a[1] == num(0):
            return a[0]
    if op == "sub" and a[1] == num(0):
        return a[0]
    if op == "mul":
        if num(0) in a:
            return num(0)
        if a[0] == num(1):
            return a[1]
        if a[1] == num(1):
            return a[0]
    if op == "div" and a[0] == num(0):
        return num(0)
    if op == "neg" and a[0].op == "num":
        return num(-a[0].value)
    return node


def _n(op, *args) -> Node:
    return _simplify(Node(op, args))


def diff(node: Node, k: int) -> Node:
    """Symbolic derivative with respect to coordinate ``k``."""
    op, a = node.op, node.args
    if op == "num":
        return num(0)
    if op == "var":
        return num(1.0 if int(node.value) == k else 0.0)
    if op == "neg":
        return _n("neg", diff(a[0], k))
    if op in ("add", "sub"):
        return _n(op, diff(a[0], k), diff(a[1], k))
    if op == "mul":
        return _n("add", _n("mul", diff(a[0], k), a[1]), _n("mul", a[0], diff(a[1], k)))
    if op == "div":
        top = _n("sub", _n("mul", diff(a[0], k), a[1]), _n("mul", a[0], diff(a[1], k)))
        return _n("div", top, _n("mul", a[1], a[1]))
    da = diff(a[0], k)
    if op == "sin":
        return _n("mul", Node("cos", a), da)
    if op == "cos":
        return _n("neg", _n("mul", Node("sin", a), da))
    if op == "exp":
        return _n("mul", node, da)
    if op == "log":
        return _n("div", da, a[0])
    if op == "abs":
        # sign(u) written as u / |u|; the kink itself is left to the caller
        return _n("mul", _n("div", a[0], node), da)
    if op == "pow":
        base, ex = a
        if ex.op == "num":
            return _n("mul", _n("mul", ex, _n("pow", base, num(ex.value - 1))), da)
        # d(b^e) = b^e (e' log b + e b'/b), valid for b > 0
        log_b = Node("log", (base,))
        inner = _n("add", _n("mul", diff(ex, k), log_b), _n("div", _n("mul", ex, da), base))
        return _n("mul", node, inner)
    raise ExprError(f"cannot differentiate '{op}'")


def to_field(text: str, dim: int) -> Field:
    """Compile ``text`` into a closed-form :class:`Field` on ``R^dim``."""
    tree = parse(text)
    grads = [diff(tree, k) for k in range(dim)]
    hess = [[diff(g, j) for j in range(dim)] for g in grads]

    def value(X):
        return evaluate(tree, np.atleast_2d(X))

    def grad(X):
        X = np.atleast_2d(X)
        return np.stack([evaluate(g, X) for g in grads], axis=1)

    def hessian(X):
        X = np.atleast_2d(X)
        return np.stack([np.stack([evaluate(h, X) for h in row], axis=1) for row in hess], axis=1)

    # kinks of abs(.) are not located; closed forms are assumed smooth
    return Field.closed(value, grad, hessian, dim=dim)
