"""A small arithmetic language for user-defined scalar fields.

Grammar (lowest to highest precedence)::

    expr  := term (("+" | "-") term)*
    term  := unary (("*" | "/") unary)*
    unary := "-" unary | power
    power := atom ("^" unary)?          # right associative
    atom  := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"

Variables are ``x1`` .. ``xm``; functions are sin, cos, exp, tanh, sqrt, abs.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from ..core import ITO, STRATONOVICH, ModelSpec, ito_correction_from_jacobian, jacobian_fd
from ..errors import ZeroNoiseError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class FieldSyntaxError(ZeroNoiseError, SyntaxError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnknownIdentifier(ZeroNoiseError, NameError):
    def __init__(self, name, offset):
        super().__init__(f"unknown identifier {name!r} at byte {offset}")
        self.name = name
        self.offset = offset


class ArityError(ZeroNoiseError, TypeError):
    pass


class EvaluationError(ZeroNoiseError, ArithmeticError):
    pass


# ---------------------------------------------------------------- tree

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # zero based


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    arg: "Node"


Node = Union[Num, Var, Neg, Bin, Call]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3
_ATOM_PREC = 5


def _prec(node) -> int:
    if isinstance(node, Bin):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _NEG_PREC
    return _ATOM_PREC


def to_source(node) -> str:
    if isinstance(node, Num):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Call):
        return f"{node.name}({to_source(node.arg)})"
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        if _prec(node.operand) < _NEG_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left, right = to_source(node.left), to_source(node.right)
    if node.op == "^":
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _NEG_PREC:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


# ---------------------------------------------------------------- parser

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
""", re.VERBOSE)


def _tokenize(src: str):
    pos = 0
    out = []
    while pos < len(src):
        mt = _TOKEN.match(src, pos)
        if mt is None:
            raise FieldSyntaxError(f"unexpected character {src[pos]!r}", _byte(src, pos))
        kind = mt.lastgroup
        if kind != "ws":
            out.append((kind, mt.group(), _byte(src, pos)))
        pos = mt.end()
    out.append(("end", "", _byte(src, len(src))))
    return out


def _byte(src, pos):
    return len(src[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, src: str, m: int):
        self.tokens = _tokenize(src)
        self.i = 0
        self.m = m

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.take()
        if tok[1] != text:
            raise FieldSyntaxError(f"expected {text!r}, found {tok[1] or 'end of input'!r}", tok[2])
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise FieldSyntaxError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                if self.peek()[1] == ")":
                    raise ArityError(f"{text}() takes exactly one argument (byte {off})")
                arg = self.expr()
                if self.peek()[1] == ",":
                    raise ArityError(f"{text}() takes exactly one argument (byte {off})")
                self.expect(")")
                return Call(text, arg)
            mt = re.fullmatch(r"x([1-9]\d*)", text)
            if mt and int(mt.group(1)) <= self.m:
                return Var(int(mt.group(1)) - 1)
            raise UnknownIdentifier(text, off)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise FieldSyntaxError(f"unexpected {text or 'end of input'!r}", off)


# ---------------------------------------------------------------- evaluation

def _eval(node, x):
    if isinstance(node, Num):
        return np.full(x.shape[:-1], node.value)
    if isinstance(node, Var):
        return x[..., node.index]
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, Call):
        arg = _eval(node.arg, x)
        if node.name == "sqrt" and np.any(arg < 0):
            raise EvaluationError("sqrt of a negative number")
        with np.errstate(all="ignore"):
            return FUNCTIONS[node.name](arg)
    left = _eval(node.left, x)
    right = _eval(node.right, x)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        if np.any(right == 0):
            raise EvaluationError("division by zero")
        return left / right
    with np.errstate(all="ignore"):
        return np.power(left, right)


@dataclass(frozen=True)
class FieldExpr:
    source: str
    tree: Node
    m: int

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x[None]
        out = _eval(self.tree, x)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(f"non-finite value while evaluating {self.source!r}")
        return out

    def __str__(self):
        return to_source(self.tree)


def parse_field(source: str, m: int) -> FieldExpr:
    """Parse ``source`` into a field over variables ``x1 .. xm``."""
    return FieldExpr(source, _Parser(source, m).parse(), m)


def build_custom_model(m: int, drift, diffusion, noise_kind: str = ITO,
                       label: str = "custom") -> ModelSpec:
    """Model from expression strings: ``drift`` has m entries, ``diffusion``
    is an m x k nested list."""
    drift_f = [parse_field(src, m) for src in drift]
    if len(drift_f) != m:
        raise ValueError(f"drift needs {m} expressions")
    rows = [[parse_field(src, m) for src in row] for row in diffusion]
    if len(rows) != m or len({len(r) for r in rows}) != 1:
        raise ValueError(f"diffusion needs {m} rows of equal length")
    k = len(rows[0])

    def drift_fn(x):
        return np.stack([f(x) for f in drift_f], axis=-1)

    def diffusion_fn(x):
        return np.stack([np.stack([f(x) for f in row], axis=-1) for row in rows], axis=-2)

    def diffusion_jac(x):
        flat = lambda z: diffusion_fn(z).reshape(z.shape[:-1] + (m * k,))
        return jacobian_fd(flat, x).reshape(x.shape[:-1] + (m, k, m))

    correction = None
    if noise_kind == STRATONOVICH:
        correction = ito_correction_from_jacobian(diffusion_fn, diffusion_jac)
    return ModelSpec(m=m, k=k, drift=drift_fn, diffusion=diffusion_fn, noise_kind=noise_kind,
                     diffusion_jacobian=diffusion_jac, ito_correction=correction, label=label,
                     params={"drift": list(drift), "diffusion": [list(r) for r in diffusion]})
