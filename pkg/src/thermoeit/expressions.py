"""Arithmetic expressions for coefficient and source specifications.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME | NAME "(" expr ")" | "(" expr ")"

Names are the coordinates ``x, y, z`` and the constants ``pi, e``; functions are
``exp, sin, cos, sqrt``. Expressions evaluate vectorised on point arrays of shape (N, n).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from src.thermoeit.errors import ConfigError

FUNCTIONS: Dict[str, Callable[[NDArray], NDArray]] = {"exp": np.exp, "sin": np.sin, "cos": np.cos,
                                                      "sqrt": np.sqrt}
CONSTANTS = {"pi": np.pi, "e": np.e}
COORDINATES = ("x", "y", "z")

_TOKEN = re.compile(r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
                    r"|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))")


class ExpressionError(ConfigError):
    code = "expression"


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Name:
    name: str
    position: int


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    function: str
    argument: "Node"


Node = Union[Number, Name, Unary, Binary, Call]


def tokenize(text: str) -> List[Tuple[str, str, int]]:
    tokens, position = [], 0
    while position < len(text):
        if text[position:].strip() == "":
            break
        match = _TOKEN.match(text, position)
        if match is None or match.end() == position:
            column = position + len(text[position:]) - len(text[position:].lstrip())
            raise ExpressionError(f"unexpected character {text[column]!r} in {text!r}", column=column + 1)
        kind = match.lastgroup
        start = match.start(kind)
        tokens.append((kind, match.group(kind), start))
        position = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.index = 0

    @property
    def current(self) -> Tuple[str, str, int]:
        return self.tokens[self.index]

    def error(self, message: str) -> ExpressionError:
        return ExpressionError(f"{message} in {self.text!r}", column=self.current[2] + 1)

    def accept(self, *ops: str) -> str:
        kind, value, _ = self.current
        if kind == "op" and value in ops:
            self.index += 1
            return value
        return ""

    def expect(self, op: str):
        if not self.accept(op):
            raise self.error(f"expected {op!r}")

    def parse(self) -> Node:
        node = self.expression()
        if self.current[0] != "end":
            raise self.error(f"unexpected {self.current[1]!r}")
        return node

    def expression(self) -> Node:
        node = self.term()
        while op := self.accept("+", "-"):
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while op := self.accept("*", "/"):
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if op := self.accept("+", "-"):
            return Unary(op, self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.accept("^"):
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, value, position = self.current
        if kind == "number":
            self.index += 1
            return Number(float(value))
        if kind == "name":
            self.index += 1
            if value in FUNCTIONS:
                self.expect("(")
                argument = self.expression()
                self.expect(")")
                return Call(value, argument)
            if value in CONSTANTS:
                return Number(float(CONSTANTS[value]))
            if value in COORDINATES:
                return Name(value, position)
            raise ExpressionError(f"unknown name {value!r} in {self.text!r}", column=position + 1)
        if self.accept("("):
            node = self.expression()
            self.expect(")")
            return node
        raise self.error("expected a number, name or '('" if kind != "end" else "unexpected end of expression")


def parse(text: str) -> Node:
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    return _Parser(text).parse()


def _evaluate(node: Node, points: NDArray) -> NDArray:
    if isinstance(node, Number):
        return np.full(points.shape[0], node.value)
    if isinstance(node, Name):
        axis = COORDINATES.index(node.name)
        if axis >= points.shape[1]:
            raise ExpressionError(f"coordinate {node.name!r} is undefined in {points.shape[1]}D",
                                  column=node.position + 1)
        return points[:, axis]
    if isinstance(node, Unary):
        operand = _evaluate(node.operand, points)
        return -operand if node.op == "-" else operand
    if isinstance(node, Call):
        return FUNCTIONS[node.function](_evaluate(node.argument, points))
    left, right = _evaluate(node.left, points), _evaluate(node.right, points)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return left / right
    return np.power(left, right)


@dataclass(frozen=True)
class Expression:
    """A parsed expression with its source text."""

    text: str
    tree: Node

    @classmethod
    def compile(cls, text: str) -> "Expression":
        return cls(text, parse(text))

    def __call__(self, points: NDArray) -> NDArray[np.float64]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        with np.errstate(all="ignore"):
            values = _evaluate(self.tree, points)
        if not np.all(np.isfinite(values)):
            raise ExpressionError(f"{self.text!r} is not finite on the domain")
        return values

    def constant(self) -> float:
        """Value of a coordinate-free expression."""
        return float(self(np.zeros((1, len(COORDINATES))))[0])
