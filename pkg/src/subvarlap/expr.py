"""A small, safe arithmetic expression language for config files.

Expressions are parsed with `ast` and evaluated by walking the tree, so only
the whitelisted operators, functions and names below are reachable.
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

__all__ = ["ExpressionError", "Expression", "parse_expression", "coordinate_names"]

FUNCTIONS = {
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "log": np.log,
    "pow": np.power,
    "min": np.minimum,
    "max": np.maximum,
    "step": lambda a: np.where(np.asarray(a) >= 0, 1.0, 0.0),
}
CONSTANTS = {"pi": math.pi, "e": math.e}
BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
UNOPS = {ast.USub: np.negative, ast.UAdd: np.positive}


class ExpressionError(InvalidArgument):
    def __init__(self, message, line=None, col=None):
        self.line, self.col = line, col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + message)


def coordinate_names(ndim, heisenberg=False):
    if heisenberg:
        return ("x", "y", "t")
    return ("x", "y", "z")[:ndim] if ndim <= 3 else tuple(f"x{i + 1}" for i in range(ndim))


@dataclass(frozen=True)
class Expression:
    text: str
    tree: ast.Expression
    names: tuple

    def __call__(self, points):
        points = np.asarray(points, dtype=float)
        env = dict(CONSTANTS)
        for i, n in enumerate(self.names):
            env[n] = points[..., i]
        with np.errstate(all="ignore"):
            out = _eval(self.tree.body, env)
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1]).copy()


def _eval(node, env):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.BinOp):
        return BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return UNOPS[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](*[_eval(a, env) for a in node.args])
    raise AssertionError("unreachable: the tree was validated")


_ARITY = {"min": 2, "max": 2, "pow": 2}


def _validate(tree, names, line, col0):
    allowed = set(names) | set(CONSTANTS)
    callees = {id(n.func) for n in ast.walk(tree) if isinstance(n, ast.Call)}
    for node in ast.walk(tree):
        col = col0 + getattr(node, "col_offset", 0) + 1
        if isinstance(node, (ast.Expression, ast.Load, ast.operator, ast.unaryop)):
            if isinstance(node, ast.operator) and type(node) not in BINOPS:
                raise ExpressionError(f"operator {type(node).__name__} not allowed", line, col0 + 1)
            if isinstance(node, ast.unaryop) and type(node) not in UNOPS:
                raise ExpressionError(f"operator {type(node).__name__} not allowed", line, col0 + 1)
            continue
        if isinstance(node, (ast.BinOp, ast.UnaryOp)):
            continue
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"constant {node.value!r} is not a number", line, col)
            continue
        if isinstance(node, ast.Name):
            if id(node) in callees:
                continue  # checked as part of its Call
            if node.id not in allowed:
                raise ExpressionError(
                    f"unknown name {node.id!r}; allowed: {', '.join(sorted(allowed))}", line, col
                )
            continue
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                raise ExpressionError("unknown function", line, col)
            if node.keywords:
                raise ExpressionError("keyword arguments are not allowed", line, col)
            want = _ARITY.get(node.func.id, 1)
            if len(node.args) != want:
                raise ExpressionError(f"{node.func.id} takes {want} argument(s)", line, col)
            continue
        raise ExpressionError(f"{type(node).__name__} is not allowed in expressions", line, col)


def parse_expression(text, names=("x", "y", "t"), line=None, col=0):
    """Parse `text`; `line`/`col` locate it in a config file for error messages."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        c = col + (exc.offset or 1) + (len(text) - len(text.lstrip()))
        raise ExpressionError(f"syntax error: {exc.msg}", line, c) from None
    _validate(tree, tuple(names), line, col + len(text) - len(text.lstrip()))
    return Expression(text.strip(), tree, tuple(names))
