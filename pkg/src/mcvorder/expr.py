"""A small, safe arithmetic expression language compiled to numpy callables.

Only numeric literals, whitelisted names, ``+ - * / **`` and calls to the
functions in :data:`FUNCTIONS` are accepted; anything else is rejected at
compile time with the offending column.
"""

from __future__ import annotations

import ast
from typing import Callable, Mapping

import numpy as np


def log_cosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


FUNCTIONS: dict[str, Callable] = {
    "exp": np.exp,
    "log": np.log,
    "cosh": np.cosh,
    "log_cosh": log_cosh,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "max": np.maximum,
    "min": np.minimum,
}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


class Expression:
    """Compiled expression; call with a mapping from names to values."""

    def __init__(self, source: str, names):
        self.source = source
        self.allowed = frozenset(names)
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg} (column {exc.offset})") from None
        self.names_used: set[str] = set()
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node) -> None:
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                self._reject(node, "only numeric literals are allowed")
        elif isinstance(node, ast.Name):
            if node.id not in self.allowed:
                self._reject(node, f"unknown name {node.id!r}")
            self.names_used.add(node.id)
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                self._reject(node, "unsupported operator")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                self._reject(node, "unsupported unary operator")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                self._reject(node, "unknown function")
            if node.keywords:
                self._reject(node, "keyword arguments are not allowed")
            arity = 2 if node.func.id in ("max", "min") else 1
            if len(node.args) != arity:
                self._reject(node, f"{node.func.id} takes {arity} argument(s)")
            for arg in node.args:
                self._check(arg)
        else:
            self._reject(node, f"unsupported syntax {type(node).__name__}")

    def _reject(self, node, why: str):
        col = getattr(node, "col_offset", 0) + 1
        raise ExpressionError(f"{why} in {self.source!r} at column {col}")

    def __call__(self, env: Mapping[str, object]):
        return self._eval(self._tree, env)

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            value = self._eval(node.operand, env)
            return -value if isinstance(node.op, ast.USub) else value
        fn = FUNCTIONS[node.func.id]
        return fn(*(self._eval(a, env) for a in node.args))

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"
