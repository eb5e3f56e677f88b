"""Tiny arithmetic expression language for scenario files.

Expressions are strings such as ``"2 + sin(x1)"`` or ``"s^3"``.  They are
parsed once with :mod:`ast`, checked against a whitelist, and compiled into
a numpy-vectorized callable.  Supported: ``+ - * / ^ **``, unary minus,
numeric literals, the constants ``pi`` and ``e``, the functions
``sin cos exp log abs sqrt step`` and the variables named at compile time.
"""
from __future__ import annotations

import ast

import numpy as np

__all__ = ["ExpressionError", "Expression", "compile_expr", "space_field", "spacetime_field", "evaluate_constant"]

_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
    "sqrt": np.sqrt,
    # Heaviside with step(0) = 1
    "step": lambda v: np.where(np.asarray(v) >= 0.0, 1.0, 0.0),
}
_CONSTS = {"pi": np.pi, "e": np.e}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    """Raised for syntax errors or forbidden constructs in an expression."""


class Expression:
    """A compiled expression over a fixed set of variable names."""

    def __init__(self, source: str, variables=("x1", "x2", "t")):
        if not isinstance(source, str):
            source = repr(float(source))
        self.source = source
        self.variables = tuple(variables)
        text = source.replace("^", "**")
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ExpressionError(f"unknown function in {self.source!r}")
            if len(node.args) != 1 or node.keywords:
                raise ExpressionError(f"functions take one argument: {self.source!r}")
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _CONSTS and node.id not in self.variables:
                raise ExpressionError(
                    f"unknown name {node.id!r} in {self.source!r}; "
                    f"allowed: {', '.join(self.variables)}"
                )
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"bad literal in {self.source!r}")
        else:
            raise ExpressionError(f"construct not allowed in {self.source!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = self._eval(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            return _CONSTS[node.id]
        return float(node.value)

    def __call__(self, **env):
        missing = [k for k in env if k not in self.variables]
        if missing:
            raise ExpressionError(f"unexpected variables {missing}")
        shape = np.broadcast_shapes(*(np.shape(v) for v in env.values())) if env else ()
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, {k: np.asarray(v, dtype=float) for k, v in env.items()})
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    def is_constant(self) -> bool:
        return not any(
            isinstance(n, ast.Name) and n.id in self.variables for n in ast.walk(self._tree)
        )

    def __repr__(self):
        return f"Expression({self.source!r})"


def compile_expr(source, variables=("x1", "x2", "t")) -> Expression:
    return Expression(source, variables)


def space_field(source, dim):
    """Compile ``source`` as a function of a point array ``x`` of shape (..., dim)."""
    expr = compile_expr(source, ("x1", "x2")[:dim])

    def fn(x):
        x = np.asarray(x, dtype=float)
        return expr(**{f"x{i + 1}": x[..., i] for i in range(dim)}) * np.ones(x.shape[:-1])

    fn.source = expr.source
    return fn


def spacetime_field(source, dim):
    """Compile ``source`` as a function ``fn(t, x)`` with x of shape (..., dim)."""
    expr = compile_expr(source, ("t",) + ("x1", "x2")[:dim])

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(t.shape, x.shape[:-1])
        return expr(t=t, **{f"x{i + 1}": x[..., i] for i in range(dim)}) * np.ones(shape)

    fn.source = expr.source
    return fn


def evaluate_constant(source) -> float:
    """Evaluate a closed expression such as ``"pi/2"`` or a plain number."""
    if isinstance(source, (int, float)):
        return float(source)
    return float(compile_expr(source, ())())
