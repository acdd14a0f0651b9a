"""Safe evaluation of arithmetic expressions over lattice coordinates.

Only literals, whitelisted names, arithmetic operators and calls to a fixed
set of numpy functions are accepted; everything else is rejected before
evaluation.
"""

from __future__ import annotations

import ast
import operator

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "arctan": np.arctan,
    "arctan2": np.arctan2,
    "heaviside": lambda x: np.heaviside(x, 0.5),
    "where": np.where,
    "minimum": np.minimum,
    "maximum": np.maximum,
}

CONSTANTS = {"pi": np.pi, "e": np.e, "j": 1j}

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_COMPARE = {ast.Lt: operator.lt, ast.LtE: operator.le, ast.Gt: operator.gt, ast.GtE: operator.ge}


class ExpressionError(ValueError):
    pass


def parse(text: str, names) -> ast.Expression:
    """Parse and whitelist-check ``text``; ``names`` are the allowed free variables."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"syntax error in {text!r}: {exc.msg}") from None
    allowed = set(names) | set(CONSTANTS)
    for node in ast.walk(tree):
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                raise ExpressionError(f"call not allowed in {text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in allowed and node.id not in FUNCTIONS:
                raise ExpressionError(f"unknown name {node.id!r} in {text!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float, complex)) or isinstance(node.value, bool):
                raise ExpressionError(f"literal {node.value!r} not allowed in {text!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINARY:
                raise ExpressionError(f"operator not allowed in {text!r}")
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ExpressionError(f"operator not allowed in {text!r}")
        elif isinstance(node, ast.Compare):
            if any(type(op) not in _COMPARE for op in node.ops) or len(node.ops) != 1:
                raise ExpressionError(f"comparison not allowed in {text!r}")
        elif not isinstance(node, (ast.Expression, ast.Load) + tuple(_BINARY) + tuple(_UNARY) + tuple(_COMPARE)):
            raise ExpressionError(f"{type(node).__name__} not allowed in {text!r}")
    return tree


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        # floats keep huge integer powers such as 9**9**9 from running unbounded
        return float(node.value) if isinstance(node.value, int) else node.value
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        return CONSTANTS[node.id]
    if isinstance(node, ast.BinOp):
        return _BINARY[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.Compare):
        return _COMPARE[type(node.ops[0])](_eval(node.left, env), _eval(node.comparators[0], env))
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](*(_eval(a, env) for a in node.args))
    raise ExpressionError(f"cannot evaluate {type(node).__name__}")


def evaluate(text, env: dict):
    """Evaluate a number or expression string against ``env``."""
    if isinstance(text, (int, float)):
        return text
    tree = parse(text, env)
    try:
        with np.errstate(all="ignore"):
            return _eval(tree, env)
    except OverflowError:
        raise ExpressionError(f"overflow evaluating {text!r}") from None


def uses_name(text, name: str) -> bool:
    if isinstance(text, (int, float)):
        return False
    return any(isinstance(n, ast.Name) and n.id == name for n in ast.walk(ast.parse(text, mode="eval")))
