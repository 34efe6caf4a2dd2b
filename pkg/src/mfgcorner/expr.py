"""Closed-form scalar expressions for coefficient and boundary-data definitions.

Expressions are Python arithmetic restricted to a whitelist: numbers, the
variables ``x, y, z, s``, the constants ``pi`` and ``e``, ``+ - * / **`` and
the functions below.  Domain problems (a denominator that can vanish, a
negative square-root argument, ...) are detected when the expression is
bound to a box, using interval arithmetic, so evaluation on that box is total.
"""

from __future__ import annotations

import ast
import math

import numpy as np

VARIABLES = ("x", "y", "z", "s")
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "log": np.log,
}


class ExpressionError(ValueError):
    pass


class _Validator(ast.NodeVisitor):
    _ops = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd)

    def __init__(self):
        self.names = set()

    def generic_visit(self, node):
        allowed = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Constant,
                   ast.Load) + self._ops
        if not isinstance(node, allowed):
            raise ExpressionError(f"unsupported syntax: {type(node).__name__}")
        super().generic_visit(node)

    def visit_Constant(self, node):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ExpressionError(f"unsupported literal {node.value!r}")

    def visit_Name(self, node):
        if node.id not in VARIABLES and node.id not in CONSTANTS:
            raise ExpressionError(f"unknown name {node.id!r}")
        if node.id in VARIABLES:
            self.names.add(node.id)

    def visit_Call(self, node):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError("only exp, sin, cos, tanh, abs, sqrt, log may be called")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        self.visit(node.args[0])


class Expression:
    """Parsed expression; call with keyword arrays ``x=..., y=..., s=...``."""

    def __init__(self, source):
        if isinstance(source, (int, float)) and not isinstance(source, bool):
            source = repr(float(source))
        if not isinstance(source, str):
            raise ExpressionError(f"expression must be a string or number, got {type(source).__name__}")
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {source!r}: {exc.msg}") from None
        v = _Validator()
        v.visit(tree)
        self.tree = tree
        self.variables = frozenset(v.names)
        self.text = ast.unparse(tree)
        self._code = compile(tree, "<expression>", "eval")

    def __repr__(self):
        return f"Expression({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, Expression) and other.text == self.text

    def __hash__(self):
        return hash(self.text)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def __call__(self, **values):
        env = dict(CONSTANTS)
        env.update(FUNCTIONS)
        shape = np.broadcast(*[np.asarray(v) for v in values.values()]).shape if values else ()
        for name in VARIABLES:
            env[name] = np.asarray(values.get(name, 0.0), dtype=float)
        with np.errstate(divide="raise", invalid="raise", over="raise"):
            try:
                out = eval(self._code, {"__builtins__": {}}, env)
            except FloatingPointError as exc:
                raise ExpressionError(f"{self.text}: {exc}") from None
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def field(self):
        """Callable ``f(X, Y)`` for coefficient branches."""
        return lambda X, Y: self(x=X, y=Y)

    def trace(self):
        """Callable ``f(x, y, s)`` for boundary data."""
        return lambda x, y, s: self(x=x, y=y, s=s)

    def check_domain(self, bounds: dict):
        """Raise :class:`ExpressionError` unless evaluation is total on the box.

        ``bounds`` maps variable names to ``(lo, hi)``; unlisted variables are 0.
        Returns an enclosure ``(lo, hi)`` of the expression's range.
        """
        return _Interval(bounds, self.text).visit(self.tree.body)


def _mul(a, b):
    p = [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
    p = [0.0 if math.isnan(v) else v for v in p]
    return min(p), max(p)


def _periodic(lo, hi, fn, peak_phase):
    """Range of sin/cos on [lo, hi]: endpoints plus interior extrema."""
    if hi - lo >= 2 * math.pi:
        return -1.0, 1.0
    vals = [fn(lo), fn(hi)]
    k = math.ceil((lo - peak_phase) / math.pi)
    while peak_phase + k * math.pi <= hi:
        vals.append(fn(peak_phase + k * math.pi))
        k += 1
    return min(vals), max(vals)


class _Interval(ast.NodeVisitor):
    def __init__(self, bounds, text):
        self.bounds = bounds
        self.text = text

    def fail(self, msg):
        raise ExpressionError(f"{self.text}: {msg}")

    def visit_Constant(self, node):
        return float(node.value), float(node.value)

    def visit_Name(self, node):
        if node.id in CONSTANTS:
            c = CONSTANTS[node.id]
            return c, c
        lo, hi = self.bounds.get(node.id, (0.0, 0.0))
        return float(lo), float(hi)

    def visit_UnaryOp(self, node):
        lo, hi = self.visit(node.operand)
        return (-hi, -lo) if isinstance(node.op, ast.USub) else (lo, hi)

    def visit_BinOp(self, node):
        a, b = self.visit(node.left), self.visit(node.right)
        op = node.op
        if isinstance(op, ast.Add):
            return a[0] + b[0], a[1] + b[1]
        if isinstance(op, ast.Sub):
            return a[0] - b[1], a[1] - b[0]
        if isinstance(op, ast.Mult):
            return _mul(a, b)
        if isinstance(op, ast.Div):
            if b[0] <= 0.0 <= b[1]:
                self.fail(f"denominator {ast.unparse(node.right)} can vanish on the domain")
            return _mul(a, (1.0 / b[1], 1.0 / b[0]))
        if isinstance(op, ast.Pow):
            return self._pow(node, a, b)
        self.fail("unsupported operator")  # pragma: no cover - validator rejects earlier

    def _pow(self, node, a, b):
        if b[0] == b[1] and float(b[0]).is_integer():
            n = int(b[0])
            if n < 0 and a[0] <= 0.0 <= a[1]:
                self.fail(f"negative power of {ast.unparse(node.left)} which can vanish")
            ends = [a[0] ** n, a[1] ** n]
            lo, hi = min(ends), max(ends)
            if n % 2 == 0 and n > 0 and a[0] <= 0.0 <= a[1]:
                lo = 0.0
            return lo, hi
        if a[0] < 0.0:
            self.fail(f"non-integer power of {ast.unparse(node.left)} which can be negative")
        if b[0] < 0.0 and a[0] <= 0.0:
            self.fail(f"negative power of {ast.unparse(node.left)} which can vanish")
        with np.errstate(divide="ignore"):
            cands = [a[i] ** b[j] if a[i] > 0 or b[j] > 0 else (1.0 if b[j] == 0 else math.inf)
                     for i in (0, 1) for j in (0, 1)]
        lo, hi = min(cands), max(cands)
        if b[0] <= 0.0 <= b[1]:
            lo, hi = min(lo, 1.0), max(hi, 1.0)
        return lo, hi

    def visit_Call(self, node):
        name = node.func.id
        lo, hi = self.visit(node.args[0])
        if name == "exp":
            return math.exp(min(lo, 700.0)), math.exp(min(hi, 700.0))
        if name == "tanh":
            return math.tanh(lo), math.tanh(hi)
        if name == "abs":
            if lo <= 0.0 <= hi:
                return 0.0, max(-lo, hi)
            return min(abs(lo), abs(hi)), max(abs(lo), abs(hi))
        if name == "sqrt":
            if lo < 0.0:
                self.fail(f"sqrt argument {ast.unparse(node.args[0])} can be negative")
            return math.sqrt(lo), math.sqrt(hi)
        if name == "log":
            if lo <= 0.0:
                self.fail(f"log argument {ast.unparse(node.args[0])} can be non-positive")
            return math.log(lo), math.log(hi)
        if name == "sin":
            return _periodic(lo, hi, math.sin, math.pi / 2)
        if name == "cos":
            return _periodic(lo, hi, math.cos, 0.0)
        self.fail(f"unknown function {name}")  # pragma: no cover


def parse_expression(source) -> Expression:
    return Expression(source)
