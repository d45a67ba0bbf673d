"""A small, safe arithmetic expression language.

Parametrizations and true-model specifications are written as strings such as
``"1 - x"``, ``"v1**2"`` or ``"expit((u + v)/sqrt(1 + rho**2) - 1)"`` so that
configuration files stay declarative.  Expressions are parsed with :mod:`ast`,
checked against a whitelist of node types and functions, then compiled once
and evaluated vectorised over numpy arrays.
"""

import ast

import numpy as np
from scipy.special import expit

from .errors import SchemaError

__all__ = ["Expr"]

FUNCTIONS = {
    "sqrt": np.sqrt,
    "exp": np.exp,
    "log": np.log,
    "expit": expit,
    "abs": np.abs,
}

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Constant,
    ast.Name,
    ast.Load,
    ast.Call,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class Expr:
    """Compiled arithmetic expression.

    Parameters
    ----------
    source : str
        Expression text. Allowed: numbers, variable names, ``+ - * / **``,
        unary minus, and calls to ``sqrt, exp, log, expit, abs``.

    Examples
    --------
    >>> Expr("1 - x")(x=np.array([0.0, 1.0]))
    array([1., 0.])
    """

    def __init__(self, source):
        if not isinstance(source, str):
            source = repr(source)
        self.source = source.strip()
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise SchemaError(f"cannot parse expression {source!r}: {exc.msg}") from None
        names = set()
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise SchemaError(
                    f"expression {source!r}: {type(node).__name__} is not allowed"
                )
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                    raise SchemaError(f"expression {source!r}: unknown function")
                if node.keywords or len(node.args) != 1:
                    raise SchemaError(f"expression {source!r}: functions take one argument")
            elif isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise SchemaError(f"expression {source!r}: only numeric constants")
            elif isinstance(node, ast.Name):
                names.add(node.id)
        self.names = frozenset(names - set(FUNCTIONS))
        self._code = compile(tree, "<expr>", "eval")

    def __call__(self, shape=None, **env):
        missing = self.names - env.keys()
        if missing:
            raise SchemaError(
                f"expression {self.source!r} uses undefined name(s) {sorted(missing)}"
            )
        scope = dict(FUNCTIONS)
        scope.update({k: env[k] for k in self.names})
        with np.errstate(over="ignore"):
            out = eval(self._code, {"__builtins__": {}}, scope)
        out = np.asarray(out, dtype=float)
        if shape is not None and out.shape != tuple(shape):
            out = np.broadcast_to(out, shape).copy()
        return out

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and ast.dump(ast.parse(self.source, mode="eval")) == ast.dump(
            ast.parse(other.source, mode="eval")
        )

    def __hash__(self):
        return hash(ast.dump(ast.parse(self.source, mode="eval")))

    def __reduce__(self):
        return (Expr, (self.source,))
