"""Expression trees for ODE right-hand sides.

A right-hand side is a vector of scalar expression trees, one per state
variable.  Nodes are either operators (binary: add/sub/mul/div/pow,
unary: sin/cos/neg) or leaves (constant, variable, coefficient
placeholder).  Trees are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BINARY_OPS = ("add", "sub", "mul", "div", "pow")
UNARY_OPS = ("sin", "cos", "neg")
LEAF_KINDS = ("const", "var", "placeholder")

_ARITY = {**{k: 2 for k in BINARY_OPS}, **{k: 1 for k in UNARY_OPS},
          **{k: 0 for k in LEAF_KINDS}}

MAX_DIM = 5


class DomainError(ValueError):
    """Evaluation left the domain: division by zero, overflow, non-finite."""


class PlaceholderPresent(ValueError):
    """Tree contains a coefficient placeholder and cannot be evaluated."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    kind: str
    value: float = 0.0      # meaningful for kind == "const"
    index: int = 0          # meaningful for kind == "var"
    children: tuple["Node", ...] = ()

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if len(self.children) != _ARITY[self.kind]:
            raise ValueError(
                f"{self.kind} expects {_ARITY[self.kind]} children, "
                f"got {len(self.children)}")
        if self.kind == "const" and not math.isfinite(self.value):
            raise ValueError("constants must be finite")
        if self.kind == "var" and self.index < 0:
            raise ValueError("variable index must be non-negative")

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


# Construction helpers; `pow_` avoids shadowing the builtin.

def const(v: float) -> Node:
    return Node("const", value=float(v))


def var(i: int) -> Node:
    return Node("var", index=i)


def placeholder() -> Node:
    return Node("placeholder")


def add(a: Node, b: Node) -> Node:
    return Node("add", children=(a, b))


def sub(a: Node, b: Node) -> Node:
    return Node("sub", children=(a, b))


def mul(a: Node, b: Node) -> Node:
    return Node("mul", children=(a, b))


def div(a: Node, b: Node) -> Node:
    return Node("div", children=(a, b))


def pow_(a: Node, b: Node) -> Node:
    return Node("pow", children=(a, b))


def sin(a: Node) -> Node:
    return Node("sin", children=(a,))


def cos(a: Node) -> Node:
    return Node("cos", children=(a,))


def neg(a: Node) -> Node:
    return Node("neg", children=(a,))


def add_terms(terms) -> Node:
    """Right-associated sum: [t1, t2, t3] -> add(t1, add(t2, t3))."""
    terms = list(terms)
    if not terms:
        raise ValueError("empty term list")
    out = terms[-1]
    for t in reversed(terms[:-1]):
        out = add(t, out)
    return out


@dataclass(frozen=True)
class SystemExpr:
    """d-dimensional ODE right-hand side, one expression tree per component."""

    dim: int
    components: tuple[Node, ...] = field(default=())

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}")
        if len(self.components) != self.dim:
            raise ValueError("need exactly one component per dimension")
        for comp in self.components:
            for node in comp.walk():
                if node.kind == "var" and node.index >= self.dim:
                    raise ValueError(
                        f"variable index {node.index} out of range for "
                        f"dimension {self.dim}")

    def has_placeholder(self) -> bool:
        return any(n.kind == "placeholder"
                   for c in self.components for n in c.walk())


def _eval_node(node: Node, u) -> float:
    k = node.kind
    if k == "const":
        return node.value
    if k == "var":
        return u[node.index]
    if k == "placeholder":
        raise PlaceholderPresent("cannot evaluate a placeholder leaf")
    if k in UNARY_OPS:
        x = _eval_node(node.children[0], u)
        if k == "sin":
            return math.sin(x)
        if k == "cos":
            return math.cos(x)
        return -x
    a = _eval_node(node.children[0], u)
    b = _eval_node(node.children[1], u)
    try:
        if k == "add":
            r = a + b
        elif k == "sub":
            r = a - b
        elif k == "mul":
            r = a * b
        elif k == "div":
            if b == 0.0:
                raise DomainError("division by zero")
            r = a / b
        else:  # pow
            r = a ** b
    except OverflowError as exc:
        raise DomainError(str(exc)) from exc
    except (ValueError, ZeroDivisionError) as exc:
        raise DomainError(str(exc)) from exc
    if isinstance(r, complex) or not math.isfinite(r):
        raise DomainError("non-finite intermediate")
    return r


def evaluate(sys: SystemExpr, u) -> np.ndarray:
    """Evaluate the right-hand side at a single point u in R^d."""
    u = np.asarray(u, dtype=float)
    if u.shape != (sys.dim,):
        raise DimensionMismatch(
            f"point has shape {u.shape}, expected ({sys.dim},)")
    return np.array([_eval_node(c, u) for c in sys.components])


def _eval_node_many(node: Node, U: np.ndarray) -> np.ndarray:
    k = node.kind
    n = U.shape[0]
    if k == "const":
        return np.full(n, node.value)
    if k == "var":
        return U[:, node.index]
    if k == "placeholder":
        raise PlaceholderPresent("cannot evaluate a placeholder leaf")
    if k in UNARY_OPS:
        x = _eval_node_many(node.children[0], U)
        if k == "sin":
            return np.sin(x)
        if k == "cos":
            return np.cos(x)
        return -x
    a = _eval_node_many(node.children[0], U)
    b = _eval_node_many(node.children[1], U)
    with np.errstate(all="ignore"):
        if k == "add":
            return a + b
        if k == "sub":
            return a - b
        if k == "mul":
            return a * b
        if k == "div":
            return np.where(b == 0.0, np.nan, a / np.where(b == 0.0, 1.0, b))
        out = np.float_power(np.abs(a), b)
        # real-valued pow: negative base only well-defined for integer
        # exponents; mark the rest as domain failures
        int_exp = b == np.round(b)
        sign = np.where((a < 0) & int_exp & (np.round(b) % 2 == 1), -1.0, 1.0)
        out = np.where((a < 0) & ~int_exp, np.nan, sign * out)
        return out


def evaluate_many(sys: SystemExpr, U: np.ndarray) -> np.ndarray:
    """Vectorized evaluation at points U of shape (n, d).

    Rows where evaluation fails (division by zero, overflow, invalid pow)
    come back as NaN/inf instead of raising; callers filter non-finite rows.
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != sys.dim:
        raise DimensionMismatch(
            f"points have shape {U.shape}, expected (n, {sys.dim})")
    return np.stack([_eval_node_many(c, U) for c in sys.components], axis=1)


def _source(node: Node) -> str:
    k = node.kind
    if k == "const":
        return repr(node.value)
    if k == "var":
        return f"u{node.index}"
    if k == "placeholder":
        raise PlaceholderPresent("cannot compile a placeholder leaf")
    if k in UNARY_OPS:
        inner = _source(node.children[0])
        if k == "neg":
            return f"(-{inner})"
        return f"_{k}({inner})"
    a, b = (_source(c) for c in node.children)
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "**"}[k]
    return f"({a}{sym}{b})"


def compile_system(sys: SystemExpr):
    """Build a fast scalar callable f(u: array(d)) -> array(d).

    Exceptions and non-finite values from pathological states are the
    caller's concern (the integrator treats them as step failures).
    """
    args = ", ".join(f"u{i}" for i in range(sys.dim))
    body = ", ".join(_source(c) for c in sys.components)
    src = f"def _f({args}):\n    return ({body},)"
    ns = {"_sin": math.sin, "_cos": math.cos}
    exec(src, ns)  # noqa: S102 - generated from our own validated AST
    scalar = ns["_f"]

    def f(u):
        return np.array(scalar(*u))

    return f


def to_infix(node: Node) -> str:
    """Human-readable infix rendering (display only, never parsed back)."""
    k = node.kind
    if k == "const":
        return f"{node.value:g}"
    if k == "var":
        return f"u_{node.index + 1}"
    if k == "placeholder":
        return "<c>"
    if k == "sin" or k == "cos":
        return f"{k}({to_infix(node.children[0])})"
    if k == "neg":
        return f"-({to_infix(node.children[0])})"
    a, b = (to_infix(c) for c in node.children)
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}.get(k)
    if k == "pow":
        return f"({a})^({b})"
    return f"({a} {sym} {b})"


def system_to_infix(sys: SystemExpr) -> list[str]:
    return [f"u_{i + 1}' = {to_infix(c)}"
            for i, c in enumerate(sys.components)]
