"""Corruption operators for symbolic equation inputs.

Three knobs, mirroring the experiment settings: replacing every constant
with a placeholder ("skeleton" inputs), deleting one additive term per
component with some probability, and adding a random erroneous term per
component with some probability.  Deletion/addition require components
in additive-term normal form: a right-associated chain of `add` nodes
whose terms contain no further `add`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import (Node, SystemExpr, add_terms, const, cos, mul, placeholder,
                   pow_, sin, var)


class NotInAdditiveForm(ValueError):
    pass


@dataclass(frozen=True)
class CorruptionConfig:
    unknown_coefficients: bool = False
    term_deletion: float = 0.0
    term_addition: float = 0.0

    def __post_init__(self):
        for p in (self.term_deletion, self.term_addition):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")

    @property
    def active(self) -> bool:
        return (self.unknown_coefficients or self.term_deletion > 0
                or self.term_addition > 0)


def flatten_terms(comp: Node) -> list[Node]:
    """Split a right-associated additive chain into its terms."""
    terms = []
    node = comp
    while node.kind == "add":
        terms.append(node.children[0])
        node = node.children[1]
    terms.append(node)
    for t in terms:
        if any(n.kind == "add" for n in t.walk()):
            raise NotInAdditiveForm(
                "add node outside the right spine; component is not in "
                "additive-term normal form")
    return terms


def _random_term(dim: int, rng: np.random.Generator) -> Node:
    """Erroneous-term pool: c*u_i, c*u_i*u_j, c*u_i^2, c*sin(u_i), c*cos(u_i)."""
    shape = int(rng.integers(5))
    c = const(float(rng.uniform(-1.0, 1.0)))
    i = int(rng.integers(dim))
    if shape == 0:
        return mul(c, var(i))
    if shape == 1:
        j = int(rng.integers(dim))
        return mul(c, mul(var(i), var(j)))
    if shape == 2:
        return mul(c, pow_(var(i), const(2.0)))
    if shape == 3:
        return mul(c, sin(var(i)))
    return mul(c, cos(var(i)))


def _strip_constants(node: Node) -> Node:
    if node.kind == "const":
        return placeholder()
    if node.is_leaf:
        return node
    return Node(node.kind, children=tuple(_strip_constants(c)
                                          for c in node.children))


def corrupt(sys: SystemExpr, cfg: CorruptionConfig,
            rng: np.random.Generator) -> SystemExpr:
    """Apply the configured corruption; deterministic given the rng state.

    Term deletion never empties a component; placeholder substitution runs
    last so added terms lose their coefficients too.
    """
    components = []
    for comp in sys.components:
        if cfg.term_deletion > 0 or cfg.term_addition > 0:
            terms = flatten_terms(comp)
            if cfg.term_deletion > 0 and rng.random() < cfg.term_deletion \
                    and len(terms) >= 2:
                del terms[int(rng.integers(len(terms)))]
            if cfg.term_addition > 0 and rng.random() < cfg.term_addition:
                terms.append(_random_term(sys.dim, rng))
            comp = add_terms(terms)
        if cfg.unknown_coefficients:
            comp = _strip_constants(comp)
        components.append(comp)
    return SystemExpr(dim=sys.dim, components=tuple(components))
