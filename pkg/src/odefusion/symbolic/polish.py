"""Prefix (Polish) notation serialization of expression systems.

Preorder traversal per component, components joined by the separator
word "|".  Constants expand to sign/mantissa/exponent triplets, so
cos(1.5*u1) + u2^2 - 2.6 serializes as

    add cos mul + 150 E-2 u_1 sub pow u_2 + 200 E-2 + 260 E-2

Prefix notation is parenthesis-free and, with fixed arities, every valid
sequence has exactly one parse.
"""

from __future__ import annotations

from .floats import MalformedTriplet, decode_float, encode_float
from .tree import (BINARY_OPS, MAX_DIM, UNARY_OPS, Node, SystemExpr, const,
                   placeholder, var)
from .vocab import PLACEHOLDER_WORD, SEP_WORD, SIGN_WORDS


class InvalidExpression(ValueError):
    """Token sequence does not decode to a well-formed expression system."""

    def __init__(self, reason: str, position: int | None = None):
        self.reason = reason
        self.position = position
        msg = reason if position is None else f"{reason} (at token {position})"
        super().__init__(msg)


def _node_words(node: Node, mantissa_len: int, out: list[str]) -> None:
    k = node.kind
    if k == "const":
        out.extend(encode_float(node.value, mantissa_len))
    elif k == "var":
        out.append(f"u_{node.index + 1}")
    elif k == "placeholder":
        out.append(PLACEHOLDER_WORD)
    else:
        out.append(k)
        for c in node.children:
            _node_words(c, mantissa_len, out)


def to_polish(sys: SystemExpr, mantissa_len: int = 3) -> list[str]:
    """Serialize a system to its prefix word sequence."""
    out: list[str] = []
    for i, comp in enumerate(sys.components):
        if i:
            out.append(SEP_WORD)
        _node_words(comp, mantissa_len, out)
    return out


def _parse_node(words: list[str], pos: int, base: int) -> tuple[Node, int]:
    if pos >= len(words):
        raise InvalidExpression("truncated expression", base + pos)
    w = words[pos]
    if w in BINARY_OPS:
        a, pos = _parse_node(words, pos + 1, base)
        b, pos = _parse_node(words, pos, base)
        return Node(w, children=(a, b)), pos
    if w in UNARY_OPS:
        a, pos = _parse_node(words, pos + 1, base)
        return Node(w, children=(a,)), pos
    if w in SIGN_WORDS:
        if pos + 2 >= len(words):
            raise InvalidExpression("truncated float triplet", base + pos)
        try:
            v = decode_float((w, words[pos + 1], words[pos + 2]))
        except MalformedTriplet as exc:
            raise InvalidExpression(
                f"malformed float triplet: {exc}", base + pos) from exc
        return const(v), pos + 3
    if w == PLACEHOLDER_WORD:
        return placeholder(), pos + 1
    if w.startswith("u_"):
        try:
            idx = int(w[2:]) - 1
        except ValueError:
            raise InvalidExpression(f"unknown word {w!r}", base + pos) from None
        if not 0 <= idx < MAX_DIM:
            raise InvalidExpression(f"variable {w!r} out of range", base + pos)
        return var(idx), pos + 1
    raise InvalidExpression(f"unexpected word {w!r}", base + pos)


def from_polish(words) -> SystemExpr:
    """Parse a prefix word sequence back into a SystemExpr.

    Accepts arbitrary sequences; raises InvalidExpression for anything
    that is not the serialization of a well-formed system (truncation,
    arity violations, unknown words, leftover tokens, variables out of
    range for the parsed dimension).
    """
    words = list(words)
    if not words:
        raise InvalidExpression("empty sequence")
    segments: list[tuple[int, list[str]]] = []
    start = 0
    for i, w in enumerate(words):
        if w == SEP_WORD:
            segments.append((start, words[start:i]))
            start = i + 1
    segments.append((start, words[start:]))
    dim = len(segments)
    if dim > MAX_DIM:
        raise InvalidExpression(f"{dim} components exceeds maximum {MAX_DIM}")
    components = []
    for base, seg in segments:
        if not seg:
            raise InvalidExpression("empty component", base)
        node, pos = _parse_node(seg, 0, base)
        if pos != len(seg):
            raise InvalidExpression("leftover tokens after component",
                                    base + pos)
        components.append(node)
    for comp in components:
        for n in comp.walk():
            if n.kind == "var" and n.index >= dim:
                raise InvalidExpression(
                    f"variable u_{n.index + 1} out of range for "
                    f"dimension {dim}")
    return SystemExpr(dim=dim, components=tuple(components))
