"""Base-10 tokenization of floating point constants.

A finite real is rendered as three words: a sign ("+" or "-"), a
fixed-width mantissa ("260"), and a power-of-ten exponent ("E-2"), so
that value = sign * mantissa * 10^exponent.  With mantissa length 3,
2.6 becomes ("+", "260", "E-2").
"""

from __future__ import annotations

import math

EXP_LIMIT = 100


class ExponentOutOfRange(ValueError):
    """|x| cannot be represented with exponent in [-EXP_LIMIT, EXP_LIMIT]."""


class MalformedTriplet(ValueError):
    pass


def encode_float(x: float, mantissa_len: int = 3) -> tuple[str, str, str]:
    """Encode x as (sign, mantissa, exponent) words.

    The mantissa has exactly `mantissa_len` digits (no leading zero) for
    x != 0; zero is encoded as ("+", "0", "E0").  Relative quantization
    error is at most 0.5 * 10^(1 - mantissa_len).
    """
    if mantissa_len < 1:
        raise ValueError("mantissa_len must be >= 1")
    if not math.isfinite(x):
        raise ValueError("cannot encode non-finite value")
    if x == 0.0:
        return ("+", "0", "E0")
    sign = "+" if x > 0 else "-"
    a = abs(x)
    lo, hi = 10 ** (mantissa_len - 1), 10 ** mantissa_len
    e = math.floor(math.log10(a)) - (mantissa_len - 1)
    m = round(a / 10.0 ** e)
    # rounding can push the mantissa out of its decade
    if m >= hi:
        e += 1
        m = round(a / 10.0 ** e)
    elif m < lo:
        e -= 1
        m = round(a / 10.0 ** e)
        if m >= hi:  # value sits exactly on the decade boundary
            e += 1
            m = round(a / 10.0 ** e)
    if abs(e) > EXP_LIMIT:
        raise ExponentOutOfRange(f"{x!r} needs exponent {e}")
    return (sign, str(m), f"E{e}")


def decode_float(triplet) -> float:
    """Inverse of encode_float: ("+", "260", "E-2") -> 2.6 (exactly)."""
    try:
        sign, mantissa, exponent = triplet
    except (TypeError, ValueError) as exc:
        raise MalformedTriplet(f"expected 3 words, got {triplet!r}") from exc
    if sign not in ("+", "-"):
        raise MalformedTriplet(f"bad sign word {sign!r}")
    if not (mantissa.isdigit() and exponent.startswith("E")):
        raise MalformedTriplet(f"bad triplet {triplet!r}")
    try:
        e = int(exponent[1:])
    except ValueError as exc:
        raise MalformedTriplet(f"bad exponent word {exponent!r}") from exc
    # float() of the decimal literal gives the correctly rounded value
    return float(f"{sign}{int(mantissa)}e{e}")
