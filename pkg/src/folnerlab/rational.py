"""Exact rational parsing used for every epsilon and constant."""

from __future__ import annotations

from fractions import Fraction
from numbers import Rational


def to_fraction(value) -> Fraction:
    """Parse ``value`` exactly.

    Integers, fractions and strings such as ``"1/8"`` or ``"0.125"`` are
    accepted.  Floats go through their shortest decimal repr, so ``0.1``
    becomes ``1/10`` rather than the binary approximation.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, (Fraction, Rational, int)):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot read {value!r} as an exact rational")


def fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"
