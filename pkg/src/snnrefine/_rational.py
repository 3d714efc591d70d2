from __future__ import annotations

import math
from fractions import Fraction
from numbers import Rational

from .errors import ParameterError


def as_rational(value, name: str = "value") -> Fraction:
    """Coerce ``value`` to an exact Fraction.

    Floats are refused: 0.1 has no exact binary form and silently becomes
    3602879701896397/36028797018963968, which moves threshold boundaries.
    """
    if isinstance(value, bool):
        raise ParameterError(f"{name}: expected a rational, got bool")
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ParameterError(f"{name}: cannot parse {value!r} as a rational") from exc
    raise ParameterError(f"{name}: expected int, Fraction or 'p/q' string, got {type(value).__name__}")


def int_threshold(tau: Fraction) -> int:
    """Smallest integer n with n >= tau.

    For an integer-valued quantity x, ``x >= tau`` holds iff ``x >= int_threshold(tau)``.
    """
    return math.ceil(tau)


def fmt(q: Fraction) -> str:
    return str(Fraction(q))
