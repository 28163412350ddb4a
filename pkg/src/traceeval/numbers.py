"""Percentage arithmetic shared by the reporting tables."""

from __future__ import annotations

from fractions import Fraction


def percent(numerator: float | Fraction, denominator: float | Fraction) -> float:
    """Return ``numerator / denominator * 100`` rounded to one decimal.

    The quotient is formed exactly and rounded half to even, so a tally and
    its mirror image always sum to 100.0 (38.5/40 -> 96.2, 1.5/40 -> 3.8).
    Inputs go through :class:`~fractions.Fraction`, which is exact for ints
    and binary floats.
    """
    den = Fraction(denominator)
    if den == 0:
        raise ZeroDivisionError("percentage of an empty total")
    tenths = round(Fraction(numerator) / den * 1000)  # Fraction.__round__ is half-even
    return tenths / 10


def fmt_pct(value: float | None) -> str:
    if value is None:
        return "n/a"
    return f"{value:.1f}"
