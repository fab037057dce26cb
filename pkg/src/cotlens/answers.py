"""Canonical final-answer comparison.

Answers come out of generated text with incidental decoration: surrounding
whitespace, LaTeX math dollars, leading zeros. Comparison trims whitespace,
drops dollar signs, and tries rational-number equality before falling back
to exact string equality.
"""

from __future__ import annotations

from fractions import Fraction


def canonical_answer(answer: str) -> str:
    """Trimmed, dollar-free form of an extracted answer string."""
    return answer.strip().replace("$", "").strip()


def _as_fraction(s: str) -> Fraction | None:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        return None


def answers_match(a: str, b: str) -> bool:
    """True when two answer strings agree canonically.

    Numeric strings compare as exact rationals, so "060" matches "60" and
    "1/2" matches "0.5". Anything non-numeric must match exactly after
    canonicalization.
    """
    ca, cb = canonical_answer(a), canonical_answer(b)
    fa, fb = _as_fraction(ca), _as_fraction(cb)
    if fa is not None and fb is not None:
        return fa == fb
    return ca == cb
