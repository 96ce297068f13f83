"""Prefix-freeness and Kraft-McMillan checks over enumerated codewords."""
from __future__ import annotations

from fractions import Fraction


def is_prefix_free(codewords) -> bool:
    words = sorted(tuple(w) for w in codewords)
    # after lexicographic sorting a prefix sits directly before some extension of it
    return all(words[i + 1][:len(words[i])] != words[i] for i in range(len(words) - 1))


def kraft_sum(codewords) -> Fraction:
    return sum((Fraction(1, 2 ** len(w)) for w in {tuple(w) for w in codewords}), Fraction(0))


def kraft_check(codewords) -> dict:
    """Exact Kraft sum and prefix-freeness of distinct codewords."""
    words = {tuple(w) for w in codewords}
    s = kraft_sum(words)
    prefix_free = is_prefix_free(words)
    return {"codewords": len(words), "kraft_sum": float(s), "kraft_ok": s <= 1,
            "prefix_free": prefix_free, "passed": prefix_free and s <= 1}
