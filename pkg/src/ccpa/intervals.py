"""Real intervals with explicit open/closed endpoint bookkeeping.

Reachability results in this package mix open and closed ends (a guard
``x > 9.9`` produces an open lower bound, while ``x <= 10.1`` produces a
closed upper one), so every bound carries its own openness flag.
Comparisons use a global tolerance ``EPS`` so that endpoint arithmetic in
double precision stays stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EPS = 1e-9

INF = math.inf


def _lt(a: float, b: float) -> bool:
    return a < b - EPS


def _le(a: float, b: float) -> bool:
    return a <= b + EPS


def close(a: float, b: float) -> bool:
    """Endpoint equality up to the global tolerance."""
    if a == b:
        return True
    if math.isinf(a) or math.isinf(b):
        return False
    return abs(a - b) <= EPS


@dataclass(frozen=True)
class Interval:
    """A non-empty real interval with per-bound openness."""

    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def __post_init__(self) -> None:
        if self.is_empty_raw():
            raise ValueError(f"empty interval: {self}")

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def point(v: float) -> "Interval":
        return Interval(v, v)

    @staticmethod
    def closed(lo: float, hi: float) -> "Interval":
        return Interval(lo, hi)

    @staticmethod
    def make(lo: float, hi: float, lo_open: bool, hi_open: bool) -> "Interval | None":
        """Build an interval, returning None when it would be empty."""
        if lo > hi + EPS:
            return None
        if close(lo, hi):
            if lo_open or hi_open:
                return None
            return Interval(lo, hi, False, False)
        return Interval(lo, hi, lo_open, hi_open)

    def is_empty_raw(self) -> bool:
        if self.lo > self.hi + EPS:
            return True
        if close(self.lo, self.hi) and (self.lo_open or self.hi_open):
            return True
        return False

    # -- predicates ------------------------------------------------------------

    def is_point(self) -> bool:
        return close(self.lo, self.hi)

    def contains(self, v: float) -> bool:
        if self.lo_open:
            if not _lt(self.lo, v):
                return False
        elif not _le(self.lo, v):
            return False
        if self.hi_open:
            if not _lt(v, self.hi):
                return False
        elif not _le(v, self.hi):
            return False
        return True

    def contains_interval(self, other: "Interval") -> bool:
        lo_ok = _lt(self.lo, other.lo) or (
            close(self.lo, other.lo) and (other.lo_open or not self.lo_open)
        )
        hi_ok = _lt(other.hi, self.hi) or (
            close(other.hi, self.hi) and (other.hi_open or not self.hi_open)
        )
        return lo_ok and hi_ok

    # -- arithmetic ------------------------------------------------------------

    def shift(self, c: float) -> "Interval":
        return Interval(self.lo + c, self.hi + c, self.lo_open, self.hi_open)

    def add(self, other: "Interval") -> "Interval":
        return Interval(
            self.lo + other.lo,
            self.hi + other.hi,
            self.lo_open or other.lo_open,
            self.hi_open or other.hi_open,
        )

    def neg(self) -> "Interval":
        return Interval(-self.hi, -self.lo, self.hi_open, self.lo_open)

    def sub(self, other: "Interval") -> "Interval":
        return self.add(other.neg())

    def scale(self, k: float) -> "Interval":
        if k == 0:
            return Interval.point(0.0)
        if k > 0:
            return Interval(self.lo * k, self.hi * k, self.lo_open, self.hi_open)
        return Interval(self.hi * k, self.lo * k, self.hi_open, self.lo_open)

    def mul(self, other: "Interval") -> "Interval":
        cands = [
            (self.lo * other.lo, self.lo_open or other.lo_open),
            (self.lo * other.hi, self.lo_open or other.hi_open),
            (self.hi * other.lo, self.hi_open or other.lo_open),
            (self.hi * other.hi, self.hi_open or other.hi_open),
        ]
        lo = min(c[0] for c in cands)
        hi = max(c[0] for c in cands)
        lo_open = all(c[1] for c in cands if close(c[0], lo))
        hi_open = all(c[1] for c in cands if close(c[0], hi))
        return Interval(lo, hi, lo_open, hi_open)

    def min_with(self, other: "Interval") -> "Interval":
        if _le(self.hi, other.lo):
            return self
        if _le(other.hi, self.lo):
            return other
        if close(self.lo, other.lo):
            lo, lo_open = self.lo, self.lo_open and other.lo_open
        elif self.lo < other.lo:
            lo, lo_open = self.lo, self.lo_open
        else:
            lo, lo_open = other.lo, other.lo_open
        if close(self.hi, other.hi):
            hi, hi_open = self.hi, self.hi_open or other.hi_open
        elif self.hi < other.hi:
            hi, hi_open = self.hi, self.hi_open
        else:
            hi, hi_open = other.hi, other.hi_open
        return Interval(lo, hi, lo_open, hi_open)

    def max_with(self, other: "Interval") -> "Interval":
        return self.neg().min_with(other.neg()).neg()

    # -- lattice ---------------------------------------------------------------

    def intersect(self, other: "Interval") -> "Interval | None":
        if close(self.lo, other.lo):
            lo, lo_open = self.lo, self.lo_open or other.lo_open
        elif self.lo > other.lo:
            lo, lo_open = self.lo, self.lo_open
        else:
            lo, lo_open = other.lo, other.lo_open
        if close(self.hi, other.hi):
            hi, hi_open = self.hi, self.hi_open or other.hi_open
        elif self.hi < other.hi:
            hi, hi_open = self.hi, self.hi_open
        else:
            hi, hi_open = other.hi, other.hi_open
        return Interval.make(lo, hi, lo_open, hi_open)

    def hull(self, other: "Interval") -> "Interval":
        if close(self.lo, other.lo):
            lo, lo_open = self.lo, self.lo_open and other.lo_open
        elif self.lo < other.lo:
            lo, lo_open = self.lo, self.lo_open
        else:
            lo, lo_open = other.lo, other.lo_open
        if close(self.hi, other.hi):
            hi, hi_open = self.hi, self.hi_open and other.hi_open
        elif self.hi > other.hi:
            hi, hi_open = self.hi, self.hi_open
        else:
            hi, hi_open = other.hi, other.hi_open
        return Interval(lo, hi, lo_open, hi_open)

    def touches(self, other: "Interval") -> bool:
        """True when the union of the two intervals is again an interval."""
        a, b = (self, other) if self.lo <= other.lo else (other, self)
        if _lt(a.hi, b.lo):
            return False
        if close(a.hi, b.lo) and a.hi_open and b.lo_open:
            return False
        return True

    def split_le(self, c: float) -> "tuple[Interval | None, Interval | None]":
        """Partition at constant c: (part with v <= c, part with v > c)."""
        low = self.intersect(Interval(-INF, c, True, False))
        high = self.intersect(Interval(c, INF, True, True))
        return low, high

    def split_lt(self, c: float) -> "tuple[Interval | None, Interval | None]":
        """Partition at constant c: (part with v < c, part with v >= c)."""
        low = self.intersect(Interval(-INF, c, True, True))
        high = self.intersect(Interval(c, INF, False, True))
        return low, high

    def sample_points(self, n: int) -> list[float]:
        """n representative points including both endpoints (for grids)."""
        if self.is_point() or n <= 1:
            return [self.lo]
        return [self.lo + (self.hi - self.lo) * i / (n - 1) for i in range(n)]

    def __str__(self) -> str:
        lb = "(" if self.lo_open else "["
        rb = ")" if self.hi_open else "]"
        return f"{lb}{self.lo:g}, {self.hi:g}{rb}"


def union_all(intervals: list[Interval], cap: int = 64) -> list[Interval]:
    """Normalise to a sorted list of maximal disjoint intervals.

    Beyond ``cap`` pieces the nearest neighbours are hulled together, which
    keeps the result a sound over-approximation.
    """
    if not intervals:
        return []
    parts = sorted(intervals, key=lambda iv: (iv.lo, iv.lo_open))
    out: list[Interval] = [parts[0]]
    for iv in parts[1:]:
        if out[-1].touches(iv):
            out[-1] = out[-1].hull(iv)
        else:
            out.append(iv)
    while len(out) > cap:
        gaps = [(out[i + 1].lo - out[i].hi, i) for i in range(len(out) - 1)]
        _, i = min(gaps)
        out[i : i + 2] = [out[i].hull(out[i + 1])]
    return out
