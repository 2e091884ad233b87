"""
Piecewise-linear interval maps and exact interval-set arithmetic.

Points are Fractions whenever the inputs allow it (integer slopes, rational
breakpoints and holes) and floats otherwise. Every interval is half-open
[lo, hi); a branch value at its right endpoint is the right-continuous limit.
"""

from __future__ import annotations

import bisect
import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Union

import numpy as np

from .errors import ValidationError

Number = Union[Fraction, float]

SNAP_TOLERANCE = 1e-13

_ZERO = Fraction(0)
_ONE = Fraction(1)


def exact(value: object) -> Number:
    """
    Convert a config or user value to the exact number type used by the engines.

    Integers and rational strings become Fractions; anything else becomes a float.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValidationError(f"Expected a number, got {value!r}", value)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            try:
                return float(value)
            except ValueError:
                raise ValidationError(f"Expected a number, got {value!r}", value)
    if isinstance(value, float):
        return value
    raise ValidationError(f"Expected a number, got {value!r}", value)


def _is_exact(*values: Number) -> bool:
    return all(isinstance(v, Fraction) for v in values)


def _touches(left_hi: Number, right_lo: Number) -> bool:
    """True when an interval ending at left_hi and one starting at right_lo must merge."""
    if _is_exact(left_hi, right_lo):
        return right_lo <= left_hi
    return float(right_lo) - float(left_hi) <= SNAP_TOLERANCE


def _clip_unit(lo: Number, hi: Number) -> tuple[Number, Number]:
    if lo <= 0 or (not isinstance(lo, Fraction) and lo <= SNAP_TOLERANCE):
        lo = _ZERO
    if hi >= 1 or (not isinstance(hi, Fraction) and hi >= 1 - SNAP_TOLERANCE):
        hi = _ONE
    return lo, hi


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open interval [lo, hi) inside [0, 1]."""

    lo: Number
    hi: Number

    def __post_init__(self) -> None:
        if not (0 <= self.lo < self.hi <= 1):
            raise ValidationError(f"Invalid interval [{self.lo}, {self.hi})", self)

    @property
    def length(self) -> Number:
        return self.hi - self.lo

    def contains(self, x: Number) -> bool:
        return self.lo <= x < self.hi


@dataclass(frozen=True)
class IntervalSet:
    """
    Finite union of disjoint, non-touching half-open intervals, sorted by position.

    Build instances with from_pairs(), which clips to [0, 1], drops empty pieces and
    merges overlapping or touching ones. The direct constructor only checks the
    invariant.
    """

    intervals: tuple[Interval, ...] = ()

    def __post_init__(self) -> None:
        for left, right in zip(self.intervals, self.intervals[1:]):
            if not left.hi < right.lo:
                raise ValidationError(
                    f"Intervals must be sorted and separated: {left} then {right}", self
                )

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Number, Number]]) -> IntervalSet:
        cleaned = []
        for lo, hi in pairs:
            lo, hi = _clip_unit(lo, hi)
            if hi > lo:
                cleaned.append((lo, hi))
        cleaned.sort()

        merged: list[list[Number]] = []
        for lo, hi in cleaned:
            if merged and _touches(merged[-1][1], lo):
                if hi > merged[-1][1]:
                    merged[-1][1] = hi
            else:
                merged.append([lo, hi])
        return cls(tuple(Interval(lo, hi) for lo, hi in merged))

    @classmethod
    def empty(cls) -> IntervalSet:
        return cls(())

    @classmethod
    def full(cls) -> IntervalSet:
        return cls((Interval(_ZERO, _ONE),))

    @classmethod
    def single(cls, lo: Number, hi: Number) -> IntervalSet:
        return cls.from_pairs([(lo, hi)])

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def __iter__(self) -> Iterator[Interval]:
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def __bool__(self) -> bool:
        return bool(self.intervals)

    @cached_property
    def total_length(self) -> Number:
        if _is_exact(*(iv.lo for iv in self.intervals), *(iv.hi for iv in self.intervals)):
            return sum((iv.length for iv in self.intervals), _ZERO)
        return math.fsum(float(iv.hi) - float(iv.lo) for iv in self.intervals)

    @property
    def endpoints(self) -> list[Number]:
        return [p for iv in self.intervals for p in (iv.lo, iv.hi)]

    def contains(self, x: Number) -> bool:
        i = bisect.bisect_right([iv.lo for iv in self.intervals], x) - 1
        return i >= 0 and self.intervals[i].contains(x)

    def contains_array(self, x: np.ndarray) -> np.ndarray:
        """Vectorised membership test for float points."""
        if not self.intervals:
            return np.zeros(np.shape(x), dtype=bool)
        lows = np.array([float(iv.lo) for iv in self.intervals])
        highs = np.array([float(iv.hi) for iv in self.intervals])
        i = np.searchsorted(lows, x, side="right") - 1
        return (i >= 0) & (x < highs[np.maximum(i, 0)])

    def pairs(self) -> list[tuple[Number, Number]]:
        return [(iv.lo, iv.hi) for iv in self.intervals]

    def to_rows(self) -> list[tuple[float, float]]:
        """Rows for the `lo,hi` CSV dump."""
        return [(float(iv.lo), float(iv.hi)) for iv in self.intervals]

    # ------------------------------------------------------------------
    # Set algebra
    # ------------------------------------------------------------------

    def union(self, other: IntervalSet) -> IntervalSet:
        return IntervalSet.from_pairs(self.pairs() + other.pairs())

    def intersection(self, other: IntervalSet) -> IntervalSet:
        out = []
        a, b = self.intervals, other.intervals
        i = j = 0
        while i < len(a) and j < len(b):
            lo = max(a[i].lo, b[j].lo)
            hi = min(a[i].hi, b[j].hi)
            if lo < hi:
                out.append((lo, hi))
            if a[i].hi < b[j].hi:
                i += 1
            else:
                j += 1
        return IntervalSet.from_pairs(out)

    def complement(self) -> IntervalSet:
        gaps = []
        cursor: Number = _ZERO
        for iv in self.intervals:
            if iv.lo > cursor:
                gaps.append((cursor, iv.lo))
            cursor = iv.hi
        if cursor < 1:
            gaps.append((cursor, _ONE))
        return IntervalSet.from_pairs(gaps)

    def difference(self, other: IntervalSet) -> IntervalSet:
        return self.intersection(other.complement())

    def issubset(self, other: IntervalSet, tolerance: float = 0.0) -> bool:
        return self.difference(other).total_length <= tolerance

    __and__ = intersection
    __or__ = union
    __sub__ = difference


@dataclass(frozen=True)
class Branch:
    """Monotone affine branch x -> slope * x + intercept on a half-open domain."""

    domain: Interval
    slope: Number
    intercept: Number

    def __post_init__(self) -> None:
        if self.slope == 0:
            raise ValidationError("Branch slope must be nonzero", self)

    def __call__(self, x: Number) -> Number:
        return self.slope * x + self.intercept

    @property
    def increasing(self) -> bool:
        return self.slope > 0

    @property
    def abs_slope(self) -> Number:
        return abs(self.slope)

    @cached_property
    def image_bounds(self) -> tuple[Number, Number]:
        a, b = self(self.domain.lo), self(self.domain.hi)
        return (a, b) if a <= b else (b, a)

    @property
    def image(self) -> Interval:
        lo, hi = _clip_unit(*self.image_bounds)
        return Interval(lo, hi)

    @property
    def is_full(self) -> bool:
        lo, hi = self.image_bounds
        if _is_exact(lo, hi):
            return lo == 0 and hi == 1
        return abs(float(lo)) <= SNAP_TOLERANCE and abs(float(hi) - 1) <= SNAP_TOLERANCE

    def preimage(self, y: Number) -> Number:
        return (y - self.intercept) / self.slope

    def pull(self, lo: Number, hi: Number) -> tuple[Number, Number] | None:
        """Part of the domain mapped into [lo, hi), or None."""
        img_lo, img_hi = self.image_bounds
        a, b = max(lo, img_lo), min(hi, img_hi)
        if not a < b:
            return None
        x1, x2 = self.preimage(a), self.preimage(b)
        if x1 > x2:
            x1, x2 = x2, x1
        x1, x2 = max(x1, self.domain.lo), min(x2, self.domain.hi)
        return (x1, x2) if x1 < x2 else None

    def push(self, lo: Number, hi: Number) -> tuple[Number, Number] | None:
        """Image of [lo, hi) intersected with the domain, or None."""
        a, b = max(lo, self.domain.lo), min(hi, self.domain.hi)
        if not a < b:
            return None
        ya, yb = self(a), self(b)
        return (ya, yb) if ya <= yb else (yb, ya)


@dataclass(frozen=True)
class Piece:
    """An interval carrying the derivative product accumulated along a pullback."""

    lo: Number
    hi: Number
    jacobian: Number = _ONE

    @property
    def length(self) -> Number:
        return self.hi - self.lo


@dataclass(frozen=True)
class PiecewiseLinearMap:
    """
    A fiber map: monotone affine branches whose domains partition [0, 1).

    Attributes:
        branches: Branches ordered by domain.
        preset: Preset tag (beta, linear_full, three_branch, beta_shift, custom).
        parameters: Preset parameters, for reports.
    """

    branches: tuple[Branch, ...]
    preset: str = "custom"
    parameters: tuple[tuple[str, Number], ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.branches:
            raise ValidationError("A map needs at least one branch", self)
        first, last = self.branches[0].domain, self.branches[-1].domain
        if first.lo != 0 or last.hi != 1:
            raise ValidationError("Branch domains must cover [0, 1)", self)
        for left, right in zip(self.branches, self.branches[1:]):
            if not _touches(left.domain.hi, right.domain.lo) or right.domain.lo < left.domain.hi:
                raise ValidationError(
                    f"Branch domains must partition [0, 1): gap or overlap at {left.domain.hi}",
                    self,
                )
        for branch in self.branches:
            lo, hi = branch.image_bounds
            if lo < -SNAP_TOLERANCE or hi > 1 + SNAP_TOLERANCE:
                raise ValidationError(f"Branch image [{lo}, {hi}) leaves [0, 1]", branch)
        images = IntervalSet.from_pairs(
            (b.image.lo, b.image.hi) for b in self.branches
        )
        if abs(float(images.total_length) - 1.0) > SNAP_TOLERANCE:
            raise ValidationError("Map is not surjective onto [0, 1)", self)

    def __str__(self) -> str:
        if self.parameters:
            args = ", ".join(f"{k}={v}" for k, v in self.parameters)
            return f"{self.preset}({args})"
        return f"{self.preset}({len(self.branches)} branches)"

    @cached_property
    def _starts(self) -> list[Number]:
        return [b.domain.lo for b in self.branches]

    @property
    def breakpoints(self) -> list[Number]:
        """Interior branch endpoints."""
        return [b.domain.lo for b in self.branches[1:]]

    @property
    def full_branches(self) -> list[int]:
        return [i for i, b in enumerate(self.branches) if b.is_full]

    @property
    def is_expanding(self) -> bool:
        return all(b.abs_slope > 1 for b in self.branches)

    @property
    def is_exact(self) -> bool:
        return all(_is_exact(b.slope, b.intercept, b.domain.lo, b.domain.hi) for b in self.branches)

    def branch_index(self, x: Number) -> int:
        if not 0 <= x < 1:
            raise ValidationError(f"Point {x} outside [0, 1)", x)
        return bisect.bisect_right(self._starts, x) - 1

    def evaluate(self, x: Number) -> Number:
        return self.branches[self.branch_index(x)](x)

    def derivative_magnitude(self, x: Number) -> Number:
        return self.branches[self.branch_index(x)].abs_slope

    def evaluate_array(self, x: np.ndarray) -> np.ndarray:
        """Float evaluation on an array of points in [0, 1), kept inside [0, 1)."""
        starts = np.array([float(s) for s in self._starts])
        slopes = np.array([float(b.slope) for b in self.branches])
        intercepts = np.array([float(b.intercept) for b in self.branches])
        i = np.clip(np.searchsorted(starts, x, side="right") - 1, 0, len(starts) - 1)
        y = slopes[i] * x + intercepts[i]
        return np.clip(y, 0.0, np.nextafter(1.0, 0.0))

    def preimage_points(self, y: Number) -> list[tuple[Number, int]]:
        """One preimage of y per branch whose image contains it, as (point, branch id)."""
        points = []
        for i, branch in enumerate(self.branches):
            x = branch.preimage(y)
            dom = branch.domain
            if dom.lo <= x < dom.hi or (y >= 1 and x == dom.hi):
                points.append((x, i))
        return points

    def pullback(self, target: IntervalSet) -> IntervalSet:
        pieces = []
        for branch in self.branches:
            for iv in target:
                pulled = branch.pull(iv.lo, iv.hi)
                if pulled is not None:
                    pieces.append(pulled)
        return IntervalSet.from_pairs(pieces)

    def image(self, source: IntervalSet) -> IntervalSet:
        pieces = []
        for branch in self.branches:
            for iv in source:
                pushed = branch.push(iv.lo, iv.hi)
                if pushed is not None:
                    pieces.append(pushed)
        return IntervalSet.from_pairs(pieces)

    def pullback_pieces(self, pieces: Sequence[Piece]) -> list[Piece]:
        """Pull pieces back one step, multiplying each jacobian by the branch |slope|."""
        out = []
        for branch in self.branches:
            for piece in pieces:
                pulled = branch.pull(piece.lo, piece.hi)
                if pulled is not None:
                    out.append(Piece(pulled[0], pulled[1], piece.jacobian * branch.abs_slope))
        out.sort(key=lambda p: p.lo)
        return out


# ----------------------------------------------------------------------
# Presets
# ----------------------------------------------------------------------


def _branch(lo: Number, hi: Number, slope: Number, intercept: Number) -> Branch:
    return Branch(Interval(lo, hi), slope, intercept)


def linear_full(k: int) -> PiecewiseLinearMap:
    """x -> k x mod 1 with k full increasing branches."""
    k = int(exact(k)) if exact(k) == int(exact(k)) else 0
    if k < 2:
        raise ValidationError(f"linear_full needs k >= 2, got {k}", k)
    kk = Fraction(k)
    branches = tuple(_branch(i / kk, (i + 1) / kk, kk, Fraction(-i)) for i in range(k))
    return PiecewiseLinearMap(branches, "linear_full", (("k", kk),))


def doubling() -> PiecewiseLinearMap:
    return linear_full(2)


def beta_map(beta: object) -> PiecewiseLinearMap:
    """
    The beta-transformation x -> beta x mod 1.

    For non-integer beta the last branch is short: its image is [0, beta - floor(beta)).
    """
    b = exact(beta)
    if b <= 1:
        raise ValidationError(f"beta must exceed 1, got {b}", b)
    whole = math.floor(b)
    branches = []
    for i in range(whole):
        hi = (i + 1) / b
        if hi > 1:
            hi = _ONE
        branches.append(_branch(i / b, hi, b, -i if isinstance(b, float) else Fraction(-i)))
    if whole / b < 1:
        intercept = -whole if isinstance(b, float) else Fraction(-whole)
        branches.append(_branch(whole / b, _ONE, b, intercept))
    return PiecewiseLinearMap(tuple(branches), "beta", (("beta", b),))


def three_branch(s: object) -> PiecewiseLinearMap:
    """
    Three full branches around the central fixed point 1/2.

    The central branch has slope s and fixes 1/2; the two outer branches are decreasing
    with slope -1/a where a = (1 - 1/s) / 2 is the width of each outer domain.
    """
    s = exact(s)
    if s <= 1:
        raise ValidationError(f"three_branch needs s > 1, got {s}", s)
    a = (1 - 1 / s) / 2
    left = _branch(0 * a, a, -1 / a, 1 + 0 * a)
    center = _branch(a, 1 - a, s, -(s - 1) / 2)
    right = _branch(1 - a, 1 + 0 * a, -1 / a, 1 / a)
    return PiecewiseLinearMap((left, center, right), "three_branch", (("s", s),))


def beta_shift(beta: object, shift: object) -> PiecewiseLinearMap:
    """x -> beta x + shift mod 1, with shift in [0, 1)."""
    b, r = exact(beta), exact(shift)
    if b <= 1:
        raise ValidationError(f"beta must exceed 1, got {b}", b)
    if not 0 <= r < 1:
        raise ValidationError(f"shift must lie in [0, 1), got {r}", r)
    cuts = [(i - r) / b for i in range(1, math.floor(b + r) + 1)]
    cuts = [c for c in cuts if 0 < c < 1]
    edges = [0 * b, *cuts, _ONE]
    branches = tuple(
        _branch(edges[i], edges[i + 1], b, r - i) for i in range(len(edges) - 1)
    )
    return PiecewiseLinearMap(branches, "beta_shift", (("beta", b), ("shift", r)))


def custom_map(branches: Iterable[tuple[object, object, object, object]]) -> PiecewiseLinearMap:
    """Explicit branch list of (lo, hi, slope, intercept) tuples."""
    built = tuple(
        _branch(exact(lo), exact(hi), exact(slope), exact(intercept))
        for lo, hi, slope, intercept in branches
    )
    return PiecewiseLinearMap(built, "custom")


PRESETS = {
    "doubling": doubling,
    "beta": beta_map,
    "linear_full": linear_full,
    "three_branch": three_branch,
    "beta_shift": beta_shift,
}
