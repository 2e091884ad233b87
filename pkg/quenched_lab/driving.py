"""
Driving systems: reproducible two-sided sequences of fiber symbols.

A DrivingSystem describes the base map (i.i.d. coin, coded irrational rotation,
periodic word or constant symbol). fiber_sequence() materialises the symbols on an
index window [-backward, forward] as an immutable FiberOrbit.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

KINDS = ("iid", "rotation", "periodic", "constant")

# Rotation numbers are stored as p/q with q at least this large.
MIN_ROTATION_DENOMINATOR = 10**6
_MAX_ROTATION_DENOMINATOR = 10**9

# Stream ids for the forward and backward halves of an i.i.d. sequence.
_FORWARD_STREAM = 0
_BACKWARD_STREAM = 1


@dataclass(frozen=True)
class DrivingSystem:
    """
    Seedable ergodic base system over symbols 0..symbols-1.

    Use the iid(), rotation(), periodic() and constant() constructors; `offset`
    counts applications of shift().
    """

    kind: str
    symbols: int
    probabilities: tuple[float, ...] = ()
    seed: int = 0
    alpha: Fraction = Fraction(0)
    cuts: tuple[float, ...] = ()
    initial_angle: float = 0.0
    word: tuple[int, ...] = ()
    constant_symbol: int = 0
    offset: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"Unknown driving kind '{self.kind}'", self)
        if self.symbols < 1:
            raise ValidationError("Driving needs at least one symbol", self)

        if self.kind == "iid":
            p = np.asarray(self.probabilities, dtype=float)
            if len(p) != self.symbols or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValidationError(
                    f"IID probabilities must be positive and sum to 1, got {self.probabilities}",
                    self,
                )
        elif self.kind == "rotation":
            if self.alpha.denominator < MIN_ROTATION_DENOMINATOR:
                raise ValidationError(
                    f"Rotation number {self.alpha} has denominator below "
                    f"{MIN_ROTATION_DENOMINATOR}; it is too close to rational",
                    self,
                )
            if len(self.cuts) != self.symbols - 1 or list(self.cuts) != sorted(self.cuts):
                raise ValidationError("Rotation arcs must be given by sorted cut points", self)
            if any(not 0 < c < 1 for c in self.cuts) or len(set(self.cuts)) != len(self.cuts):
                raise ValidationError("Rotation arcs must be disjoint and cover the circle", self)
        elif self.kind == "periodic":
            if not self.word:
                raise ValidationError("Periodic driving needs a nonempty word", self)
            if any(not 0 <= s < self.symbols for s in self.word):
                raise ValidationError(f"Periodic word {self.word} uses unknown symbols", self)
        elif not 0 <= self.constant_symbol < self.symbols:
            raise ValidationError(f"Constant symbol {self.constant_symbol} out of range", self)

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def iid(cls, probabilities: Sequence[float], seed: int = 0) -> DrivingSystem:
        probs = tuple(float(p) for p in probabilities)
        return cls("iid", len(probs), probabilities=probs, seed=int(seed))

    @classmethod
    def rotation(
        cls, alpha: float | Fraction, cuts: Sequence[float], initial_angle: float = 0.0
    ) -> DrivingSystem:
        """
        Irrational rotation coded by arcs.

        Args:
            alpha: Rotation number; approximated by p/q with q in [10^6, 10^9].
            cuts: Interior arc boundaries 0 < c_1 < ... < c_{k-1} < 1; arc i is
                [c_i, c_{i+1}) with c_0 = 0 and c_k = 1.
            initial_angle: Position of the origin fiber on the circle.
        """
        approx = Fraction(alpha).limit_denominator(_MAX_ROTATION_DENOMINATOR)
        approx = Fraction(approx.numerator % approx.denominator, approx.denominator)
        return cls(
            "rotation",
            len(cuts) + 1,
            alpha=approx,
            cuts=tuple(float(c) for c in cuts),
            initial_angle=float(initial_angle) % 1.0,
        )

    @classmethod
    def periodic(cls, word: Sequence[int]) -> DrivingSystem:
        w = tuple(int(s) for s in word)
        return cls("periodic", max(w) + 1 if w else 1, word=w)

    @classmethod
    def constant(cls, symbol: int = 0) -> DrivingSystem:
        return cls("constant", int(symbol) + 1, constant_symbol=int(symbol))

    def shift(self, steps: int = 1) -> DrivingSystem:
        """The driving system started at sigma^steps(omega)."""
        return replace(self, offset=self.offset + steps)

    @property
    def marginals(self) -> np.ndarray:
        """Stationary symbol weights m({omega_0 = s})."""
        if self.kind == "iid":
            return np.asarray(self.probabilities)
        if self.kind == "rotation":
            edges = np.concatenate(([0.0], self.cuts, [1.0]))
            return np.diff(edges)
        if self.kind == "periodic":
            counts = np.bincount(self.word, minlength=self.symbols)
            return counts / len(self.word)
        weights = np.zeros(self.symbols)
        weights[self.constant_symbol] = 1.0
        return weights

    # ------------------------------------------------------------------
    # Symbol generation
    # ------------------------------------------------------------------

    def _iid_stream(self, stream: int, count: int) -> np.ndarray:
        if count <= 0:
            return np.zeros(0, dtype=np.int64)
        seq = np.random.SeedSequence(self.seed, spawn_key=(stream,))
        rng = np.random.default_rng(seq)
        cdf = np.cumsum(self.probabilities)
        cdf[-1] = 1.0
        u = rng.random(count)
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.symbols - 1)

    def symbols_between(self, lo: int, hi: int) -> np.ndarray:
        """Symbols for fiber indices lo..hi inclusive (relative to this system's origin)."""
        if hi < lo:
            return np.zeros(0, dtype=np.int64)
        base = np.arange(lo, hi + 1, dtype=np.int64) + self.offset

        if self.kind == "constant":
            return np.full(len(base), self.constant_symbol, dtype=np.int64)
        if self.kind == "periodic":
            word = np.asarray(self.word, dtype=np.int64)
            return word[np.mod(base, len(word))]
        if self.kind == "rotation":
            p, q = self.alpha.numerator, self.alpha.denominator
            turns = np.mod(base * p, q) / q
            position = np.mod(self.initial_angle + turns, 1.0)
            return np.searchsorted(np.asarray(self.cuts), position, side="right").astype(np.int64)

        # iid: index n >= 0 reads forward[n], index n < 0 reads backward[-n - 1]
        first, last = int(base[0]), int(base[-1])
        forward = self._iid_stream(_FORWARD_STREAM, last + 1)
        backward = self._iid_stream(_BACKWARD_STREAM, -first)
        out = np.empty(len(base), dtype=np.int64)
        neg = base < 0
        out[neg] = backward[-base[neg] - 1]
        out[~neg] = forward[base[~neg]]
        return out


@dataclass(frozen=True, eq=False)
class FiberOrbit:
    """
    Materialised symbols omega_n for n in [first, last].

    The origin fiber (n = 0) is always inside the window.
    """

    driving: DrivingSystem
    first: int
    symbols: np.ndarray

    def __post_init__(self) -> None:
        self.symbols.setflags(write=False)

    @property
    def last(self) -> int:
        return self.first + len(self.symbols) - 1

    @property
    def backward(self) -> int:
        return -self.first

    @property
    def forward(self) -> int:
        return self.last

    def covers(self, lo: int, hi: int) -> bool:
        return self.first <= lo and hi <= self.last

    def symbol(self, n: int) -> int:
        if not self.first <= n <= self.last:
            raise ValidationError(
                f"Fiber {n} outside the materialised orbit [{self.first}, {self.last}]", n
            )
        return int(self.symbols[n - self.first])

    def window(self, lo: int, hi: int) -> np.ndarray:
        if not self.covers(lo, hi):
            raise ValidationError(
                f"Window [{lo}, {hi}] outside the materialised orbit [{self.first}, {self.last}]",
                (lo, hi),
            )
        return self.symbols[lo - self.first : hi - self.first + 1]

    def shifted(self, steps: int = 1) -> FiberOrbit:
        """The orbit of sigma^steps(omega) over the same symbols."""
        return FiberOrbit(self.driving.shift(steps), self.first - steps, self.symbols)

    def extended(self, backward: int, forward: int) -> FiberOrbit:
        """A longer materialisation of the same realisation."""
        return fiber_sequence(
            self.driving, max(backward, self.backward), max(forward, self.forward)
        )

    def frequencies(self) -> np.ndarray:
        """Empirical symbol frequencies over the forward half [0, last]."""
        counts = np.bincount(self.window(0, self.last), minlength=self.driving.symbols)
        return counts / counts.sum()

    def to_rows(self) -> list[tuple[int, int]]:
        """Rows for the `n,symbol` CSV dump."""
        return [(self.first + i, int(s)) for i, s in enumerate(self.symbols)]


def fiber_sequence(driving: DrivingSystem, backward: int, forward: int) -> FiberOrbit:
    """
    Materialise the fiber symbols of `driving` on [-backward, forward].

    Args:
        driving: Base system.
        backward: Number of backward steps B >= 0.
        forward: Number of forward steps F >= 0.

    Returns:
        FiberOrbit: Immutable symbol window.
    """
    if backward < 0 or forward < 0:
        raise ValidationError(f"Orbit counts must be >= 0, got ({backward}, {forward})")
    symbols = driving.symbols_between(-backward, forward)
    logger.debug(
        "Materialised %s orbit on [%d, %d] (offset %d)",
        driving.kind,
        -backward,
        forward,
        driving.offset,
    )
    return FiberOrbit(driving, -backward, symbols)
