"""
Holes, open transfer operators, survivor sets and escape rates.

Survivor sets are computed exactly by the interval engine with a backward sweep;
open multipliers come from the grid engine. Both are normalised against the closed
conformal measure, so lambda_eps <= lambda_0 holds fiber by fiber.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .driving import FiberOrbit
from .errors import (
    ComponentLimitError,
    ConvergenceError,
    EmptySurvivorError,
    ValidationError,
)
from .maps import IntervalSet, Number, PiecewiseLinearMap, Piece, exact
from .transfer import (
    DEFAULT_BURN_IN,
    DEFAULT_SANDWICH_BURN_IN,
    DEFAULT_TOLERANCE,
    Cocycle,
    ConformalMeasure,
    DensityWalker,
    Grid,
    TransferMatrix,
    restrict_columns,
)

logger = logging.getLogger(__name__)

HOLE_KINDS = ("none", "fixed", "left", "ball")

DEFAULT_MAX_COMPONENTS = 200_000


class HoleSequence(Protocol):
    """Anything that returns the hole at a fiber index."""

    def at(self, n: int) -> IntervalSet: ...


@dataclass(frozen=True, eq=False)
class HoleFamily:
    """
    Holes per fiber symbol, either fixed or shrinking with epsilon.

    Kinds:
        none:  no hole.
        fixed: `fixed[symbol]` regardless of epsilon.
        left:  [0, scale * eps).
        ball:  [center - scale * eps, center + scale * eps) clipped to [0, 1).
    """

    kind: str = "none"
    fixed: Mapping[int, IntervalSet] = field(default_factory=dict)
    centers: Mapping[int, Number] = field(default_factory=dict)
    scales: Mapping[int, Number] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in HOLE_KINDS:
            raise ValidationError(f"Unknown hole kind '{self.kind}'", self)
        if self.kind == "ball" and not self.centers:
            raise ValidationError("Ball holes need a center per symbol", self)
        if any(s <= 0 for s in self.scales.values()):
            raise ValidationError("Hole scales must be positive", self)

    @classmethod
    def none(cls) -> HoleFamily:
        return cls("none")

    @classmethod
    def fixed_holes(cls, holes: Mapping[int, IntervalSet]) -> HoleFamily:
        return cls("fixed", fixed=dict(holes))

    @classmethod
    def last_branch(cls, maps: Mapping[int, PiecewiseLinearMap]) -> HoleFamily:
        """The domain of the last full branch of every fiber map."""
        holes = {}
        for symbol, tmap in maps.items():
            full = tmap.full_branches
            if not full:
                raise ValidationError(f"Map {tmap} has no full branch to remove", tmap)
            domain = tmap.branches[full[-1]].domain
            holes[symbol] = IntervalSet.single(domain.lo, domain.hi)
        return cls("fixed", fixed=holes)

    @classmethod
    def left(cls, scales: Mapping[int, Number] | None = None) -> HoleFamily:
        return cls("left", scales=dict(scales or {}))

    @classmethod
    def ball(
        cls, centers: Mapping[int, Number], scales: Mapping[int, Number] | None = None
    ) -> HoleFamily:
        return cls("ball", centers=dict(centers), scales=dict(scales or {}))

    @property
    def shrinks(self) -> bool:
        return self.kind in ("left", "ball")

    def at(self, symbol: int, eps: Number | None = None) -> IntervalSet:
        if self.kind == "none":
            return IntervalSet.empty()
        if self.kind == "fixed":
            return self.fixed.get(symbol, IntervalSet.empty())
        if eps is None:
            raise ValidationError(f"Hole kind '{self.kind}' needs an epsilon", self)
        radius = exact(eps) * self.scales.get(symbol, 1)
        if self.kind == "left":
            return IntervalSet.single(0 * radius, radius)
        center = self.centers.get(symbol)
        if center is None:
            raise ValidationError(f"No hole center configured for symbol {symbol}", symbol)
        return IntervalSet.single(center - radius, center + radius)

    def nesting_violations(
        self, schedule: Sequence[Number], symbols: Sequence[int]
    ) -> list[tuple[int, Number, Number]]:
        """(symbol, eps, smaller eps) triples where H_smaller is not inside H_eps."""
        ordered = sorted(schedule, reverse=True)
        bad = []
        for symbol in symbols:
            for big, small in zip(ordered, ordered[1:]):
                if not self.at(symbol, small).issubset(self.at(symbol, big)):
                    bad.append((symbol, big, small))
        return bad


class PlacedHoles:
    """A hole family placed along an orbit at a fixed epsilon."""

    def __init__(self, family: HoleFamily, orbit: FiberOrbit, eps: Number | None = None):
        self.family = family
        self.orbit = orbit
        self.eps = eps
        self._by_symbol: dict[int, IntervalSet] = {}

    def at(self, n: int) -> IntervalSet:
        symbol = self.orbit.symbol(n)
        hole = self._by_symbol.get(symbol)
        if hole is None:
            hole = self.family.at(symbol, self.eps)
            self._by_symbol[symbol] = hole
        return hole


class IndexedHoles:
    """Holes given explicitly per fiber index."""

    def __init__(self, holes: Mapping[int, IntervalSet]):
        self._holes = dict(holes)

    def at(self, n: int) -> IntervalSet:
        try:
            return self._holes[n]
        except KeyError:
            raise ValidationError(f"No hole solved for fiber {n}", n)

    def __len__(self) -> int:
        return len(self._holes)


class NoHoles:
    def at(self, n: int) -> IntervalSet:
        return IntervalSet.empty()


@dataclass(frozen=True)
class SurvivorSet:
    """X_{origin, depth}: points whose first depth+1 iterates avoid the holes."""

    origin: int
    depth: int
    eps: Number | None
    body: IntervalSet

    @property
    def leb(self) -> Number:
        return self.body.total_length


@dataclass(frozen=True, eq=False)
class OpenSpectralData:
    """
    Closed and open multipliers on fibers origin..origin+n-1.

    Attributes:
        hole_free_mass: nu_j(1_{H_j^c} phi_eps_j) for j = origin..origin+n.
        densities: Open densities phi_eps_j, when requested.
    """

    origin: int
    log_lambda_closed: np.ndarray
    log_lambda_open: np.ndarray
    hole_free_mass: np.ndarray
    densities: list[np.ndarray] = field(default_factory=list)
    distance: float = 0.0

    @property
    def mean_log_open(self) -> float:
        return float(np.mean(self.log_lambda_open))

    @property
    def mean_log_closed(self) -> float:
        return float(np.mean(self.log_lambda_closed))

    @property
    def log_alpha(self) -> np.ndarray:
        """log of lambda_eps c_{j+1} / (lambda_0 c_j), the conditioned survival factor."""
        c = np.log(self.hole_free_mass)
        return self.log_lambda_open + c[1:] - c[:-1] - self.log_lambda_closed

    @property
    def log_lambda_conditioned(self) -> np.ndarray:
        return self.log_alpha + self.log_lambda_closed


@dataclass(frozen=True)
class EscapeRate:
    n: int
    decay: float
    pressure: float
    tolerance: float

    @property
    def gap(self) -> float:
        return abs(self.decay - self.pressure)


def open_matrix(closed: TransferMatrix, hole: IntervalSet, grid: Grid) -> TransferMatrix:
    """Closed matrix with the hole part of every source cell removed."""
    if not hole:
        return closed
    aligned = grid.aligned_set(hole)
    if not aligned:
        logger.debug("Hole %s is not grid-aligned (approximate-grid)", hole.pairs())
    return restrict_columns(closed, grid.cell_fractions(hole), aligned)


def survivor_set(
    orbit: FiberOrbit,
    maps: Mapping[int, PiecewiseLinearMap],
    n: int,
    holes: HoleSequence,
    origin: int = 0,
    eps: Number | None = None,
    max_components: int = DEFAULT_MAX_COMPONENTS,
) -> SurvivorSet:
    """
    Exact survivor set X_{origin, n} by a backward sweep.

    Raises:
        EmptySurvivorError: If the set becomes empty; names the fiber window.
        ComponentLimitError: If the set splits into more than max_components pieces.
    """
    if n < 0:
        raise ValidationError(f"Survivor depth must be >= 0, got {n}", n)
    body = holes.at(origin + n).complement()
    if not body:
        raise EmptySurvivorError(origin + n, origin + n)
    for j in range(n - 1, -1, -1):
        index = origin + j
        body = holes.at(index).complement() & maps[orbit.symbol(index)].pullback(body)
        if not body:
            raise EmptySurvivorError(index, origin + n)
        if len(body) > max_components:
            raise ComponentLimitError(index, len(body), max_components)
    return SurvivorSet(origin, n, eps, body)


def check_forward_invariance(
    orbit: FiberOrbit,
    maps: Mapping[int, PiecewiseLinearMap],
    survivor: SurvivorSet,
    holes: HoleSequence,
) -> bool:
    """T_origin(X_{origin, n}) is contained in X_{origin+1, n-1}."""
    if survivor.depth == 0:
        return True
    image = maps[orbit.symbol(survivor.origin)].image(survivor.body)
    later = survivor_set(orbit, maps, survivor.depth - 1, holes, survivor.origin + 1)
    return image.issubset(later.body, tolerance=1e-12)


def survivor_measure(
    survivor: SurvivorSet | IntervalSet,
    grid: Grid | None = None,
    density: np.ndarray | None = None,
    cell_masses: np.ndarray | None = None,
) -> float:
    """
    Lebesgue measure of a survivor set, or its measure under a grid density.

    Args:
        survivor: Survivor set or bare interval set.
        grid: Grid of the density (required with density).
        density: Piecewise-constant density values per cell.
        cell_masses: Reference cell masses (Lebesgue 1/N when omitted).
    """
    body = survivor.body if isinstance(survivor, SurvivorSet) else survivor
    if density is None:
        return float(body.total_length)
    if grid is None:
        raise ValidationError("A grid is needed to integrate a density")
    masses = cell_masses if cell_masses is not None else np.full(grid.cells, 1.0 / grid.cells)
    return float((grid.cell_fractions(body) * density) @ masses)


def pull_pieces(
    orbit: FiberOrbit,
    maps: Mapping[int, PiecewiseLinearMap],
    target: IntervalSet,
    start: int,
    n: int,
    keep: HoleSequence | None = None,
) -> list[Piece]:
    """
    Pieces of T_start^{-n}(target) with their derivative products |(T^n)'|.

    With `keep`, every intermediate iterate at fibers start+1..start+n-1 must avoid
    the holes of `keep`.
    """
    pieces = [Piece(iv.lo, iv.hi) for iv in target]
    for j in range(n - 1, -1, -1):
        index = start + j
        pieces = maps[orbit.symbol(index)].pullback_pieces(pieces)
        if keep is not None and j > 0:
            allowed = keep.at(index).complement()
            pieces = _clip_pieces(pieces, allowed)
    return pieces


def _clip_pieces(pieces: list[Piece], allowed: IntervalSet) -> list[Piece]:
    out = []
    for piece in pieces:
        for iv in allowed:
            lo, hi = max(piece.lo, iv.lo), min(piece.hi, iv.hi)
            if lo < hi:
                out.append(Piece(lo, hi, piece.jacobian))
    return out


class _HoleFractions:
    """Per-hole cell fractions, memoised on the hole value."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self._memo: dict[IntervalSet, np.ndarray] = {}

    def __call__(self, hole: IntervalSet) -> np.ndarray:
        frac = self._memo.get(hole)
        if frac is None:
            frac = self.grid.cell_fractions(hole)
            self._memo[hole] = frac
        return frac


def lambda_open(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    n: int,
    origin: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    keep_densities: bool = False,
    measure: ConformalMeasure | None = None,
) -> OpenSpectralData:
    """
    Closed and open multipliers along fibers origin..origin+n-1.

    Both densities are normalised to unit mass under the closed conformal measure, so
    lambda_eps_j = lambda_0_j * nu_j(1_{H^c} phi_eps_j) on aligned grids.
    """
    if measure is None:
        measure = ConformalMeasure(
            cocycle, orbit.symbol, origin, origin + n, max(burn_in, DEFAULT_SANDWICH_BURN_IN)
        )
    closed = DensityWalker(cocycle, orbit.symbol, origin, burn_in, measure, tolerance=tolerance)
    opened = DensityWalker(
        cocycle, orbit.symbol, origin, burn_in, measure, hole_at=holes.at, tolerance=tolerance
    )
    fractions = _HoleFractions(cocycle.grid)

    def hole_free(j: int, density: np.ndarray) -> float:
        mass = measure.integrate(j, (1.0 - fractions(holes.at(j))) * density)
        if not mass > 0:
            raise ConvergenceError("Open density sits entirely in the hole", fiber=j)
        return mass

    log0, logeps = np.empty(n), np.empty(n)
    masses = [hole_free(origin, opened.density)]
    densities = [opened.density] if keep_densities else []
    for k in range(n):
        log0[k] = closed.advance()
        logeps[k] = opened.advance()
        masses.append(hole_free(origin + k + 1, opened.density))
        if keep_densities:
            densities.append(opened.density)

    return OpenSpectralData(
        origin=origin,
        log_lambda_closed=log0,
        log_lambda_open=logeps,
        hole_free_mass=np.array(masses),
        densities=densities,
        distance=max(closed.distance, opened.distance),
    )


def survivor_log_mass(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    n: int,
    log_lambda_closed: np.ndarray,
    origin: int = 0,
    start_density: np.ndarray | None = None,
    measure: ConformalMeasure | None = None,
) -> float:
    """
    log of the reference measure of X_{origin, n} computed with the grid engine.

    With start_density the result is log mu(X) for mu = start_density * nu; otherwise
    log nu(X). log_lambda_closed must hold the closed multipliers of fibers
    origin..origin+n-1.
    """
    grid = cocycle.grid
    fractions = _HoleFractions(grid)

    def mass(j: int, v: np.ndarray) -> float:
        if measure is None:
            return float(v.sum()) / grid.cells
        return measure.integrate(j, v)

    values = np.ones(grid.cells) if start_density is None else np.array(start_density, float)
    total = 0.0
    for k in range(n):
        j = origin + k
        values = cocycle.matrix(orbit.symbol(j), holes.at(j)).apply(values)
        m = mass(j + 1, values)
        if not m > 0:
            raise EmptySurvivorError(origin, j + 1)
        total += math.log(m) - float(log_lambda_closed[k])
        values = values / m
    last = mass(origin + n, (1.0 - fractions(holes.at(origin + n))) * values)
    if not last > 0:
        raise EmptySurvivorError(origin, origin + n)
    return total + math.log(last)


def escape_rate(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    n: int,
    origin: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    spectral: OpenSpectralData | None = None,
) -> EscapeRate:
    """
    Escape rate over n fibers by survivor decay and by pressure difference.

    decay    = -(1/n) log nu(X_{origin, n-1})
    pressure = mean of log lambda_0 - log lambda_eps over fibers origin..origin+n-1

    Raises:
        ConvergenceError: If the two estimates differ by more than ten times the
            boundary-term bound.
    """
    if n < 1:
        raise ValidationError(f"Escape rate needs n >= 1, got {n}", n)
    measure = ConformalMeasure(
        cocycle, orbit.symbol, origin, origin + n, max(burn_in, DEFAULT_SANDWICH_BURN_IN)
    )
    if spectral is None:
        spectral = lambda_open(
            orbit, cocycle, holes, n, origin, burn_in, tolerance, keep_densities=True,
            measure=measure,
        )
    pressure = float(np.mean(spectral.log_lambda_closed - spectral.log_lambda_open))
    log_nu = survivor_log_mass(
        orbit, cocycle, holes, n - 1, spectral.log_lambda_closed, origin, measure=measure
    )
    decay = -log_nu / n

    phi = spectral.densities[0] if spectral.densities else np.ones(cocycle.grid.cells)
    support = phi[phi > 0]
    spread = abs(math.log(float(support.max()))) + abs(math.log(float(support.min())))
    boundary = 2 * abs(math.log(float(spectral.hole_free_mass[n - 1]))) + spread
    bound = boundary / n + 1e-12

    rate = EscapeRate(n, decay, pressure, bound)
    logger.info(
        "Escape rate over %d fibers: decay %.15g, pressure %.15g (gap %.3e)",
        n,
        decay,
        pressure,
        rate.gap,
    )
    if rate.gap > 10 * bound:
        raise ConvergenceError(
            f"Escape-rate estimators disagree: decay {decay:.12g} vs pressure {pressure:.12g}",
            fiber=origin,
            step=n,
            distance=rate.gap,
        )
    return rate
