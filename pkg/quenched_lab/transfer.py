"""
Closed transfer-operator cocycles on a uniform grid.

A TransferMatrix is the weighted Ulam matrix of one fiber map: entry (j, i) is the
density that a unit density on cell i contributes to cell j. On grids aligned with the
map (integer slopes, breakpoints and intercepts on grid points) the matrix acts exactly
on piecewise-constant functions; otherwise it is the Ulam projection.

The conformal measure nu is carried as cell masses obtained from a backward dual
sweep, normalised to probability vectors; for weight exponent 1 it is Lebesgue on every
fiber and no sweep is needed. Invariant densities phi are normalised to unit nu-mass.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse

from .cache import MatrixCache
from .driving import FiberOrbit
from .errors import ConvergenceError, ValidationError
from .maps import IntervalSet, Number, PiecewiseLinearMap, exact

logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 50
DEFAULT_SANDWICH_BURN_IN = 60
DEFAULT_TOLERANCE = 1e-8

# Slack used when locating float endpoints on the grid.
_GRID_SLACK = 1e-9

HoleAt = Callable[[int], IntervalSet]
SymbolAt = Callable[[int], int]


@dataclass(frozen=True)
class WeightSpec:
    """Geometric weight g = |T'|^(-exponent), constant on each branch."""

    exponent: Number = Fraction(1)

    def __post_init__(self) -> None:
        if self.exponent < 0:
            raise ValidationError(f"Weight exponent must be >= 0, got {self.exponent}", self)

    def factor(self, slope: Number) -> float:
        return float(abs(slope)) ** (-float(self.exponent))

    @property
    def is_lebesgue(self) -> bool:
        """Exponent 1: the transfer operator preserves Lebesgue integrals."""
        return self.exponent == 1


def _on_grid(x: Number, cells: int) -> bool:
    if isinstance(x, Fraction):
        return (x * cells).denominator == 1
    scaled = float(x) * cells
    return abs(scaled - round(scaled)) < _GRID_SLACK


@dataclass(frozen=True)
class Grid:
    """Uniform grid of `cells` half-open cells [i/N, (i+1)/N)."""

    cells: int

    def __post_init__(self) -> None:
        if self.cells < 2:
            raise ValidationError(f"Grid needs at least 2 cells, got {self.cells}", self)

    @property
    def width(self) -> float:
        return 1.0 / self.cells

    def edges(self) -> np.ndarray:
        return np.arange(self.cells + 1) / self.cells

    def cell_of(self, x: Number) -> int:
        return min(int(math.floor(float(x * self.cells) + _GRID_SLACK)), self.cells - 1)

    def is_point(self, x: Number) -> bool:
        return _on_grid(x, self.cells)

    def aligned_set(self, s: IntervalSet) -> bool:
        return all(self.is_point(p) for p in s.endpoints)

    def aligned_map(self, tmap: PiecewiseLinearMap) -> bool:
        """Every cell maps affinely onto a union of whole cells."""
        for branch in tmap.branches:
            slope = branch.slope
            integral_slope = (
                slope.denominator == 1
                if isinstance(slope, Fraction)
                else abs(slope - round(slope)) < _GRID_SLACK
            )
            if not integral_slope:
                return False
            if not (
                self.is_point(branch.domain.lo)
                and self.is_point(branch.domain.hi)
                and self.is_point(branch.intercept)
            ):
                return False
        return True

    def cell_fractions(self, s: IntervalSet) -> np.ndarray:
        """Fraction of each cell covered by s (exact when s is aligned)."""
        frac = np.zeros(self.cells)
        for iv in s:
            lo, hi = float(iv.lo * self.cells), float(iv.hi * self.cells)
            i0 = int(math.floor(lo + _GRID_SLACK))
            i1 = min(int(math.ceil(hi - _GRID_SLACK)), self.cells)
            if i1 <= i0:
                i1 = i0 + 1
            if i1 - i0 == 1:
                frac[i0] += hi - lo
            else:
                frac[i0] += (i0 + 1) - lo
                frac[i0 + 1 : i1 - 1] += 1.0
                frac[i1 - 1] += hi - (i1 - 1)
        return np.clip(frac, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant function on a grid (density or observable)."""

    grid: Grid
    values: np.ndarray
    signed: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.cells,):
            raise ValidationError(
                f"Density has shape {values.shape}, grid has {self.grid.cells} cells", self
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("Density has non-finite entries", self)
        if not self.signed and np.any(values < 0):
            raise ValidationError("Density has negative entries; mark it signed", self)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid, value: float = 1.0) -> GridDensity:
        return cls(grid, np.full(grid.cells, float(value)), signed=value < 0)

    @classmethod
    def indicator(cls, grid: Grid, s: IntervalSet) -> GridDensity:
        return cls(grid, grid.cell_fractions(s))

    def centered(self, cell_masses: np.ndarray) -> GridDensity:
        """Subtract the mean under the given cell masses."""
        mean = float(cell_masses @ self.values) / float(cell_masses.sum())
        return GridDensity(self.grid, self.values - mean, signed=True)

    def value_at(self, x: Number) -> float:
        return float(self.values[self.grid.cell_of(x)])

    def integrate(self, cell_masses: np.ndarray | None = None) -> float:
        if cell_masses is None:
            return float(self.values.sum()) / self.grid.cells
        return float(cell_masses @ self.values)


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Sparse Ulam matrix of one fiber map (columns are source cells)."""

    matrix: sparse.csr_matrix
    symbol: int
    is_open: bool = False
    aligned: bool = True

    @property
    def cells(self) -> int:
        return self.matrix.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values

    def adjoint_apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix.T @ values

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def max_column_nonzeros(self) -> int:
        return int(np.diff(self.matrix.tocsc().indptr).max())

    def to_rows(self) -> list[tuple[int, int, float]]:
        """Coordinate rows (i, j, value) for the matrix dump; i is the source cell."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return [(int(coo.col[k]), int(coo.row[k]), float(coo.data[k])) for k in order]


def build_closed_matrix(
    tmap: PiecewiseLinearMap, weight: WeightSpec, grid: Grid, symbol: int = 0
) -> TransferMatrix:
    """
    Assemble the weighted Ulam matrix of a fiber map.

    Args:
        tmap: Fiber map.
        weight: Branch weight rule.
        grid: Uniform grid.
        symbol: Fiber symbol tag stored on the result.

    Returns:
        TransferMatrix with M[j, i] = N * g * Leb(T(cell_i ∩ domain) ∩ cell_j).
    """
    n = grid.cells
    rows, cols, vals = [], [], []
    for branch in tmap.branches:
        d_lo, d_hi = float(branch.domain.lo), float(branch.domain.hi)
        s, c = float(branch.slope), float(branch.intercept)
        first = int(math.floor(d_lo * n + _GRID_SLACK))
        stop = min(int(math.ceil(d_hi * n - _GRID_SLACK)), n)
        src = np.arange(first, stop)
        a = np.maximum(src / n, d_lo)
        b = np.minimum((src + 1) / n, d_hi)
        keep = b > a
        src, a, b = src[keep], a[keep], b[keep]
        if not len(src):
            continue

        ya, yb = s * a + c, s * b + c
        lo = np.clip(np.minimum(ya, yb), 0.0, 1.0)
        hi = np.clip(np.maximum(ya, yb), 0.0, 1.0)
        j_lo = np.minimum(np.floor(lo * n + _GRID_SLACK).astype(np.int64), n - 1)
        j_hi = np.maximum(np.ceil(hi * n - _GRID_SLACK).astype(np.int64), j_lo + 1)
        span = j_hi - j_lo
        scale = n * weight.factor(branch.slope)

        for off in range(int(span.max())):
            live = off < span
            j = j_lo[live] + off
            overlap = np.minimum(hi[live], (j + 1) / n) - np.maximum(lo[live], j / n)
            ok = overlap > 0
            rows.append(j[ok])
            cols.append(src[live][ok])
            vals.append(scale * overlap[ok])

    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    aligned = grid.aligned_map(tmap)
    if not aligned:
        logger.debug("Grid of %d cells is not aligned with %s (approximate-grid)", n, tmap)
    return TransferMatrix(matrix, symbol, is_open=False, aligned=aligned)


def restrict_columns(
    closed: TransferMatrix, hole_fractions: np.ndarray, aligned: bool
) -> TransferMatrix:
    """Zero the part of every source cell that lies in the hole."""
    keep = sparse.diags(1.0 - hole_fractions)
    matrix = (closed.matrix @ keep).tocsr()
    matrix.eliminate_zeros()
    return TransferMatrix(matrix, closed.symbol, is_open=True, aligned=closed.aligned and aligned)


class Cocycle:
    """
    Fiber maps, a weight and a grid, with memoised matrices per symbol and hole.

    Args:
        maps: Fiber map per symbol.
        weight: Weight rule shared by every fiber.
        grid: Grid shared by every fiber.
        cache: Optional shared matrix cache.
    """

    def __init__(
        self,
        maps: Mapping[int, PiecewiseLinearMap],
        weight: WeightSpec,
        grid: Grid,
        cache: MatrixCache | None = None,
    ):
        if not maps:
            raise ValidationError("A cocycle needs at least one fiber map")
        self.maps = dict(maps)
        self.weight = weight
        self.grid = grid
        self.cache = cache if cache is not None else MatrixCache()

    def __repr__(self) -> str:
        return (
            f"Cocycle(symbols={sorted(self.maps)}, r={self.weight.exponent}, "
            f"cells={self.grid.cells})"
        )

    def with_grid(self, grid: Grid) -> Cocycle:
        return Cocycle(self.maps, self.weight, grid, self.cache)

    def with_weight(self, exponent: object) -> Cocycle:
        return Cocycle(self.maps, WeightSpec(exact(exponent)), self.grid, self.cache)

    def map_for(self, symbol: int) -> PiecewiseLinearMap:
        try:
            return self.maps[symbol]
        except KeyError:
            raise ValidationError(f"No fiber map configured for symbol {symbol}", symbol)

    @property
    def is_lebesgue(self) -> bool:
        return self.weight.is_lebesgue

    @property
    def aligned(self) -> bool:
        return all(self.grid.aligned_map(m) for m in self.maps.values())

    def closed(self, symbol: int) -> TransferMatrix:
        key = ("closed", symbol, self.weight.exponent, self.grid.cells)
        return self.cache.get_or_build(
            key,
            lambda: build_closed_matrix(self.map_for(symbol), self.weight, self.grid, symbol),
        )

    def matrix(self, symbol: int, hole: IntervalSet | None = None) -> TransferMatrix:
        """Closed matrix, or the open one when a nonempty hole is given."""
        if hole is None or not hole:
            return self.closed(symbol)
        key = ("open", symbol, self.weight.exponent, self.grid.cells, hole)
        return self.cache.get_or_build(
            key,
            lambda: restrict_columns(
                self.closed(symbol),
                self.grid.cell_fractions(hole),
                self.grid.aligned_set(hole),
            ),
        )


# ----------------------------------------------------------------------
# Conformal measure
# ----------------------------------------------------------------------


class ConformalMeasure:
    """
    Cell masses of the closed conformal measure on fibers [first, last].

    For weight exponent 1 every fiber carries Lebesgue measure. Otherwise the masses
    come from a backward dual sweep started `burn_in` fibers past `last`.
    """

    def __init__(
        self,
        cocycle: Cocycle,
        symbol_at: SymbolAt,
        first: int,
        last: int,
        burn_in: int = DEFAULT_SANDWICH_BURN_IN,
    ):
        self.first = first
        self.last = last
        self.cells_count = cocycle.grid.cells
        self._uniform = np.full(self.cells_count, 1.0 / self.cells_count)
        self._weights: np.ndarray | None = None
        self.distance = 0.0
        if cocycle.is_lebesgue:
            return

        weights = np.empty((last - first + 1, self.cells_count))
        w = self._uniform.copy()
        for j in range(last + burn_in - 1, first - 1, -1):
            w = cocycle.closed(symbol_at(j)).adjoint_apply(w)
            total = w.sum()
            if not total > 0:
                raise ConvergenceError("Conformal sweep lost all mass", fiber=j)
            w /= total
            if j <= last:
                weights[j - first] = w
        self._weights = weights
        logger.debug("Dual sweep on fibers [%d, %d] with burn-in %d", first, last, burn_in)

    @property
    def is_lebesgue(self) -> bool:
        return self._weights is None

    def cells(self, n: int) -> np.ndarray:
        if not self.first <= n <= self.last:
            raise ValidationError(
                f"Conformal measure covers [{self.first}, {self.last}], asked for {n}", n
            )
        if self._weights is None:
            return self._uniform
        return self._weights[n - self.first]

    def integrate(self, n: int, values: np.ndarray) -> float:
        return float(self.cells(n) @ values)

    def measure(
        self, n: int, s: IntervalSet, grid: Grid, density: np.ndarray | None = None
    ) -> float:
        frac = grid.cell_fractions(s)
        if density is not None:
            frac = frac * density
        return float(self.cells(n) @ frac)


# ----------------------------------------------------------------------
# Sweeps
# ----------------------------------------------------------------------


class DensityWalker:
    """
    Streams the equivariant density along an orbit, one fiber at a time.

    The walker starts `burn_in` fibers before `start` from the constant function and
    pushes it forward; a second column started one step later measures convergence.
    After construction `density` is the estimate at fiber `start`, normalised to unit
    mass under `measure`; advance() moves one fiber forward and returns the log
    multiplier. With `hole_at` the open cocycle is used instead of the closed one.
    """

    def __init__(
        self,
        cocycle: Cocycle,
        symbol_at: SymbolAt,
        start: int,
        burn_in: int = DEFAULT_BURN_IN,
        measure: ConformalMeasure | None = None,
        hole_at: HoleAt | None = None,
        tolerance: float | None = DEFAULT_TOLERANCE,
    ):
        self.cocycle = cocycle
        self.symbol_at = symbol_at
        self.hole_at = hole_at
        self.measure = measure
        self.index = start - burn_in

        n = cocycle.grid.cells
        block = np.ones((n, 1))
        for step in range(burn_in):
            if step == 1:
                block = np.column_stack([block[:, 0], np.ones(n)])
            block = self._matrix(self.index).apply(block)
            totals = block.sum(axis=0)
            if np.any(totals <= 0):
                raise ConvergenceError(
                    "Density sweep lost all mass during burn-in", fiber=self.index, step=step
                )
            block = block / totals
            self.index += 1

        self.density = self._normalise(block[:, 0], start)
        if block.shape[1] > 1:
            other = self._normalise(block[:, 1], start)
            scale = max(float(np.abs(self.density).max()), 1e-300)
            self.distance = float(np.abs(self.density - other).max()) / scale
        else:
            self.distance = math.inf if burn_in < 2 else 0.0
        if tolerance is not None and burn_in >= 2 and self.distance > tolerance:
            raise ConvergenceError(
                "Density did not converge within burn-in",
                fiber=start,
                step=burn_in,
                distance=self.distance,
            )

    def _matrix(self, j: int) -> TransferMatrix:
        hole = self.hole_at(j) if self.hole_at is not None else None
        return self.cocycle.matrix(self.symbol_at(j), hole)

    def _mass(self, j: int, values: np.ndarray) -> float:
        if self.measure is None:
            return float(values.sum()) / len(values)
        return self.measure.integrate(j, values)

    def _normalise(self, values: np.ndarray, j: int) -> np.ndarray:
        mass = self._mass(j, values)
        if not mass > 0:
            raise ConvergenceError("Density has no mass", fiber=j)
        return values / mass

    def advance(self) -> float:
        pushed = self._matrix(self.index).apply(self.density)
        mass = self._mass(self.index + 1, pushed)
        if not (mass > 0 and math.isfinite(mass)):
            raise ConvergenceError("Mass underflow while pushing density", fiber=self.index)
        self.density = pushed / mass
        self.index += 1
        return math.log(mass)


@dataclass(frozen=True, eq=False)
class LambdaSeries:
    """Per-step log multipliers log lambda_j for fibers start..start+n-1."""

    start: int
    log_lambda: np.ndarray
    symbols: np.ndarray
    distance: float = 0.0

    @property
    def mean_log(self) -> float:
        return float(np.mean(self.log_lambda)) if len(self.log_lambda) else 0.0

    @property
    def lambdas(self) -> np.ndarray:
        return np.exp(self.log_lambda)

    def to_rows(self) -> list[tuple[int, int, float]]:
        return [
            (self.start + k, int(s), float(v))
            for k, (s, v) in enumerate(zip(self.symbols, self.log_lambda))
        ]


@dataclass(frozen=True, eq=False)
class Sandwich:
    """Bounds inf(L^m f / L^m 1) <= nu(f) <= sup(L^m f / L^m 1) for m = 0..n."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.lower[-1]), float(self.upper[-1])

    @property
    def width(self) -> float:
        return float(self.upper[-1] - self.lower[-1])

    @property
    def midpoint(self) -> float:
        return float(self.upper[-1] + self.lower[-1]) / 2


@dataclass(frozen=True, eq=False)
class ClosedEquilibrium:
    """Closed multipliers, densities and conformal sandwiches along an orbit window."""

    start: int
    log_lambda: np.ndarray
    densities: list[np.ndarray]
    symbols: np.ndarray
    sandwiches: list[Sandwich] = field(default_factory=list)
    burn_in: int = DEFAULT_BURN_IN
    sandwich_burn_in: int = DEFAULT_SANDWICH_BURN_IN
    distance: float = 0.0

    def density(self, n: int) -> np.ndarray:
        return self.densities[n - self.start]

    def to_rows(self) -> list[tuple]:
        rows = []
        for k, (symbol, value) in enumerate(zip(self.symbols, self.log_lambda)):
            if k < len(self.sandwiches):
                lo, hi = self.sandwiches[k].interval
            else:
                lo = hi = float("nan")
            rows.append((self.start + k, int(symbol), float(value), lo, hi))
        return rows


def _symbol_at(orbit: FiberOrbit) -> SymbolAt:
    return orbit.symbol


def push_cocycle(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    f: GridDensity,
    n: int,
    start: int = 0,
    hole_at: HoleAt | None = None,
) -> list[tuple[np.ndarray, float]]:
    """
    Push f through n fibers, renormalising every step.

    Returns:
        [(f_0, 0.0), (f_1, log m_1), ...] where f_k is L^k f divided by its running
        mass and log m_k is the log of the per-step mass factor (L1 under Lebesgue).

    Raises:
        ConvergenceError: If the mass underflows; the error names the step.
    """
    if not orbit.covers(start, start + n - 1 if n else start):
        raise ValidationError(f"Orbit does not cover {n} steps from fiber {start}", orbit)
    values = np.array(f.values, dtype=float)
    out = [(values.copy(), 0.0)]
    size = cocycle.grid.cells
    for k in range(n):
        j = start + k
        hole = hole_at(j) if hole_at is not None else None
        values = cocycle.matrix(orbit.symbol(j), hole).apply(values)
        mass = float(np.abs(values).sum()) / size
        if not (mass > 0 and math.isfinite(mass)):
            raise ConvergenceError(f"Mass underflow at step {k + 1}", fiber=j, step=k + 1)
        values = values / mass
        out.append((values.copy(), math.log(mass)))
    return out


def conformal_sandwich(
    orbit: FiberOrbit, cocycle: Cocycle, f: GridDensity, n: int, start: int = 0
) -> Sandwich:
    """
    Nested bounds for nu_start(f) from ratios L^m f / L^m 1, m = 0..n.

    The lower bound is nondecreasing in m and the upper bound nonincreasing.
    """
    if f.signed and np.any(f.values < 0):
        raise ValidationError("Sandwich bounds need a nonnegative test function", f)
    size = cocycle.grid.cells
    block = np.column_stack([f.values, np.ones(size)])
    lower, upper = [float(f.values.min())], [float(f.values.max())]
    for k in range(n):
        block = cocycle.closed(orbit.symbol(start + k)).apply(block)
        block = block / (block[:, 1].sum() / size)
        support = block[:, 1] > 0
        ratio = block[support, 0] / block[support, 1]
        lower.append(float(ratio.min()))
        upper.append(float(ratio.max()))
    return Sandwich(np.array(lower), np.array(upper))


def invariant_density(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    measure: ConformalMeasure | None = None,
) -> GridDensity:
    """
    Backward-limit estimate of the closed invariant density at fiber `index`.

    Raises:
        ConvergenceError: If the last two iterates differ by more than `tolerance`.
    """
    if measure is None:
        measure = ConformalMeasure(cocycle, orbit.symbol, index, index)
    walker = DensityWalker(
        cocycle, orbit.symbol, index, burn_in, measure=measure, tolerance=tolerance
    )
    return GridDensity(cocycle.grid, walker.density)


def lambda_closed(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    n: int,
    start: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    measure: ConformalMeasure | None = None,
) -> LambdaSeries:
    """Closed multipliers lambda_j = nu_{j+1}(L_j phi_j) for j = start..start+n-1."""
    if measure is None:
        measure = ConformalMeasure(cocycle, orbit.symbol, start, start + n)
    walker = DensityWalker(
        cocycle, orbit.symbol, start, burn_in, measure=measure, tolerance=tolerance
    )
    logs = np.array([walker.advance() for _ in range(n)])
    return LambdaSeries(start, logs, np.array(orbit.window(start, start + n - 1)), walker.distance)


def closed_equilibrium(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    n: int,
    start: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    sandwich_burn_in: int = DEFAULT_SANDWICH_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    test_function: GridDensity | None = None,
) -> ClosedEquilibrium:
    """
    Closed multipliers and densities on fibers start..start+n, plus per-step sandwiches
    of nu_j(test_function) when a test function is given.
    """
    measure = ConformalMeasure(cocycle, orbit.symbol, start, start + n, sandwich_burn_in)
    walker = DensityWalker(
        cocycle, orbit.symbol, start, burn_in, measure=measure, tolerance=tolerance
    )
    densities = [walker.density]
    logs = []
    for _ in range(n):
        logs.append(walker.advance())
        densities.append(walker.density)

    sandwiches = []
    if test_function is not None:
        sandwiches = [
            conformal_sandwich(orbit, cocycle, test_function, sandwich_burn_in, start + k)
            for k in range(n)
        ]
    logger.info(
        "Closed equilibrium on [%d, %d]: mean log lambda %.12g",
        start,
        start + n,
        float(np.mean(logs)) if logs else 0.0,
    )
    return ClosedEquilibrium(
        start=start,
        log_lambda=np.array(logs),
        densities=densities,
        symbols=np.array(orbit.window(start, start + n - 1)) if n else np.zeros(0, dtype=int),
        sandwiches=sandwiches,
        burn_in=burn_in,
        sandwich_burn_in=sandwich_burn_in,
        distance=walker.distance,
    )


def conformality_residual(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    f: GridDensity,
    index: int = 0,
    n: int = DEFAULT_SANDWICH_BURN_IN,
    burn_in: int = DEFAULT_BURN_IN,
) -> tuple[float, float]:
    """
    |nu_{j+1}(L_j f) - lambda_j nu_j(f)| with both nu values read off sandwiches.

    Returns:
        (residual, tolerance) where tolerance is ten times the larger sandwich width,
        floored at 1e-12.
    """
    series = lambda_closed(orbit, cocycle, 1, index, burn_in)
    lam = float(series.lambdas[0])
    before = conformal_sandwich(orbit, cocycle, f, n, index)
    pushed = GridDensity(cocycle.grid, cocycle.closed(orbit.symbol(index)).apply(f.values))
    after = conformal_sandwich(orbit, cocycle, pushed, n, index + 1)
    residual = abs(after.midpoint - lam * before.midpoint)
    width = max(after.width, lam * before.width)
    return residual, max(10 * width, 1e-12)


def stationary_vector(matrix: TransferMatrix) -> np.ndarray:
    """Perron vector of a single matrix via dense eigensolve, scaled to unit Lebesgue mass."""
    values, vectors = np.linalg.eig(matrix.matrix.toarray())
    lead = int(np.argmax(values.real))
    v = np.abs(vectors[:, lead].real)
    return v / (v.sum() / len(v))


def minimal_aligned_cells(
    maps: Sequence[PiecewiseLinearMap], sets: Sequence[IntervalSet] = (), base: int = 2
) -> int | None:
    """
    Smallest grid (a multiple of `base`) aligned with every map and set, or None when the
    maps have non-integer slopes or irrational breakpoints.
    """
    cells = base
    points: list[Number] = []
    for tmap in maps:
        for branch in tmap.branches:
            if not isinstance(branch.slope, Fraction) or branch.slope.denominator != 1:
                return None
            points += [branch.domain.lo, branch.domain.hi, branch.intercept]
    for s in sets:
        points += s.endpoints
    for p in points:
        if not isinstance(p, Fraction):
            return None
        cells = math.lcm(cells, p.denominator)
    return cells


def refine_for(
    cocycle: Cocycle, sets: Sequence[IntervalSet] = (), max_cells: int = 2**20
) -> Cocycle:
    """
    The cocycle moved to the smallest grid that is a multiple of its current one and is
    aligned with every map and set.

    Falls back to the current grid when the maps admit no aligned grid, and to the largest
    multiple of it below max_cells when the aligned grid would be larger.
    """
    current = cocycle.grid.cells
    cells = minimal_aligned_cells(list(cocycle.maps.values()), sets, current)
    if cells is None:
        logger.warning("Maps admit no aligned grid; keeping %d cells (approximate-grid)", current)
        return cocycle
    if cells > max_cells:
        capped = max(current, (max_cells // current) * current)
        logger.warning(
            "Aligned grid needs %d cells, capped at %d (approximate-grid)", cells, capped
        )
        cells = capped
    if cells == current:
        return cocycle
    return cocycle.with_grid(Grid(cells))
