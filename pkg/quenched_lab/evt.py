"""
Quenched extreme values: observations, threshold schedules, survivor-probability
curves, the Gumbel limit and hitting-time Monte Carlo.

Thresholds are solved fiber by fiber so that mu_j(H_j) = (t_j + xi_j) / N, then snapped
to the grid G_N = lcm(base, 2N) with xi recomputed after snapping.
"""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial

import numpy as np
from scipy import stats

from .driving import FiberOrbit
from .errors import ValidationError
from .maps import IntervalSet, Number
from .open_system import lambda_open, survivor_log_mass
from .perturb import ThetaEstimate
from .transfer import (
    DEFAULT_BURN_IN,
    DEFAULT_TOLERANCE,
    Cocycle,
    ConformalMeasure,
    DensityWalker,
    Grid,
    TransferMatrix,
    refine_for,
)

logger = logging.getLogger(__name__)

OBSERVATIONS = ("neg_distance", "neg_log_distance", "custom")

DEFAULT_N_VALUES = tuple(2**k for k in range(7, 15))
DEFAULT_SAMPLES = 10**5
DEFAULT_HITTING_N = 10**4
DEFAULT_BUFFER_FACTOR = 8
DEFAULT_BLOCK_SIZE = 4096

SOLVER_TOLERANCE = 1e-10
_MAX_BISECTIONS = 200
_LOG_DISTANCE_CAP = 60.0

# Largest hole mass still treated as a small hole by the hitting-time simulation.
SMALL_HOLE_LIMIT = 0.5

Mapper = Callable[[Callable, Iterable], list]


# ----------------------------------------------------------------------
# Observations
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationFunction:
    """
    Unimodal observation h_omega per fiber symbol.

    neg_distance:     h(x) = -|x - c|
    neg_log_distance: h(x) = -log|x - c|
    custom:           piecewise-linear through `knots` (x, h) with a unique maximum
    """

    kind: str
    centers: Mapping[int, Number] = field(default_factory=dict)
    knots: Mapping[int, tuple[tuple[float, float], ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in OBSERVATIONS:
            raise ValidationError(f"Unknown observation '{self.kind}'", self)
        if self.kind == "custom":
            for symbol, knots in self.knots.items():
                _check_unimodal(symbol, knots)
        elif not self.centers:
            raise ValidationError(f"Observation '{self.kind}' needs a center per symbol", self)

    def center(self, symbol: int) -> float:
        if self.kind == "custom":
            xs, hs = self._knots(symbol)
            return float(xs[int(np.argmax(hs))])
        try:
            return float(self.centers[symbol])
        except KeyError:
            raise ValidationError(f"No observation center for symbol {symbol}", symbol)

    def _knots(self, symbol: int) -> tuple[np.ndarray, np.ndarray]:
        try:
            knots = self.knots[symbol]
        except KeyError:
            raise ValidationError(f"No observation knots for symbol {symbol}", symbol)
        arr = np.asarray(knots, dtype=float)
        return arr[:, 0], arr[:, 1]

    def value(self, symbol: int, x: float) -> float:
        if self.kind == "custom":
            xs, hs = self._knots(symbol)
            return float(np.interp(x, xs, hs))
        d = abs(x - self.center(symbol))
        if self.kind == "neg_distance":
            return -d
        return math.inf if d == 0 else -math.log(d)

    def z_range(self, symbol: int) -> tuple[float, float]:
        """Thresholds from a level set covering [0, 1) to an empty one."""
        if self.kind == "neg_distance":
            return -1.0, 0.0
        if self.kind == "neg_log_distance":
            return 0.0, _LOG_DISTANCE_CAP
        _, hs = self._knots(symbol)
        return float(hs.min()), float(hs.max())

    def level_set(self, symbol: int, z: float) -> tuple[float, float]:
        """Endpoints (a, b) of {h > z}, clipped to [0, 1]."""
        if self.kind == "custom":
            xs, hs = self._knots(symbol)
            top = int(np.argmax(hs))
            a = float(np.interp(z, hs[: top + 1], xs[: top + 1]))
            b = float(np.interp(z, hs[top:][::-1], xs[top:][::-1]))
        else:
            c = self.center(symbol)
            r = -z if self.kind == "neg_distance" else math.exp(-z)
            a, b = c - r, c + r
        return min(max(a, 0.0), 1.0), min(max(b, 0.0), 1.0)


def _check_unimodal(symbol: int, knots: Sequence[tuple[float, float]]) -> None:
    if len(knots) < 2:
        raise ValidationError(f"Observation for symbol {symbol} needs at least two knots", knots)
    xs = [x for x, _ in knots]
    hs = [h for _, h in knots]
    if xs != sorted(xs) or len(set(xs)) != len(xs):
        raise ValidationError(f"Observation knots for symbol {symbol} must increase in x", knots)
    top = hs.index(max(hs))
    if hs.count(max(hs)) != 1:
        raise ValidationError(f"Observation for symbol {symbol} has no unique maximum", knots)
    rising = all(a < b for a, b in zip(hs[: top + 1], hs[1 : top + 1]))
    falling = all(a > b for a, b in zip(hs[top:], hs[top + 1 :]))
    if not (rising and falling):
        raise ValidationError(f"Observation for symbol {symbol} is not unimodal", knots)


# ----------------------------------------------------------------------
# Thresholds
# ----------------------------------------------------------------------


def _scaling(t: Mapping[int, Number] | Number) -> Callable[[int], float]:
    if isinstance(t, Mapping):
        return lambda symbol: float(t.get(symbol, 1))
    return lambda symbol: float(t)


def threshold_grid(cocycle: Cocycle, n: int, max_cells: int = 2**22) -> Cocycle:
    """The cocycle on G_N = lcm(current grid, 2N), capped at max_cells."""
    cells = math.lcm(cocycle.grid.cells, 2 * n)
    if cells > max_cells:
        logger.warning("Threshold grid for N=%d capped at %d cells", n, max_cells)
        return refine_for(cocycle, (), max_cells)
    return cocycle.with_grid(Grid(cells))


class SolvedHoles:
    """
    Holes H_j at scale N solved lazily from fiber `first` onwards.

    The closed density is streamed alongside; each hole is the level set of the
    observation whose mu_j-mass is t_j / N, snapped to the grid. `xi(j)` is the residual
    N mu_j(H_j) - t_j after snapping. Safe to share between threads.
    """

    def __init__(
        self,
        observation: ObservationFunction,
        t: Mapping[int, Number] | Number,
        n: int,
        orbit: FiberOrbit,
        cocycle: Cocycle,
        first: int,
        last: int,
        burn_in: int = DEFAULT_BURN_IN,
        tolerance: float = DEFAULT_TOLERANCE,
    ):
        if n < 1:
            raise ValidationError(f"Threshold scale N must be >= 1, got {n}", n)
        self.observation = observation
        self.scale = _scaling(t)
        self.n = n
        self.orbit = orbit
        self.cocycle = cocycle
        self.first = first
        self.last = last
        self.measure = ConformalMeasure(cocycle, orbit.symbol, first, last)
        self._walker = DensityWalker(
            cocycle, orbit.symbol, first, burn_in, self.measure, tolerance=tolerance
        )
        self._holes: dict[int, IntervalSet] = {}
        self._xi: dict[int, float] = {}
        self._min_density: dict[int, float] = {}
        self._lock = threading.Lock()

    def at(self, j: int) -> IntervalSet:
        hole = self._holes.get(j)
        if hole is not None:
            return hole
        if not self.first <= j <= self.last:
            raise ValidationError(
                f"Fiber {j} outside the solved window [{self.first}, {self.last}]", j
            )
        with self._lock:
            while self._walker.index <= j:
                self._solve(self._walker.index, self._walker.density)
                if self._walker.index == self.last:
                    break
                self._walker.advance()
        return self._holes[j]

    def xi(self, j: int) -> float:
        self.at(j)
        return self._xi[j]

    def density_floor(self, j: int) -> float:
        """Smallest closed density value on the cells of H_j."""
        self.at(j)
        return self._min_density[j]

    def mass(self, j: int) -> float:
        return (self.scale(self.orbit.symbol(j)) + self.xi(j)) / self.n

    def _solve(self, j: int, phi: np.ndarray) -> None:
        if j in self._holes:
            return
        grid = self.cocycle.grid
        symbol = self.orbit.symbol(j)
        t = self.scale(symbol)
        target = t / self.n
        if not 0 < target < 1:
            raise ValidationError(
                f"Hole mass t/N = {target:.6g} at fiber {j} is outside (0, 1)", (j, t)
            )
        prefix = np.concatenate(([0.0], np.cumsum(self.measure.cells(j) * phi)))
        positions = np.arange(grid.cells + 1)

        def mass(a: float, b: float) -> float:
            ends = np.interp([a * grid.cells, b * grid.cells], positions, prefix)
            return float(ends[1] - ends[0])

        def level_mass(z: float) -> float:
            return mass(*self.observation.level_set(symbol, z))

        lo, hi = self.observation.z_range(symbol)
        if level_mass(lo) < target:
            raise ValidationError(f"Observation cannot reach mass {target:.6g} at fiber {j}", j)
        mid = lo
        for _ in range(_MAX_BISECTIONS):
            mid = (lo + hi) / 2
            m = level_mass(mid)
            if abs(self.n * m - t) < SOLVER_TOLERANCE:
                break
            if m > target:
                lo = mid
            else:
                hi = mid
        if level_mass(lo) < level_mass(hi):
            raise ValidationError(f"Level-set mass is not monotone at fiber {j}", j)
        a, b = self.observation.level_set(symbol, mid)
        snapped = IntervalSet.single(
            Fraction(round(a * grid.cells), grid.cells),
            Fraction(round(b * grid.cells), grid.cells),
        )
        if not snapped:
            raise ValidationError(
                f"Grid of {grid.cells} cells is too coarse for the hole at fiber {j}", j
            )
        cells = grid.cell_fractions(snapped) > 0
        self._xi[j] = self.n * self.measure.measure(j, snapped, grid, phi) - t
        self._min_density[j] = float(phi[cells].min())
        self._holes[j] = snapped


@dataclass(frozen=True, eq=False)
class ThresholdSchedule:
    """Solved holes for every N in `n_values` along one orbit."""

    observation: ObservationFunction
    t: Mapping[int, Number] | Number
    n_values: tuple[int, ...]
    cocycles: dict[int, Cocycle]
    holes: dict[int, SolvedHoles]

    def residuals(self, n: int, lo: int = 0, hi: int | None = None) -> np.ndarray:
        solved = self.holes[n]
        hi = n - 1 if hi is None else hi
        return np.array([solved.xi(j) for j in range(lo, hi + 1)])

    def to_rows(self, lo: int = 0, count: int = 1) -> list[tuple]:
        rows = []
        for n in self.n_values:
            solved = self.holes[n]
            for j in range(lo, lo + count):
                for a, b in solved.at(j).to_rows():
                    rows.append((n, j, a, b, solved.xi(j)))
        return rows


def solve_thresholds(
    observation: ObservationFunction,
    t: Mapping[int, Number] | Number,
    n_values: Sequence[int],
    orbit: FiberOrbit,
    cocycle: Cocycle,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    horizon: Callable[[int], int] | None = None,
    max_cells: int = 2**22,
) -> ThresholdSchedule:
    """
    Holes on fibers -burn_in..horizon(N) for each N, solved on demand.

    Args:
        horizon: Last fiber needed for scale N (default N).
    """
    cocycles, holes = {}, {}
    for n in n_values:
        fine = threshold_grid(cocycle, n, max_cells)
        last = horizon(n) if horizon is not None else n
        cocycles[n] = fine
        holes[n] = SolvedHoles(
            observation, t, n, orbit, fine, -burn_in, last, burn_in, tolerance
        )
        logger.debug("Threshold holes for N=%d on %d cells", n, fine.grid.cells)
    return ThresholdSchedule(observation, t, tuple(n_values), cocycles, holes)


# ----------------------------------------------------------------------
# Survivor curves and the Gumbel limit
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    n: int
    nu_survivor: float
    mu_survivor: float
    lambda_ratio: float
    gumbel_prediction: float

    @property
    def spread(self) -> float:
        values = (self.nu_survivor, self.mu_survivor, self.lambda_ratio)
        return max(values) - min(values)


@dataclass(frozen=True, eq=False)
class EvtReport:
    curve: list[CurvePoint]
    gumbel_prediction: float

    def to_rows(self) -> list[tuple]:
        return [
            (p.n, p.nu_survivor, p.mu_survivor, p.lambda_ratio, p.gumbel_prediction)
            for p in self.curve
        ]

    @property
    def final(self) -> CurvePoint:
        return self.curve[-1]


def gumbel_prediction(
    theta: ThetaEstimate | Sequence[float] | float, t: Sequence[float] | float = 1.0
) -> float:
    """exp(-orbit average of t_omega * theta_omega)."""
    if isinstance(theta, ThetaEstimate):
        values = theta.limit
    else:
        values = np.atleast_1d(np.asarray(theta, dtype=float))
    scale = np.broadcast_to(np.asarray(t, dtype=float), values.shape)
    return math.exp(-float(np.mean(scale * values)))


def survivor_point(
    orbit: FiberOrbit,
    schedule: ThresholdSchedule,
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    prediction: float = math.nan,
) -> CurvePoint:
    """Survivor probability of X_{0, N-1} at scale N in three forms."""
    fine = schedule.cocycles[n]
    holes = schedule.holes[n]
    measure = ConformalMeasure(fine, orbit.symbol, 0, n)
    spectral = lambda_open(orbit, fine, holes, n, 0, burn_in, tolerance, measure=measure)
    closed = DensityWalker(fine, orbit.symbol, 0, burn_in, measure, tolerance=tolerance)
    log_nu = survivor_log_mass(
        orbit, fine, holes, n - 1, spectral.log_lambda_closed, 0, measure=measure
    )
    log_mu = survivor_log_mass(
        orbit, fine, holes, n - 1, spectral.log_lambda_closed, 0, closed.density, measure
    )
    log_ratio = float(np.sum(spectral.log_lambda_open - spectral.log_lambda_closed))
    point = CurvePoint(n, math.exp(log_nu), math.exp(log_mu), math.exp(log_ratio), prediction)
    logger.info(
        "N=%d: nu %.6f, mu %.6f, lambda ratio %.6f", n, point.nu_survivor,
        point.mu_survivor, point.lambda_ratio,
    )
    return point


def survivor_probability_curve(
    orbit: FiberOrbit,
    schedule: ThresholdSchedule,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    prediction: float = math.nan,
    run: Mapper | None = None,
) -> EvtReport:
    """Survivor probabilities for every N of the schedule, in schedule order."""

    def task(n: int) -> CurvePoint:
        return survivor_point(orbit, schedule, n, burn_in, tolerance, prediction)

    if run is not None:
        points = run(task, schedule.n_values)
    else:
        points = [task(n) for n in schedule.n_values]
    return EvtReport(list(points), prediction)


# ----------------------------------------------------------------------
# Hitting times
# ----------------------------------------------------------------------


class CellChain:
    """
    Markov chain on grid cells given by a column-stochastic transfer matrix.

    For maps aligned with the grid and weight exponent 1 this is the exact law of the
    cell visited next by a point distributed uniformly in its cell.
    """

    def __init__(self, matrix: TransferMatrix):
        csc = matrix.matrix.tocsc()
        csc.sort_indices()
        counts = np.diff(csc.indptr)
        if np.any(counts == 0):
            raise ValidationError("Transfer matrix has an empty column", matrix)
        prefix = np.concatenate(([0.0], np.cumsum(csc.data)))
        column_start = np.repeat(prefix[csc.indptr[:-1]], counts)
        totals = np.repeat(prefix[csc.indptr[1:]] - prefix[csc.indptr[:-1]], counts)
        within = prefix[1:] - column_start
        self.keys = np.repeat(np.arange(len(counts)), counts) + within / totals
        self.indptr = csc.indptr
        self.rows = csc.indices

    def step(self, cells: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        target = cells + rng.random(len(cells))
        entry = np.searchsorted(self.keys, target, side="right")
        entry = np.clip(entry, self.indptr[cells], self.indptr[cells + 1] - 1)
        return self.rows[entry]


@dataclass(frozen=True, eq=False)
class HittingTimes:
    """First hitting times tau >= 1 and their scaling tau * mu_0(H_0)."""

    n: int
    taus: np.ndarray
    hole_mass: float
    rate: float
    extensions: int

    @property
    def scaled(self) -> np.ndarray:
        return self.taus * self.hole_mass

    def ks(self) -> tuple[float, float]:
        """Kolmogorov-Smirnov statistic and p-value against Exp(rate)."""
        result = stats.kstest(self.scaled, "expon", args=(0, 1 / self.rate))
        return float(result.statistic), float(result.pvalue)

    @property
    def ks_statistic(self) -> float:
        return self.ks()[0]

    def survival(self, s: float) -> float:
        """Empirical P(tau * mu(H) > s)."""
        return float(np.mean(self.scaled > s))

    def to_rows(self) -> list[tuple[int, int, float]]:
        return [(i, int(tau), float(s)) for i, (tau, s) in enumerate(zip(self.taus, self.scaled))]


def _hitting_block(
    chunk: tuple[int, int],
    seed: int,
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: SolvedHoles,
    start_weights: np.ndarray,
    horizon: int,
) -> np.ndarray:
    block, size = chunk
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(block,)))
    cells = rng.choice(len(start_weights), size=size, p=start_weights)
    taus = np.full(size, -1, dtype=np.int64)
    alive = np.arange(size)
    masks: dict[IntervalSet, np.ndarray] = {}
    for n in range(1, horizon + 1):
        symbol = orbit.symbol(n - 1)
        chain = cocycle.cache.get_or_build(
            ("chain", symbol, cocycle.grid.cells), partial(_chain_for, cocycle, symbol)
        )
        cells = chain.step(cells, rng)
        hole = holes.at(n)
        if hole not in masks:
            masks[hole] = cocycle.grid.cell_fractions(hole) > 0.5
        hit = masks[hole][cells]
        taus[alive[hit]] = n
        alive, cells = alive[~hit], cells[~hit]
        if not len(alive):
            break
    return taus


def _chain_for(cocycle: Cocycle, symbol: int) -> CellChain:
    return CellChain(cocycle.closed(symbol))


def hitting_time_mc(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    observation: ObservationFunction,
    t: Mapping[int, Number] | Number,
    n: int = DEFAULT_HITTING_N,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    rate: float = 1.0,
    buffer_factor: int = DEFAULT_BUFFER_FACTOR,
    block_size: int = DEFAULT_BLOCK_SIZE,
    burn_in: int = DEFAULT_BURN_IN,
    run: Mapper | None = None,
    max_extensions: int = 8,
) -> HittingTimes:
    """
    Simulate first hitting times of the solved holes at scale n.

    Samples start from mu_0 and move by the cell chain of the closed cocycle. Blocks of
    `block_size` samples use substreams of `seed` keyed by block index, so the result
    does not depend on how blocks are scheduled. Trajectories that outlive the orbit
    buffer are re-simulated with a doubled buffer; `extensions` counts the doublings.

    Raises:
        ValidationError: Weight exponent other than 1, holes that are not grid-aligned,
            or hole masses outside the small-hole regime.
    """
    if not cocycle.is_lebesgue:
        raise ValidationError("Hitting times need weight exponent 1", cocycle)
    if rate <= 0:
        raise ValidationError(f"Exponential rate must be positive, got {rate}", rate)
    scale = _scaling(t)
    sizes = [scale(s) for s in range(orbit.driving.symbols)]
    if max(sizes) / n > SMALL_HOLE_LIMIT:
        raise ValidationError("schedule violates small-hole regime", (max(sizes), n))

    fine = threshold_grid(cocycle, n)
    if not fine.aligned:
        logger.warning("Grid of %d cells is not aligned with the maps", fine.grid.cells)
    horizon = int(math.ceil(buffer_factor * n / min(sizes)))
    blocks = [
        (b, min(block_size, samples - b * block_size)) for b in range(-(-samples // block_size))
    ]

    extensions = 0
    while True:
        if orbit.last < horizon:
            orbit = orbit.extended(orbit.backward, horizon)
        holes = SolvedHoles(observation, t, n, orbit, fine, -burn_in, horizon, burn_in)
        hole0 = holes.at(0)
        if not fine.grid.aligned_set(hole0):
            raise ValidationError(f"Hole {hole0.to_rows()} is not grid-aligned", hole0)
        holes.at(horizon)
        walker = DensityWalker(fine, orbit.symbol, 0, burn_in, holes.measure)
        weights = holes.measure.cells(0) * walker.density
        task = partial(
            _hitting_block,
            seed=seed,
            orbit=orbit,
            cocycle=fine,
            holes=holes,
            start_weights=weights / weights.sum(),
            horizon=horizon,
        )
        results = run(task, blocks) if run is not None else [task(b) for b in blocks]
        taus = np.concatenate(results)
        unfinished = int(np.sum(taus < 0))
        if not unfinished:
            break
        extensions += 1
        if extensions > max_extensions:
            raise ValidationError(
                f"{unfinished} trajectories never hit the hole within {horizon} steps", horizon
            )
        logger.info("%d trajectories outlived %d steps; doubling the buffer", unfinished, horizon)
        horizon *= 2

    result = HittingTimes(n, taus, holes.mass(0), rate, extensions)
    logger.info(
        "Hitting times at N=%d: %d samples, KS %.4f against rate %.6g",
        n,
        samples,
        result.ks_statistic,
        rate,
    )
    return result
