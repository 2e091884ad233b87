"""
Small-hole perturbation: Delta, the return ratios q-hat, the extremal index and the
first-order multiplier formula.

Two engines compute q-hat. qhat() tracks the hole forward through the fiber maps with
exact affine pieces; qhat_table() runs one age-stacked sweep of the grid cocycle and
returns every q-hat^(k) for a window of origins at once.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .driving import FiberOrbit
from .errors import ComponentLimitError, ValidationError, ZeroHoleMeasureError
from .maps import IntervalSet, Number, PiecewiseLinearMap, exact
from .open_system import (
    DEFAULT_MAX_COMPONENTS,
    HoleFamily,
    HoleSequence,
    PlacedHoles,
    lambda_open,
)
from .transfer import (
    DEFAULT_BURN_IN,
    DEFAULT_TOLERANCE,
    Cocycle,
    ConformalMeasure,
    DensityWalker,
    refine_for,
)

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = Fraction(1, 1024)
DEFAULT_SCHEDULE_STEPS = 10
DEFAULT_K_MAX = 20
DEFAULT_CONVERGENCE_TOLERANCE = 1e-4
DEFAULT_MAX_GRID_CELLS = 2**20

Scaling = Callable[[int], Number]


def eps_schedule(
    eps0: Number = DEFAULT_EPSILON, steps: int = DEFAULT_SCHEDULE_STEPS
) -> list[Number]:
    """Geometric schedule eps0 * 2^-j for j = 0..steps."""
    eps0 = exact(eps0)
    return [eps0 / 2**j for j in range(steps + 1)]


# ----------------------------------------------------------------------
# Closed equilibrium on a window
# ----------------------------------------------------------------------


class EquilibriumWindow:
    """
    Closed densities phi_j and multipliers lambda_j on fibers [first, last].

    mu(j, S) integrates phi_j over S against the conformal measure.
    """

    def __init__(
        self,
        orbit: FiberOrbit,
        cocycle: Cocycle,
        first: int,
        last: int,
        burn_in: int = DEFAULT_BURN_IN,
        tolerance: float = DEFAULT_TOLERANCE,
    ):
        self.cocycle = cocycle
        self.first = first
        self.last = last
        self.measure = ConformalMeasure(cocycle, orbit.symbol, first, last)
        walker = DensityWalker(
            cocycle, orbit.symbol, first, burn_in, self.measure, tolerance=tolerance
        )
        self.densities = [walker.density]
        logs = []
        for _ in range(last - first):
            logs.append(walker.advance())
            self.densities.append(walker.density)
        self.log_lambda = np.array(logs)

    def density(self, j: int) -> np.ndarray:
        return self.densities[j - self.first]

    def lam(self, j: int) -> float:
        return math.exp(float(self.log_lambda[j - self.first]))

    def mu(self, j: int, s: IntervalSet) -> float:
        if not s:
            return 0.0
        return self.measure.measure(j, s, self.cocycle.grid, self.density(j))


# ----------------------------------------------------------------------
# Delta
# ----------------------------------------------------------------------


def delta(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
) -> float:
    """Delta_eps = lambda_0 * mu_0(H) at fiber `index`."""
    window = EquilibriumWindow(orbit, cocycle, index, index + 1, burn_in, tolerance)
    return window.lam(index) * window.mu(index, holes.at(index))


# ----------------------------------------------------------------------
# Interval engine
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class _Track:
    """A source interval [lo, hi) and the affine map x -> a x + b carrying it forward."""

    lo: Number
    hi: Number
    a: Number = Fraction(1)
    b: Number = Fraction(0)

    def image(self) -> tuple[Number, Number]:
        ya, yb = self.a * self.lo + self.b, self.a * self.hi + self.b
        return (ya, yb) if ya <= yb else (yb, ya)

    def restrict(self, lo: Number, hi: Number) -> _Track | None:
        """Sub-track whose image is the part of the current image inside [lo, hi)."""
        ylo, yhi = self.image()
        ulo, uhi = max(ylo, lo), min(yhi, hi)
        if not ulo < uhi:
            return None
        xa, xb = (ulo - self.b) / self.a, (uhi - self.b) / self.a
        if xa > xb:
            xa, xb = xb, xa
        return _Track(xa, xb, self.a, self.b)


def _advance_tracks(tracks: list[_Track], tmap: PiecewiseLinearMap) -> list[_Track]:
    out = []
    for track in tracks:
        for branch in tmap.branches:
            part = track.restrict(branch.domain.lo, branch.domain.hi)
            if part is not None:
                out.append(
                    _Track(
                        part.lo,
                        part.hi,
                        branch.slope * part.a,
                        branch.slope * part.b + branch.intercept,
                    )
                )
    return out


def _restrict_tracks(tracks: list[_Track], allowed: IntervalSet) -> list[_Track]:
    out = []
    for track in tracks:
        for iv in allowed:
            part = track.restrict(iv.lo, iv.hi)
            if part is not None:
                out.append(part)
    return out


def return_set(
    orbit: FiberOrbit,
    maps: Mapping[int, PiecewiseLinearMap],
    holes: HoleSequence,
    k: int,
    index: int = 0,
    max_components: int = DEFAULT_MAX_COMPONENTS,
) -> IntervalSet:
    """
    Points of H at fiber index-(k+1) that avoid the holes at fibers index-k..index-1
    and land in H at fiber `index` after k+1 steps.
    """
    start = index - (k + 1)
    tracks = [_Track(iv.lo, iv.hi) for iv in holes.at(start)]
    for j in range(start, index):
        tracks = _advance_tracks(tracks, maps[orbit.symbol(j)])
        target = holes.at(j + 1)
        tracks = _restrict_tracks(tracks, target if j + 1 == index else target.complement())
        if len(tracks) > max_components:
            raise ComponentLimitError(j + 1, len(tracks), max_components)
        if not tracks:
            break
    return IntervalSet.from_pairs((t.lo, t.hi) for t in tracks)


@dataclass(frozen=True, eq=False)
class QSeries:
    """q-hat^(0..k_max) at one origin fiber."""

    origin: int
    eps: Number | None
    values: np.ndarray

    @property
    def k_max(self) -> int:
        return len(self.values) - 1

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.values)

    @property
    def tail_deficit(self) -> float:
        return 1.0 - float(self.values.sum())

    @property
    def theta_raw(self) -> float:
        return self.tail_deficit

    def to_rows(self) -> list[tuple]:
        return [(self.origin, self.eps, k, float(q)) for k, q in enumerate(self.values)]


def qhat(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    k: int,
    index: int = 0,
    window: EquilibriumWindow | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    max_components: int = DEFAULT_MAX_COMPONENTS,
) -> float:
    """
    Exact q-hat^(k) at fiber `index` with the interval engine.

    Raises:
        ZeroHoleMeasureError: If mu_index(H_index) = 0.
    """
    if k < 0:
        raise ValidationError(f"Return index k must be >= 0, got {k}", k)
    start = index - (k + 1)
    if window is None or not (window.first <= start and index <= window.last):
        window = EquilibriumWindow(orbit, cocycle, start, index, burn_in)
    denominator = window.mu(index, holes.at(index))
    if not denominator > 0:
        raise ZeroHoleMeasureError(index)
    returning = return_set(orbit, cocycle.maps, holes, k, index, max_components)
    return window.mu(start, returning) / denominator


def qseries(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    k_max: int,
    index: int = 0,
    eps: Number | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    max_components: int = DEFAULT_MAX_COMPONENTS,
) -> QSeries:
    """q-hat^(0..k_max) at fiber `index` with the interval engine."""
    window = EquilibriumWindow(orbit, cocycle, index - (k_max + 1), index, burn_in)
    values = np.array(
        [
            qhat(orbit, cocycle, holes, k, index, window, burn_in, max_components)
            for k in range(k_max + 1)
        ]
    )
    return QSeries(index, eps, values)


def qhat_monte_carlo(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    k: int,
    index: int = 0,
    samples: int = 10**6,
    seed: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> tuple[float, float]:
    """
    Monte Carlo estimate of q-hat^(k) and its standard error.

    Points are drawn from mu at fiber index-(k+1) conditioned on the hole there and
    iterated with floating-point maps.
    """
    start = index - (k + 1)
    window = EquilibriumWindow(orbit, cocycle, start, index, burn_in)
    grid = cocycle.grid
    hole = holes.at(start)
    weights = window.measure.cells(start) * window.density(start) * grid.cell_fractions(hole)
    if not weights.sum() > 0:
        raise ZeroHoleMeasureError(start)

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))
    chosen: list[np.ndarray] = []
    remaining = samples
    while remaining > 0:
        cells = rng.choice(grid.cells, size=remaining, p=weights / weights.sum())
        x = (cells + rng.random(remaining)) / grid.cells
        x = x[hole.contains_array(x)]
        chosen.append(x[:remaining])
        remaining -= len(chosen[-1])
    x = np.concatenate(chosen)

    alive = np.ones(len(x), dtype=bool)
    for j in range(start, index):
        x = cocycle.map_for(orbit.symbol(j)).evaluate_array(x)
        inside = holes.at(j + 1).contains_array(x)
        alive &= inside if j + 1 == index else ~inside
    p = float(alive.mean())
    return p, math.sqrt(p * (1 - p) / len(alive))


# ----------------------------------------------------------------------
# Grid engine
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QTable:
    """
    q-hat^(k) for origins first..first+len-1 and k = 0..k_max from one grid sweep.

    Attributes:
        values: Array of shape (origins, k_max + 1).
        hole_mass: mu_j(H_j) per origin.
    """

    first: int
    eps: Number | None
    values: np.ndarray
    hole_mass: np.ndarray
    log_lambda: np.ndarray

    @property
    def origins(self) -> range:
        return range(self.first, self.first + len(self.values))

    def series(self, origin: int) -> QSeries:
        return QSeries(origin, self.eps, self.values[origin - self.first])

    @property
    def theta_raw(self) -> np.ndarray:
        return 1.0 - self.values.sum(axis=1)

    @property
    def tail(self) -> np.ndarray:
        """Last computed term q-hat^(k_max) per origin."""
        return self.values[:, -1]

    def to_rows(self) -> list[tuple]:
        return [
            (origin, self.eps, k, float(q))
            for origin, row in zip(self.origins, self.values)
            for k, q in enumerate(row)
        ]


def qhat_table(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    k_max: int,
    first: int = 0,
    count: int = 1,
    eps: Number | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
) -> QTable:
    """
    q-hat^(0..k_max) for `count` origins starting at `first` with one forward sweep.

    The sweep carries the block [phi, h phi, (1 - h) F_0 .. (1 - h) F_{k_max-1}] where
    column k of F_j is the mass that left the hole k+1 fibers ago and has avoided it
    since. q-hat^(k)(j) = nu_j(h_j F_j[:, k]) / nu_j(h_j phi_j).

    Raises:
        ZeroHoleMeasureError: If an origin hole has zero mu-measure.
    """
    if k_max < 0 or count < 1:
        raise ValidationError(f"Need k_max >= 0 and count >= 1, got ({k_max}, {count})")
    grid = cocycle.grid
    start = first - (k_max + 1)
    last = first + count - 1
    measure = ConformalMeasure(cocycle, orbit.symbol, start, last)
    walker = DensityWalker(cocycle, orbit.symbol, start, burn_in, measure, tolerance=tolerance)
    phi = walker.density
    ages = np.zeros((grid.cells, k_max + 1))
    fractions: dict[IntervalSet, np.ndarray] = {}

    def frac(j: int) -> np.ndarray:
        hole = holes.at(j)
        if hole not in fractions:
            fractions[hole] = grid.cell_fractions(hole)
        return fractions[hole]

    values = np.zeros((count, k_max + 1))
    hole_mass = np.zeros(count)
    logs = np.zeros(last - start)
    for j in range(start, last + 1):
        h = frac(j)
        if j >= first:
            cells = measure.cells(j)
            mass = float(cells @ (h * phi))
            if not mass > 0:
                raise ZeroHoleMeasureError(j)
            values[j - first] = (cells * h) @ ages / mass
            hole_mass[j - first] = mass
        if j == last:
            break
        block = np.column_stack([phi, h * phi, (1.0 - h)[:, None] * ages[:, :k_max]])
        pushed = cocycle.closed(orbit.symbol(j)).apply(block)
        lam = measure.integrate(j + 1, pushed[:, 0])
        pushed /= lam
        logs[j - start] = math.log(lam)
        phi, ages = pushed[:, 0], pushed[:, 1:]

    return QTable(first, eps, values, hole_mass, logs)


# ----------------------------------------------------------------------
# Extremal index
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ThetaEstimate:
    """
    Extremal-index estimates over an epsilon schedule.

    Rows of `raw` follow `schedule`; columns follow `origins`. `extrapolated[j]` is
    2 raw[j + 1] - raw[j], which removes the first-order term in eps for a halving
    schedule.
    """

    schedule: list[Number]
    origins: list[int]
    raw: np.ndarray
    tail: np.ndarray
    tolerance: float
    tables: list[QTable] = field(default_factory=list)

    @property
    def clamped(self) -> np.ndarray:
        return np.clip(self.raw, 0.0, 1.0)

    @property
    def extrapolated(self) -> np.ndarray:
        return 2 * self.raw[1:] - self.raw[:-1]

    @property
    def limit(self) -> np.ndarray:
        """Per-origin estimate of theta_0: last extrapolated row, or the raw row."""
        if len(self.schedule) < 2:
            return self.raw[-1]
        return self.extrapolated[-1]

    @property
    def converged_mask(self) -> np.ndarray:
        column = self.extrapolated if len(self.schedule) >= 3 else self.raw
        if len(column) < 2:
            return np.zeros(len(self.origins), dtype=bool)
        return np.abs(column[-1] - column[-2]) < self.tolerance

    @property
    def converged(self) -> bool:
        return bool(np.all(self.converged_mask))

    @property
    def mean(self) -> float:
        """Orbit average of theta, the Birkhoff estimate of the m-integral."""
        return float(np.mean(self.limit))

    def weighted_mean(self, t: Sequence[float]) -> float:
        """Orbit average of t_omega * theta_omega."""
        return float(np.mean(np.asarray(t, dtype=float) * self.limit))

    def to_rows(self) -> list[tuple]:
        rows = []
        for i, eps in enumerate(self.schedule):
            for c, origin in enumerate(self.origins):
                raw = float(self.raw[i, c])
                rows.append((origin, eps, raw, min(max(raw, 0.0), 1.0), float(self.tail[i, c])))
        return rows


def _hole_sets(
    family: HoleFamily, orbit: FiberOrbit, eps: Number, lo: int, hi: int
) -> list[IntervalSet]:
    symbols = sorted(set(int(s) for s in orbit.window(lo, hi)))
    return [family.at(s, eps) for s in symbols]


def theta(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    family: HoleFamily,
    schedule: Sequence[Number],
    k_max: int = DEFAULT_K_MAX,
    first: int = 0,
    count: int = 1,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_CONVERGENCE_TOLERANCE,
    max_cells: int = DEFAULT_MAX_GRID_CELLS,
    run: Callable[[Callable[[Number], QTable], Sequence[Number]], list[QTable]] | None = None,
) -> ThetaEstimate:
    """
    theta-hat = 1 - sum_{k <= k_max} q-hat^(k) for each eps in the schedule.

    Each eps runs on the smallest grid aligned with its holes. `run` maps the per-eps
    task over the schedule and may fan it out to a worker pool; results must come back
    in schedule order.
    """
    if not schedule:
        raise ValidationError("Empty epsilon schedule")

    def task(eps: Number) -> QTable:
        sets = _hole_sets(family, orbit, eps, first - k_max - 1, first + count - 1)
        fine = refine_for(cocycle, sets, max_cells)
        holes = PlacedHoles(family, orbit, eps)
        logger.debug("theta at eps=%s on %d cells", eps, fine.grid.cells)
        return qhat_table(orbit, fine, holes, k_max, first, count, eps, burn_in)

    tables = run(task, schedule) if run is not None else [task(e) for e in schedule]
    raw = np.array([t.theta_raw for t in tables])
    tail = np.array([t.tail for t in tables])
    estimate = ThetaEstimate(
        list(schedule), list(range(first, first + count)), raw, tail, tolerance, tables
    )
    if estimate.converged:
        logger.info("Extremal index converged: orbit mean %.10g", estimate.mean)
    else:
        logger.warning(
            "Extremal index not converged on %d of %d origins (tolerance %g)",
            int(np.sum(~estimate.converged_mask)),
            count,
            tolerance,
        )
    return estimate


# ----------------------------------------------------------------------
# First-order formula and escape-rate asymptotics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class FirstOrderRow:
    eps: Number
    lambda_drop: float
    delta: float
    theta: float

    @property
    def ratio(self) -> float:
        return self.lambda_drop / self.delta if self.delta > 0 else math.nan


@dataclass(frozen=True, eq=False)
class FirstOrderTable:
    index: int
    rows: list[FirstOrderRow]

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])

    def to_rows(self) -> list[tuple]:
        return [(r.eps, r.lambda_drop, r.delta, r.ratio, r.theta) for r in self.rows]


def first_order_check(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    family: HoleFamily,
    schedule: Sequence[Number],
    index: int = 0,
    k_max: int = DEFAULT_K_MAX,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    max_cells: int = DEFAULT_MAX_GRID_CELLS,
) -> FirstOrderTable:
    """(lambda_0 - lambda_eps) / Delta_eps down the schedule, next to theta-hat(eps)."""
    rows = []
    for eps in schedule:
        sets = _hole_sets(family, orbit, eps, index - k_max - 1, index)
        fine = refine_for(cocycle, sets, max_cells)
        holes = PlacedHoles(family, orbit, eps)
        spectral = lambda_open(orbit, fine, holes, 1, index, burn_in, tolerance)
        lam0 = math.exp(float(spectral.log_lambda_closed[0]))
        lam_eps = math.exp(float(spectral.log_lambda_open[0]))
        table = qhat_table(orbit, fine, holes, k_max, index, 1, eps, burn_in, tolerance)
        d = lam0 * float(table.hole_mass[0])
        rows.append(FirstOrderRow(eps, lam0 - lam_eps, d, float(table.theta_raw[0])))
        logger.debug("eps=%s: ratio %.12g, theta %.12g", eps, rows[-1].ratio, rows[-1].theta)
    return FirstOrderTable(index, rows)


@dataclass(frozen=True)
class AsymptoticRow:
    eps: Number
    escape_rate: float
    hole_mass: float
    target: float

    @property
    def ratio(self) -> float:
        return self.escape_rate / self.hole_mass if self.hole_mass > 0 else math.nan


def escape_rate_asymptotics(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    family: HoleFamily,
    schedule: Sequence[Number],
    n: int,
    k_max: int = DEFAULT_K_MAX,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    max_cells: int = DEFAULT_MAX_GRID_CELLS,
) -> list[AsymptoticRow]:
    """
    R_eps / mu(H_eps) against the orbit-averaged theta-hat(eps), over fibers 0..n-1.

    R_eps is the pressure difference; mu(H_eps) is averaged over the same fibers.
    """
    rows = []
    for eps in schedule:
        sets = _hole_sets(family, orbit, eps, -k_max - 1, n - 1)
        fine = refine_for(cocycle, sets, max_cells)
        holes = PlacedHoles(family, orbit, eps)
        spectral = lambda_open(orbit, fine, holes, n, 0, burn_in, tolerance)
        rate = float(np.mean(spectral.log_lambda_closed - spectral.log_lambda_open))
        table = qhat_table(orbit, fine, holes, k_max, 0, n, eps, burn_in, tolerance)
        rows.append(
            AsymptoticRow(
                eps, rate, float(np.mean(table.hole_mass)), float(np.mean(table.theta_raw))
            )
        )
    return rows


# ----------------------------------------------------------------------
# Closed-form extremal indices
# ----------------------------------------------------------------------


def _scaling(t: Mapping[int, Number] | Number | None) -> Scaling:
    if t is None:
        return lambda symbol: 1
    if isinstance(t, Mapping):
        return lambda symbol: t.get(symbol, 1)
    return lambda symbol: t


def analytic_extremal_index_fixed_point(
    orbit: FiberOrbit,
    maps: Mapping[int, PiecewiseLinearMap],
    x0: Number,
    t: Mapping[int, Number] | Number | None = None,
    index: int = 0,
) -> float:
    """
    theta = 1 - min(t_prev / t, 1 / |T'_prev(x0)|) for Lebesgue-invariant fibers sharing
    the fixed point x0, with balls of radius t * eps centred at x0.
    """
    scale = _scaling(t)
    prev = orbit.symbol(index - 1)
    tmap = maps[prev]
    if tmap.evaluate(x0) != x0:
        raise ValidationError(f"{x0} is not a fixed point of {tmap}", x0)
    ratio = float(scale(prev)) / float(scale(orbit.symbol(index)))
    return 1.0 - min(ratio, 1.0 / float(tmap.derivative_magnitude(x0)))


def analytic_extremal_index_left_endpoint(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    t: Mapping[int, Number] | Number | None = None,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> float:
    """
    theta for holes [0, t * eps) when 0 is a common fixed point.

    With the hole image covering the next hole,
    q-hat^(0) = phi_prev(0) g(0) / sum over y in T^-1(0) of phi_prev(y) g(y).
    """
    scale = _scaling(t)
    prev_symbol = orbit.symbol(index - 1)
    tmap = cocycle.map_for(prev_symbol)
    if tmap.evaluate(0) != 0:
        raise ValidationError(f"0 is not a fixed point of {tmap}", tmap)
    window = EquilibriumWindow(orbit, cocycle, index - 1, index, burn_in)
    phi = window.density(index - 1)
    grid = cocycle.grid

    def weighted(y: Number) -> float:
        g = cocycle.weight.factor(tmap.branches[tmap.branch_index(y)].slope)
        return float(phi[grid.cell_of(y)]) * g

    total = sum(weighted(y) for y, _ in tmap.preimage_points(0))
    ratio = float(scale(prev_symbol)) / float(scale(orbit.symbol(index)))
    if ratio >= 1.0 / float(tmap.derivative_magnitude(0)):
        return 1.0 - weighted(0) / total
    if not cocycle.is_lebesgue:
        raise ValidationError("Narrow preceding holes need weight exponent 1", cocycle)
    return 1.0 - float(phi[0]) * ratio / total


def analytic_extremal_index_periodic(tmap: PiecewiseLinearMap, x0: Number, period: int) -> float:
    """theta = 1 - 1 / |(T^p)'(x0)| for a point of minimal period p of a single map."""
    if period < 1:
        raise ValidationError(f"Period must be >= 1, got {period}", period)
    x, slope = exact(x0), Fraction(1)
    for step in range(period):
        slope *= exact(tmap.derivative_magnitude(x))
        x = tmap.evaluate(x)
        if step < period - 1 and x == x0:
            raise ValidationError(f"{x0} has period {step + 1}, not {period}", x0)
    if x != x0:
        raise ValidationError(f"{x0} is not periodic with period {period} under {tmap}", x0)
    return 1.0 - 1.0 / float(slope)
