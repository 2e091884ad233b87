"""
Conditionally invariant densities of the open cocycle and decay of correlations.

eta_j has density (1 - 1_H) phi_eps_j / c_j against the closed conformal measure,
where c_j = nu_j((1 - 1_H) phi_eps_j). Along the orbit
L_j eta_j = lambda_0_j alpha_j eta_{j+1} off H_{j+1}, with alpha_j = exp(log_alpha[j]).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats

from .driving import FiberOrbit
from .errors import ValidationError
from .maps import IntervalSet, PiecewiseLinearMap
from .open_system import HoleSequence, lambda_open, survivor_set
from .transfer import (
    DEFAULT_BURN_IN,
    DEFAULT_SANDWICH_BURN_IN,
    DEFAULT_TOLERANCE,
    Cocycle,
    ConformalMeasure,
    DensityWalker,
    Grid,
    GridDensity,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_LAG = 20
DEFAULT_SKIP_LAGS = 2
DEFAULT_NOISE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class RaccimDensity:
    """
    Density of eta at one fiber.

    Attributes:
        values: Cell values, zero on hole cells.
        normalisation: nu((1 - 1_H) phi_eps) before rescaling.
        alpha: Conditioned survival factor at this fiber.
        cell_masses: Conformal cell masses the density integrates against.
    """

    index: int
    grid: Grid
    values: np.ndarray
    normalisation: float
    alpha: float
    hole: IntervalSet
    cell_masses: np.ndarray

    def measure(self, s: IntervalSet) -> float:
        return float(self.cell_masses @ (self.values * self.grid.cell_fractions(s)))

    @property
    def total(self) -> float:
        return float(self.cell_masses @ self.values)

    @property
    def max_on_hole(self) -> float:
        inside = self.grid.cell_fractions(self.hole) >= 1.0
        return float(self.values[inside].max()) if inside.any() else 0.0

    def to_rows(self) -> list[tuple[int, float]]:
        return [(i, float(v)) for i, v in enumerate(self.values)]


def _measure(orbit: FiberOrbit, cocycle: Cocycle, first: int, last: int) -> ConformalMeasure:
    return ConformalMeasure(cocycle, orbit.symbol, first, last, DEFAULT_SANDWICH_BURN_IN)


def _closed_multiplier(cocycle: Cocycle, measure: ConformalMeasure, symbol: int, j: int) -> float:
    # nu_{j+1}(L_j 1) with nu_j(1) = 1
    pushed = cocycle.closed(symbol).apply(np.ones(cocycle.grid.cells))
    return measure.integrate(j + 1, pushed)


def raccim_density(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
    measure: ConformalMeasure | None = None,
) -> RaccimDensity:
    """eta at fiber `index` with its survival factor alpha."""
    if measure is None:
        measure = _measure(orbit, cocycle, index, index + 1)
    spectral = lambda_open(
        orbit, cocycle, holes, 1, index, burn_in, tolerance, keep_densities=True, measure=measure
    )
    hole = holes.at(index)
    keep = 1.0 - cocycle.grid.cell_fractions(hole)
    c = float(spectral.hole_free_mass[0])
    values = keep * spectral.densities[0] / c
    return RaccimDensity(
        index=index,
        grid=cocycle.grid,
        values=values,
        normalisation=c,
        alpha=math.exp(float(spectral.log_alpha[0])),
        hole=hole,
        cell_masses=measure.cells(index),
    )


def forward_identity_residual(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> float:
    """
    Relative sup-norm residual of L eta_j = lambda_0 alpha eta_{j+1} off H_{j+1}.

    eta_{j+1} is computed independently of eta_j.
    """
    measure = _measure(orbit, cocycle, index, index + 2)
    here = raccim_density(orbit, cocycle, holes, index, burn_in, measure=measure)
    there = raccim_density(orbit, cocycle, holes, index + 1, burn_in, measure=measure)
    lam0 = _closed_multiplier(cocycle, measure, orbit.symbol(index), index)
    pushed = cocycle.closed(orbit.symbol(index)).apply(here.values)
    off_hole = cocycle.grid.cell_fractions(holes.at(index + 1)) == 0.0
    diff = pushed[off_hole] - lam0 * here.alpha * there.values[off_hole]
    scale = max(float(np.abs(there.values).max()), 1e-300)
    return float(np.abs(diff).max()) / scale if diff.size else 0.0


def pullback_along(
    orbit: FiberOrbit,
    maps: Mapping[int, PiecewiseLinearMap],
    target: IntervalSet,
    start: int,
    n: int,
) -> IntervalSet:
    """T_start^{-n}(target) along the fiber word."""
    out = target
    for j in range(n - 1, -1, -1):
        out = maps[orbit.symbol(start + j)].pullback(out)
    return out


@dataclass(frozen=True)
class InvarianceCheck:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def conditional_invariance_check(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    a: IntervalSet,
    n: int,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> InvarianceCheck:
    """eta_j(T^-n A ∩ X_{j,n}) against eta_{j+n}(A) eta_j(X_{j,n})."""
    if n < 0:
        raise ValidationError(f"Depth must be >= 0, got {n}", n)
    measure = _measure(orbit, cocycle, index, index + n + 1)
    survivors = survivor_set(orbit, cocycle.maps, n, holes, index)
    preimage = pullback_along(orbit, cocycle.maps, a, index, n)
    here = raccim_density(orbit, cocycle, holes, index, burn_in, measure=measure)
    there = raccim_density(orbit, cocycle, holes, index + n, burn_in, measure=measure)
    lhs = here.measure(preimage & survivors.body)
    rhs = there.measure(a) * here.measure(survivors.body)
    return InvarianceCheck(lhs, rhs)


def survivor_mass_identity(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    n: int,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
) -> tuple[float, float]:
    """
    (eta_j(X_{j,n}) from the exact survivor set, product of alpha over n fibers).
    """
    measure = _measure(orbit, cocycle, index, index + max(n, 1))
    eta = raccim_density(orbit, cocycle, holes, index, burn_in, tolerance, measure)
    survivors = survivor_set(orbit, cocycle.maps, n, holes, index)
    spectral = lambda_open(orbit, cocycle, holes, n, index, burn_in, tolerance, measure=measure)
    return eta.measure(survivors.body), math.exp(float(np.sum(spectral.log_alpha)))


def cross_engine_residual(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    holes: HoleSequence,
    f: GridDensity,
    h: GridDensity,
    n: int,
    index: int = 0,
) -> tuple[float, float]:
    """
    Both sides of nu_{j+n}(h L_eps^n f) = lambda_0^n nu_j(1_{X_{j,n-1}} f h∘T^n).

    The left side uses open matrices; the right side uses exact survivor sets and
    pullbacks of the cells of h. The two agree to rounding on aligned grids with
    weight exponent 1.
    """
    if n < 1:
        raise ValidationError(f"Identity needs n >= 1, got {n}", n)
    grid = cocycle.grid
    measure = _measure(orbit, cocycle, index, index + n)
    pushed = np.array(f.values, dtype=float)
    log_lambda = 0.0
    for k in range(n):
        j = index + k
        pushed = cocycle.matrix(orbit.symbol(j), holes.at(j)).apply(pushed)
        log_lambda += math.log(_closed_multiplier(cocycle, measure, orbit.symbol(j), j))
    lhs = measure.integrate(index + n, h.values * pushed)

    survivors = survivor_set(orbit, cocycle.maps, n - 1, holes, index).body
    rhs = 0.0
    for cell in np.flatnonzero(h.values):
        lo = Fraction(int(cell), grid.cells)
        target = IntervalSet.single(lo, lo + Fraction(1, grid.cells))
        region = pullback_along(orbit, cocycle.maps, target, index, n) & survivors
        if region:
            rhs += float(h.values[cell]) * measure.measure(index, region, grid, f.values)
    return lhs, math.exp(log_lambda) * rhs


# ----------------------------------------------------------------------
# Decay of correlations
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecayReport:
    """Correlation gaps at lags 1..max_lag and the fitted exponential rate."""

    lags: np.ndarray
    gaps: np.ndarray
    kappa: float | None
    r_squared: float | None
    fitted_lags: np.ndarray
    message: str = ""

    @property
    def resolvable(self) -> bool:
        return self.kappa is not None

    def summary(self) -> dict:
        return {
            "kappa": self.kappa,
            "r_squared": self.r_squared,
            "fitted_lags": [int(k) for k in self.fitted_lags],
            "message": self.message,
        }

    def to_rows(self) -> list[tuple[int, float]]:
        return [(int(k), float(g)) for k, g in zip(self.lags, self.gaps)]


def correlation_gaps(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    f: GridDensity,
    h: GridDensity,
    max_lag: int = DEFAULT_MAX_LAG,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
    tolerance: float = DEFAULT_TOLERANCE,
) -> np.ndarray:
    """
    |mu_j((f∘T^n) h) - mu_{j+n}(f) mu_j(h)| for n = 1..max_lag.

    By duality mu_j((f∘T^n) h) = nu_{j+n}(f u_n) with u_n = L^n(phi_j h) divided by
    the closed multipliers.
    """
    measure = _measure(orbit, cocycle, index, index + max_lag)
    walker = DensityWalker(cocycle, orbit.symbol, index, burn_in, measure, tolerance=tolerance)
    phi = walker.density
    mean_h = measure.integrate(index, phi * h.values)
    block = np.column_stack([phi, phi * h.values])
    gaps = np.empty(max_lag)
    for n in range(1, max_lag + 1):
        j = index + n
        block = cocycle.closed(orbit.symbol(j - 1)).apply(block)
        block /= measure.integrate(j, block[:, 0])
        cells = measure.cells(j)
        correlated = cells @ (f.values * block[:, 1])
        gaps[n - 1] = abs(correlated - (cells @ (f.values * block[:, 0])) * mean_h)
    return gaps


def decay_rate_estimate(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    f: GridDensity,
    h: GridDensity,
    max_lag: int = DEFAULT_MAX_LAG,
    skip_lags: int = DEFAULT_SKIP_LAGS,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    index: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> DecayReport:
    """Log-linear fit of correlation gaps over lags > skip_lags that clear the noise floor."""
    gaps = correlation_gaps(orbit, cocycle, f, h, max_lag, index, burn_in)
    lags = np.arange(1, max_lag + 1)
    usable = (lags > skip_lags) & (gaps > noise_floor)
    if usable.sum() < 2:
        logger.info("All correlation gaps below %.1e: decay faster than resolvable", noise_floor)
        return DecayReport(lags, gaps, None, None, lags[usable], "decay faster than resolvable")
    fit = stats.linregress(lags[usable], np.log(gaps[usable]))
    kappa = math.exp(fit.slope)
    r_squared = float(fit.rvalue) ** 2
    logger.info("Decay rate %.6f (R^2 %.4f) over %d lags", kappa, r_squared, int(usable.sum()))
    return DecayReport(lags, gaps, kappa, r_squared, lags[usable])
