"""
Expected pressure of the geometric potential -t log|T'| and Bowen's formula.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .driving import FiberOrbit
from .errors import ConvergenceError, ValidationError
from .maps import Number, PiecewiseLinearMap, exact
from .open_system import HoleFamily, HoleSequence, NoHoles, PlacedHoles, lambda_open
from .transfer import DEFAULT_BURN_IN, Cocycle, lambda_closed
from .transfer import DEFAULT_TOLERANCE as DENSITY_TOLERANCE
from .validation import large_images, large_images_wrt_hole

logger = logging.getLogger(__name__)

DEFAULT_ORBIT_LENGTH = 2000
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 40
MONOTONE_TOLERANCE = 1e-8

Mapper = Callable[[Callable, Iterable], list]


def expected_pressure(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    t: Number,
    holes: HoleSequence | None = None,
    n: int = DEFAULT_ORBIT_LENGTH,
    start: int = 0,
    burn_in: int = DEFAULT_BURN_IN,
) -> float:
    """Birkhoff mean of log lambda over n fibers for the weight |T'|^-t."""
    if exact(t) < 0:
        raise ValidationError(f"Weight exponent must be >= 0, got {t}", t)
    weighted = cocycle.with_weight(t)
    if holes is None or isinstance(holes, NoHoles):
        return lambda_closed(orbit, weighted, n, start, burn_in, DENSITY_TOLERANCE).mean_log
    spectral = lambda_open(orbit, weighted, holes, n, start, burn_in, DENSITY_TOLERANCE)
    return spectral.mean_log_open


@dataclass(frozen=True, eq=False)
class PressureCurve:
    t_values: np.ndarray
    closed: np.ndarray
    opened: np.ndarray
    n: int
    eps: Number | None = None

    def is_strictly_decreasing(self, tolerance: float = MONOTONE_TOLERANCE) -> bool:
        return bool(np.all(np.diff(self.closed) < -tolerance)) and bool(
            np.all(np.diff(self.opened) < -tolerance)
        )

    def to_rows(self) -> list[tuple[float, float, float]]:
        return [
            (float(t), float(c), float(o))
            for t, c, o in zip(self.t_values, self.closed, self.opened)
        ]


def pressure_curve(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    t_values: Sequence[Number],
    holes: HoleSequence | None = None,
    n: int = DEFAULT_ORBIT_LENGTH,
    burn_in: int = DEFAULT_BURN_IN,
    eps: Number | None = None,
    run: Mapper | None = None,
) -> PressureCurve:
    """
    Closed and open expected pressure on a grid of exponents.

    Samples are independent; `run` may evaluate them on a worker pool as long as it
    returns results in input order.
    """
    ts = sorted(exact(t) for t in t_values)

    def sample(t: Number) -> tuple[float, float]:
        closed = expected_pressure(orbit, cocycle, t, None, n, 0, burn_in)
        if holes is None:
            return closed, closed
        return closed, expected_pressure(orbit, cocycle, t, holes, n, 0, burn_in)

    values = run(sample, ts) if run is not None else [sample(t) for t in ts]
    curve = PressureCurve(
        np.array([float(t) for t in ts]),
        np.array([v[0] for v in values]),
        np.array([v[1] for v in values]),
        n,
        eps,
    )
    if not curve.is_strictly_decreasing():
        logger.warning("Pressure curve is not strictly decreasing on %d samples", len(ts))
    return curve


@dataclass(frozen=True)
class BowenResult:
    """Root h of t -> EP_eps(t) with its certifying bracket."""

    h: float
    bracket: tuple[float, float]
    tolerance: float
    iterations: int
    pressure_at_root: float
    hypotheses: dict[str, bool] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "h": self.h,
            "bracket": list(self.bracket),
            "tol": self.tolerance,
            "iterations": self.iterations,
            "pressure_at_root": self.pressure_at_root,
            "hypotheses": dict(self.hypotheses),
        }


def structural_hypotheses(
    maps: Mapping[int, PiecewiseLinearMap],
    family: HoleFamily,
    eps: Number | None,
    symbols: Iterable[int],
) -> dict[str, bool]:
    """
    Large images: every branch of every fiber map is full.
    Large images with respect to H: every hole is a union of full-branch domains.
    """
    used = sorted(set(symbols))
    return {
        "large_images": large_images({s: maps[s] for s in used}),
        "large_images_wrt_hole": large_images_wrt_hole(maps, family, eps, used),
    }


def bowen_dimension(
    orbit: FiberOrbit,
    cocycle: Cocycle,
    family: HoleFamily,
    eps: Number | None = None,
    n: int = DEFAULT_ORBIT_LENGTH,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    burn_in: int = DEFAULT_BURN_IN,
) -> BowenResult:
    """
    Bisection for the unique h in [0, 1] with EP_eps(h) = 0.

    Raises:
        ValidationError: "dimension bracket violated" when EP(0) < 0 or EP(1) > 0.
        ConvergenceError: When max_iterations bisections do not reach |EP| < tolerance.
    """
    holes = PlacedHoles(family, orbit, eps)
    symbols = sorted(set(int(s) for s in orbit.window(0, n - 1)))
    hypotheses = structural_hypotheses(cocycle.maps, family, eps, symbols)
    for name, held in hypotheses.items():
        if not held:
            logger.warning("Bowen hypothesis '%s' does not hold structurally", name)

    def ep(t: float) -> float:
        return expected_pressure(orbit, cocycle, t, holes, n, 0, burn_in)

    at_zero = ep(0)
    if abs(at_zero) < tolerance:
        logger.info("EP(0) = %.3g: survivor set carries no entropy, h = 0", at_zero)
        return BowenResult(0.0, (0.0, 0.0), tolerance, 0, at_zero, hypotheses)
    at_one = ep(1)
    if at_zero < -tolerance or at_one > tolerance:
        raise ValidationError(
            f"dimension bracket violated: EP(0) = {at_zero:.6g}, EP(1) = {at_one:.6g}",
            (at_zero, at_one),
        )
    if abs(at_one) < tolerance:
        return BowenResult(1.0, (1.0, 1.0), tolerance, 0, at_one, hypotheses)

    lo, hi = 0.0, 1.0
    value = at_zero
    for iteration in range(1, max_iterations + 1):
        mid = (lo + hi) / 2
        value = ep(mid)
        logger.debug("Bowen bisection %d: EP(%.12f) = %.3e", iteration, mid, value)
        if abs(value) < tolerance:
            logger.info("Bowen dimension %.10f after %d bisections", mid, iteration)
            return BowenResult(mid, (lo, hi), tolerance, iteration, value, hypotheses)
        if value > 0:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(
        f"Bowen bisection stopped in [{lo:.12f}, {hi:.12f}] with EP = {value:.3e}",
        step=max_iterations,
        distance=abs(value),
    )
