"""
Property suite run by `quenched-lab selftest`.

Every property builds its own small system from the built-in presets, so the suite
needs no config file. A property passes, fails, or errors (an exception counts as a
failure and is reported with its message).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .driving import DrivingSystem, FiberOrbit, fiber_sequence
from .errors import LabError
from .maps import IntervalSet, beta_map, doubling
from .open_system import (
    HoleFamily,
    PlacedHoles,
    check_forward_invariance,
    escape_rate,
    lambda_open,
    survivor_log_mass,
    survivor_measure,
    survivor_set,
)
from .perturb import qhat_table
from .pressure import pressure_curve
from .raccim import (
    conditional_invariance_check,
    cross_engine_residual,
    decay_rate_estimate,
    forward_identity_residual,
    survivor_mass_identity,
)
from .transfer import Cocycle, Grid, GridDensity, WeightSpec, conformality_residual, refine_for

logger = logging.getLogger(__name__)

Mapper = Callable[[Callable, Iterable], list]

SEED = 20240917
EXACT = 1e-12


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


# ----------------------------------------------------------------------
# Preset systems
# ----------------------------------------------------------------------


def doubling_system(cells: int = 2) -> tuple[FiberOrbit, Cocycle]:
    orbit = fiber_sequence(DrivingSystem.constant(0), 200, 600)
    return orbit, Cocycle({0: doubling()}, WeightSpec(), Grid(cells))


def random_beta_system(
    cells: int = 15, exponent: Fraction = Fraction(1), forward: int = 600
) -> tuple[FiberOrbit, Cocycle]:
    orbit = fiber_sequence(DrivingSystem.iid([0.5, 0.5], SEED), 200, forward)
    maps = {0: beta_map(3), 1: beta_map(5)}
    return orbit, Cocycle(maps, WeightSpec(exponent), Grid(cells))


def _doubling_hole(orbit: FiberOrbit) -> PlacedHoles:
    family = HoleFamily.fixed_holes({0: IntervalSet.single(Fraction(1, 2), Fraction(1))})
    return PlacedHoles(family, orbit)


# ----------------------------------------------------------------------
# Properties
# ----------------------------------------------------------------------


def prop_qhat_sums() -> tuple[bool, str]:
    """Return probabilities sum to 1 at a fixed hole size once k is large."""
    details, ok = [], True
    cases = (
        ("doubling", doubling_system(8), Fraction(1, 8), 120),
        ("beta3", (fiber_sequence(DrivingSystem.constant(0), 400, 200),
                   Cocycle({0: beta_map(3)}, WeightSpec(), Grid(9))), Fraction(1, 9), 150),
    )
    for name, (orbit, cocycle), eps, k_max in cases:
        holes = PlacedHoles(HoleFamily.left(), orbit, eps)
        table = qhat_table(orbit, cocycle, holes, k_max, 0, 1, eps)
        total = float(table.values[0].sum())
        ok = ok and total > 1 - 1e-3
        details.append(f"{name}: sum={total:.6f}")
    return ok, ", ".join(details)


def prop_open_below_closed() -> tuple[bool, str]:
    orbit, cocycle = random_beta_system()
    holes = PlacedHoles(HoleFamily.last_branch(cocycle.maps), orbit)
    spectral = lambda_open(orbit, cocycle, holes, 300)
    excess = float(np.max(spectral.log_lambda_open - spectral.log_lambda_closed))
    return excess <= EXACT, f"max log(lambda_eps / lambda_0) = {excess:.3e}"


def prop_survivor_nesting() -> tuple[bool, str]:
    orbit, cocycle = random_beta_system()
    holes = PlacedHoles(HoleFamily.last_branch(cocycle.maps), orbit)
    previous = survivor_set(orbit, cocycle.maps, 0, holes)
    for n in range(1, 9):
        current = survivor_set(orbit, cocycle.maps, n, holes)
        if not current.body.issubset(previous.body):
            return False, f"X_{n} not inside X_{n - 1}"
        if not check_forward_invariance(orbit, cocycle.maps, current, holes):
            return False, f"T(X_{n}) not inside X_{n - 1} of the next fiber"
        previous = current
    return True, "X_0 > X_1 > ... > X_8, forward invariant"


def prop_conformality() -> tuple[bool, str]:
    orbit, cocycle = random_beta_system(exponent=Fraction(1, 2))
    rng = np.random.default_rng(np.random.SeedSequence(SEED))
    worst = 0.0
    for _ in range(20):
        f = GridDensity(cocycle.grid, rng.random(cocycle.grid.cells) + 0.01)
        residual, tolerance = conformality_residual(orbit, cocycle, f)
        worst = max(worst, residual / tolerance)
    return worst < 1.0, f"worst residual / (10 x sandwich width) = {worst:.3f}"


def prop_cross_engine() -> tuple[bool, str]:
    orbit, cocycle = random_beta_system()
    holes = PlacedHoles(HoleFamily.last_branch(cocycle.maps), orbit)
    rng = np.random.default_rng(np.random.SeedSequence(SEED, spawn_key=(1,)))
    worst = 0.0
    for n in (1, 3, 6):
        f = GridDensity(cocycle.grid, rng.random(cocycle.grid.cells))
        h = GridDensity(cocycle.grid, rng.random(cocycle.grid.cells))
        lhs, rhs = cross_engine_residual(orbit, cocycle, holes, f, h, n)
        worst = max(worst, abs(lhs - rhs))
        spectral = lambda_open(orbit, cocycle, holes, n)
        grid_mass = math.exp(
            survivor_log_mass(orbit, cocycle, holes, n, spectral.log_lambda_closed)
        )
        exact_mass = survivor_measure(survivor_set(orbit, cocycle.maps, n, holes))
        worst = max(worst, abs(grid_mass - exact_mass))
    return worst < EXACT, f"max engine disagreement {worst:.3e}"


def prop_raccim_identities() -> tuple[bool, str]:
    orbit, cocycle = doubling_system()
    holes = _doubling_hole(orbit)
    forward = forward_identity_residual(orbit, cocycle, holes)
    check = conditional_invariance_check(
        orbit, cocycle, holes, IntervalSet.single(Fraction(0), Fraction(1, 4)), 1
    )
    worst = max(forward, check.residual)
    return worst < EXACT, f"forward {forward:.3e}, invariance {check.residual:.3e}"


def prop_survivor_mass() -> tuple[bool, str]:
    details, ok = [], True
    orbit, cocycle = doubling_system()
    eta, product = survivor_mass_identity(orbit, cocycle, _doubling_hole(orbit), 4)
    ok = abs(eta - product) < 1e-10
    details.append(f"doubling {eta:.12f} vs {product:.12f}")
    orbit, cocycle = random_beta_system()
    holes = PlacedHoles(HoleFamily.last_branch(cocycle.maps), orbit)
    eta, product = survivor_mass_identity(orbit, cocycle, holes, 6)
    ok = ok and abs(eta - product) < 1e-10
    details.append(f"beta {eta:.12f} vs {product:.12f}")
    return ok, ", ".join(details)


def prop_pressure_decreasing(run: Mapper | None = None) -> tuple[bool, str]:
    orbit, cocycle = random_beta_system()
    holes = PlacedHoles(HoleFamily.last_branch(cocycle.maps), orbit)
    t_values = [Fraction(i, 4) for i in range(5)]
    curve = pressure_curve(orbit, cocycle, t_values, holes, 200, run=run)
    return curve.is_strictly_decreasing(), f"EP_eps = {np.round(curve.opened, 6).tolist()}"


def prop_doubling_escape() -> tuple[bool, str]:
    orbit, cocycle = doubling_system()
    rate = escape_rate(orbit, cocycle, _doubling_hole(orbit), 400)
    err = max(abs(rate.decay - math.log(2)), abs(rate.pressure - math.log(2)))
    return err < EXACT, f"decay {rate.decay:.15f}, pressure {rate.pressure:.15f}"


def prop_doubling_decay() -> tuple[bool, str]:
    orbit, base = doubling_system()
    sets = [IntervalSet.single(Fraction(0), Fraction(1, 3))]
    cocycle = refine_for(base, sets)
    uniform = np.full(cocycle.grid.cells, 1.0 / cocycle.grid.cells)
    f = GridDensity.indicator(cocycle.grid, sets[0]).centered(uniform)
    report = decay_rate_estimate(orbit, cocycle, f, f)
    if not report.resolvable:
        return False, report.message
    ok = report.kappa <= 0.55 and report.r_squared > 0.95
    return ok, f"kappa {report.kappa:.4f}, R^2 {report.r_squared:.4f}"


PROPERTIES: dict[str, Callable[..., tuple[bool, str]]] = {
    "qhat_sums_to_one": prop_qhat_sums,
    "open_multiplier_below_closed": prop_open_below_closed,
    "survivor_nesting": prop_survivor_nesting,
    "conformality_panel": prop_conformality,
    "cross_engine_exactness": prop_cross_engine,
    "raccim_identities": prop_raccim_identities,
    "survivor_mass_identity": prop_survivor_mass,
    "pressure_strictly_decreasing": prop_pressure_decreasing,
    "doubling_escape_rate": prop_doubling_escape,
    "doubling_decay_rate": prop_doubling_decay,
}


def run_selftest(
    run: Mapper | None = None, only: Iterable[str] | None = None
) -> list[PropertyResult]:
    """Evaluate every property (or the named ones) and log each outcome."""
    names = list(only) if only is not None else list(PROPERTIES)
    results = []
    for name in names:
        prop = PROPERTIES[name]
        try:
            if prop is prop_pressure_decreasing:
                passed, detail = prop(run)
            else:
                passed, detail = prop()
        except (LabError, ArithmeticError, ValueError) as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        log = logger.info if passed else logger.error
        log("Property %s: %s (%s)", name, "ok" if passed else "FAILED", detail)
        results.append(PropertyResult(name, bool(passed), detail))
    return results
