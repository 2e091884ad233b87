"""
Experiment runners.

build_system() turns an ExperimentConfig into maps, a driving system, a hole family and a
cocycle. Each run_* function computes one subcommand's data, writes its CSV files through
a ReportWriter and returns the JSON summary. This module owns the worker pool; every
other module receives a plain order-preserving `run(task, items)` callable.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

import numpy as np

from .cache import MatrixCache
from .config import ExperimentConfig
from .driving import DrivingSystem, FiberOrbit, fiber_sequence
from .errors import LabError, ValidationError
from .evt import (
    ObservationFunction,
    gumbel_prediction,
    hitting_time_mc,
    solve_thresholds,
    survivor_probability_curve,
)
from .maps import IntervalSet, Number, PiecewiseLinearMap
from .open_system import HoleFamily, PlacedHoles, escape_rate, lambda_open, survivor_set
from .perturb import (
    analytic_extremal_index_fixed_point,
    analytic_extremal_index_left_endpoint,
    eps_schedule,
    escape_rate_asymptotics,
    first_order_check,
    theta,
)
from .pressure import bowen_dimension, pressure_curve
from .raccim import (
    conditional_invariance_check,
    decay_rate_estimate,
    forward_identity_residual,
    raccim_density,
    survivor_mass_identity,
)
from .reports import ReportWriter
from .transfer import (
    Cocycle,
    Grid,
    GridDensity,
    WeightSpec,
    closed_equilibrium,
    conformality_residual,
    minimal_aligned_cells,
    refine_for,
)
from .validation import ValidationReport, validate_system

logger = logging.getLogger(__name__)

Mapper = Callable[[Callable, Iterable], list]

FALLBACK_GRID_CELLS = 2**12
PANEL_SIZE = 20
SANDWICH_FIBERS = 200


@contextmanager
def worker_pool(threads: int) -> Iterator[Mapper | None]:
    """An order-preserving map over a thread pool, or None for serial runs."""
    if threads <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix="lab-worker") as executor:
        yield lambda task, items: list(executor.map(task, items))


@dataclass
class LabSystem:
    """Everything an experiment needs, assembled from one config."""

    config: ExperimentConfig
    driving: DrivingSystem
    maps: dict[int, PiecewiseLinearMap]
    family: HoleFamily
    cocycle: Cocycle

    @property
    def eps(self) -> Number | None:
        return self.config.holes.epsilon if self.family.shrinks else None

    @property
    def schedule(self) -> list[Number]:
        perturb = self.config.perturb
        return eps_schedule(perturb.epsilon, perturb.schedule_steps)

    def orbit(self, backward: int, forward: int) -> FiberOrbit:
        return fiber_sequence(self.driving, backward, forward)

    def holes(self, orbit: FiberOrbit, eps: Number | None = None) -> PlacedHoles:
        return PlacedHoles(self.family, orbit, eps if eps is not None else self.eps)

    def margin(self) -> int:
        transfer = self.config.transfer
        return max(transfer.burn_in, transfer.sandwich_burn_in) + 2


def build_driving(config: ExperimentConfig) -> DrivingSystem:
    cfg = config.driving
    if cfg.kind == "iid":
        return DrivingSystem.iid([float(p) for p in cfg.probabilities], config.driving_seed)
    if cfg.kind == "rotation":
        return DrivingSystem.rotation(cfg.alpha, [float(c) for c in cfg.arcs], cfg.initial_angle)
    if cfg.kind == "periodic":
        return DrivingSystem.periodic(cfg.word)
    return DrivingSystem.constant(cfg.symbol)


def build_family(config: ExperimentConfig, maps: dict[int, PiecewiseLinearMap]) -> HoleFamily:
    cfg = config.holes
    if cfg.kind == "fixed":
        return HoleFamily.fixed_holes(
            {s: IntervalSet.from_pairs(pairs) for s, pairs in cfg.intervals.items()}
        )
    if cfg.kind == "last_branch":
        return HoleFamily.last_branch(maps)
    if cfg.kind == "left":
        return HoleFamily.left(cfg.scales)
    if cfg.kind == "ball":
        return HoleFamily.ball(cfg.centers, cfg.scales)
    return HoleFamily.none()


def build_system(config: ExperimentConfig) -> LabSystem:
    """Maps, driving, holes and the cocycle on the configured (or smallest aligned) grid."""
    maps = {s: mc.build() for s, mc in sorted(config.maps.items())}
    driving = build_driving(config)
    family = build_family(config, maps)
    eps = config.holes.epsilon if family.shrinks else None
    sets = [family.at(s, eps) for s in maps] if (eps is not None or not family.shrinks) else []

    cells = config.transfer.grid_cells
    if not cells:
        aligned = minimal_aligned_cells(list(maps.values()), [s for s in sets if s])
        if aligned is None:
            logger.warning(
                "Maps admit no aligned grid; using %d cells (approximate-grid)",
                FALLBACK_GRID_CELLS,
            )
            cells = FALLBACK_GRID_CELLS
        else:
            cells = aligned
    cocycle = Cocycle(maps, WeightSpec(config.transfer.weight_exponent), Grid(cells), MatrixCache())
    logger.info("Assembled %r with %s driving", cocycle, driving.kind)
    return LabSystem(config, driving, maps, family, cocycle)


def observation_for(
    config: ExperimentConfig, maps: dict[int, PiecewiseLinearMap]
) -> ObservationFunction:
    cfg = config.evt
    centers = dict(cfg.centers)
    if cfg.observation != "custom" and len(centers) == 1 and len(maps) > 1:
        (only,) = centers.values()
        centers = {s: only for s in maps}
    return ObservationFunction(cfg.observation, centers, cfg.knots)


# ----------------------------------------------------------------------
# Runners
# ----------------------------------------------------------------------


def run_validate(system: LabSystem, writer: ReportWriter | None = None) -> ValidationReport:
    """Structural hypotheses for the configured maps, holes and epsilon schedule."""
    config = system.config
    if system.family.shrinks:
        eps_values: list[Number | None] = list(system.schedule)
        if system.eps is not None and system.eps not in eps_values:
            eps_values.insert(0, system.eps)
    else:
        eps_values = [None]
    report = validate_system(
        system.maps,
        system.family,
        eps_values,
        config.transfer.grid_cells,
        bowen=config.holes.kind in ("fixed", "last_branch"),
        max_components=config.holes.max_components,
    )
    if writer is not None:
        writer.write_csv(
            "validation.csv", ["check", "severity", "passed", "detail"], report.to_rows()
        )
    return report


def _test_panel(grid: Grid, seed: int, size: int = PANEL_SIZE) -> list[GridDensity]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(size,)))
    return [GridDensity(grid, rng.random(grid.cells) + 0.01) for _ in range(size)]


def run_closed_spectrum(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    transfer = config.transfer
    n = transfer.orbit_length
    orbit = system.orbit(system.margin(), n + system.margin())
    cocycle = system.cocycle
    half = IntervalSet.single(Fraction(0), Fraction(1, 2))
    test = GridDensity.indicator(cocycle.grid, half) if n <= SANDWICH_FIBERS else None
    eq = closed_equilibrium(
        orbit, cocycle, n, 0, transfer.burn_in, transfer.sandwich_burn_in, transfer.tolerance,
        test_function=test,
    )

    def residual(f: GridDensity) -> tuple[float, float]:
        return conformality_residual(
            orbit, cocycle, f, 0, transfer.sandwich_burn_in, transfer.burn_in
        )

    panel = _test_panel(cocycle.grid, config.run.seed)
    residuals = run(residual, panel) if run is not None else [residual(f) for f in panel]
    worst = max(r / tol for r, tol in residuals)

    writer.write_csv(
        "closed_spectrum.csv", ["n", "symbol", "log_lambda", "nu_lower", "nu_upper"], eq.to_rows()
    )
    writer.write_csv("density.csv", ["cell", "phi"], list(enumerate(eq.density(0))))
    writer.write_csv("orbit.csv", ["n", "symbol"], [r for r in orbit.to_rows() if 0 <= r[0] <= n])
    writer.write_csv("matrix.csv", ["i", "j", "value"], cocycle.closed(orbit.symbol(0)).to_rows())
    return {
        "grid_cells": cocycle.grid.cells,
        "aligned": cocycle.aligned,
        "n": n,
        "expected_pressure": float(np.mean(eq.log_lambda)),
        "density_distance": eq.distance,
        "conformality_worst_ratio": worst,
        "conformality_ok": worst < 1.0,
    }


def run_escape_rate(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    n = config.run.orbit_length
    orbit = system.orbit(system.margin(), n + system.margin())
    holes = system.holes(orbit)
    cocycle = refine_for(system.cocycle, [holes.at(j) for j in range(0, min(n, 64))])
    spectral = lambda_open(
        orbit, cocycle, holes, n, 0, config.transfer.burn_in, config.transfer.tolerance,
        keep_densities=True,
    )
    rate = escape_rate(
        orbit, cocycle, holes, n, 0, config.transfer.burn_in, config.transfer.tolerance, spectral
    )
    writer.write_csv(
        "escape_rate.csv",
        ["n", "symbol", "log_lambda_closed", "log_lambda_open"],
        [
            (j, orbit.symbol(j), c, o)
            for j, (c, o) in enumerate(zip(spectral.log_lambda_closed, spectral.log_lambda_open))
        ],
    )
    return {
        "n": n,
        "eps": system.eps,
        "grid_cells": cocycle.grid.cells,
        "decay": rate.decay,
        "pressure": rate.pressure,
        "gap": rate.gap,
        "tolerance": rate.tolerance,
        "symbol_frequencies": np.bincount(
            orbit.window(0, n - 1), minlength=system.driving.symbols
        ) / n,
    }


def _oracle(system: LabSystem, orbit: FiberOrbit, origins: list[int]) -> list[float] | None:
    """Closed-form theta per origin when the hole family sits at a common fixed point."""
    family = system.family
    try:
        if family.kind == "left" and all(m.evaluate(0) == 0 for m in system.maps.values()):
            return [
                analytic_extremal_index_left_endpoint(
                    orbit, system.cocycle, family.scales or None, j, system.config.transfer.burn_in
                )
                for j in origins
            ]
        if family.kind == "ball":
            centers = set(family.centers.values())
            if len(centers) == 1:
                (x0,) = centers
                if all(m.evaluate(x0) == x0 for m in system.maps.values()):
                    return [
                        analytic_extremal_index_fixed_point(
                            orbit, system.maps, x0, family.scales or None, j
                        )
                        for j in origins
                    ]
    except LabError as e:
        logger.warning("No closed-form extremal index: %s", e)
    return None


def run_extremal_index(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    perturb = config.perturb
    if not system.family.shrinks:
        raise ValidationError("extremal-index needs a shrinking hole family (left or ball)")
    count = perturb.fibers
    margin = system.margin() + perturb.k_max + 2
    orbit = system.orbit(margin, max(count, perturb.orbit_length) + margin)
    estimate = theta(
        orbit, system.cocycle, system.family, system.schedule, perturb.k_max, 0, count,
        config.transfer.burn_in, perturb.convergence_tolerance, perturb.max_grid_cells, run,
    )
    writer.write_csv(
        "extremal_index.csv", ["origin", "eps", "theta_raw", "theta_clamped", "tail"],
        estimate.to_rows(),
    )
    origins = list(estimate.origins)
    oracle = _oracle(system, orbit, origins)
    first_order = first_order_check(
        orbit, system.cocycle, system.family, system.schedule, 0, perturb.k_max,
        config.transfer.burn_in, config.transfer.tolerance, perturb.max_grid_cells,
    )
    writer.write_csv(
        "first_order.csv", ["eps", "lambda_drop", "delta", "ratio", "theta"], first_order.to_rows()
    )
    asymptotics = escape_rate_asymptotics(
        orbit, system.cocycle, system.family, system.schedule[:4], perturb.orbit_length,
        perturb.k_max, config.transfer.burn_in, config.transfer.tolerance, perturb.max_grid_cells,
    )
    writer.write_csv(
        "escape_asymptotics.csv", ["eps", "escape_rate", "hole_mass", "ratio", "theta"],
        [(r.eps, r.escape_rate, r.hole_mass, r.ratio, r.target) for r in asymptotics],
    )
    oracle_error = None
    if oracle is not None:
        oracle_error = float(np.max(np.abs(np.asarray(oracle) - estimate.limit)))
        writer.write_csv(
            "extremal_index_oracle.csv", ["origin", "theta_oracle", "theta_estimate"],
            list(zip(origins, oracle, estimate.limit)),
        )
    return {
        "origins": count,
        "schedule": [str(e) for e in system.schedule],
        "theta_mean": estimate.mean,
        "theta_raw_mean": float(np.mean(estimate.raw[-1])),
        "converged": estimate.converged,
        "oracle_mean": float(np.mean(oracle)) if oracle is not None else None,
        "oracle_max_error": oracle_error,
        "first_order_final_ratio": first_order.rows[-1].ratio if first_order.rows else None,
    }


def _theta_for_observation(
    system: LabSystem, observation: ObservationFunction, run: Mapper | None
) -> tuple[np.ndarray, str]:
    """theta per origin for the balls the observation cuts out, or the configured rate."""
    config = system.config
    if config.evt.rate is not None:
        return np.array([config.evt.rate]), "config"
    if observation.kind == "custom":
        raise ValidationError("Custom observations need evt.rate for the Gumbel prediction")
    centers = {s: observation.center(s) for s in system.maps}
    scales = config.evt.t_by_symbol or None
    if all(c == 0 for c in centers.values()):
        family = HoleFamily.left(scales)
    else:
        family = HoleFamily.ball({s: _exact_center(c) for s, c in centers.items()}, scales)
    perturb = config.perturb
    count = perturb.fibers if system.driving.kind != "constant" else 1
    margin = system.margin() + perturb.k_max + 2
    orbit = system.orbit(margin, count + margin)
    estimate = theta(
        orbit, system.cocycle, family, system.schedule, perturb.k_max, 0, count,
        config.transfer.burn_in, perturb.convergence_tolerance, perturb.max_grid_cells, run,
    )
    return np.asarray(estimate.limit), "estimated"


def _exact_center(c: float) -> Number:
    return Fraction(c).limit_denominator(2**20)


def run_gumbel(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    observation = observation_for(config, system.maps)
    n_values = config.evt.n_values
    orbit = system.orbit(system.margin() + 2, max(n_values) + system.margin())
    schedule = solve_thresholds(
        observation, config.evt.scaling, n_values, orbit, system.cocycle,
        config.transfer.burn_in, config.transfer.tolerance,
    )
    thetas, source = _theta_for_observation(system, observation, run)
    t = config.evt.scaling
    t_values = (
        [float(t.get(orbit.symbol(j), 1)) for j in range(len(thetas))]
        if isinstance(t, dict) else float(t)
    )
    prediction = gumbel_prediction(thetas, t_values)
    report = survivor_probability_curve(
        orbit, schedule, config.transfer.burn_in, config.transfer.tolerance, prediction, run
    )
    writer.write_csv(
        "gumbel_curve.csv", ["N", "nu_survivor", "mu_survivor", "lambda_ratio", "gumbel"],
        report.to_rows(),
    )
    writer.write_csv(
        "thresholds.csv", ["N", "fiber", "lo", "hi", "xi"], schedule.to_rows(0, 4)
    )
    final = report.final
    return {
        "n_values": list(n_values),
        "theta_source": source,
        "theta_mean": float(np.mean(thetas)),
        "gumbel_prediction": prediction,
        "final": {
            "N": final.n,
            "nu_survivor": final.nu_survivor,
            "mu_survivor": final.mu_survivor,
            "lambda_ratio": final.lambda_ratio,
            "spread": final.spread,
            "error": abs(final.mu_survivor - prediction),
        },
    }


def run_hitting_times(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    evt = config.evt
    observation = observation_for(config, system.maps)
    thetas, source = _theta_for_observation(system, observation, run)
    rate = float(np.mean(thetas))
    orbit = system.orbit(system.margin() + 2, evt.hitting_n + system.margin())
    result = hitting_time_mc(
        orbit, system.cocycle, observation, evt.scaling, evt.hitting_n, evt.samples,
        config.run.seed, rate, evt.buffer_factor, evt.block_size, config.transfer.burn_in, run,
    )
    statistic, pvalue = result.ks()
    writer.write_csv("hitting_times.csv", ["sample", "tau", "scaled"], result.to_rows())
    return {
        "N": evt.hitting_n,
        "samples": evt.samples,
        "rate": rate,
        "rate_source": source,
        "hole_mass": result.hole_mass,
        "ks_statistic": statistic,
        "ks_pvalue": pvalue,
        "buffer_extensions": result.extensions,
        "survival_at_1": result.survival(1.0),
        "exponential_at_1": math.exp(-rate),
    }


def run_bowen(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    pressure = config.pressure
    n = pressure.orbit_length
    orbit = system.orbit(pressure.burn_in + 2, n + system.margin())
    holes = system.holes(orbit)
    curve = pressure_curve(
        orbit, system.cocycle, pressure.t_values, holes, n, pressure.burn_in, system.eps, run
    )
    writer.write_csv("pressure.csv", ["t", "EP_closed", "EP_open"], curve.to_rows())
    result = bowen_dimension(
        orbit, system.cocycle, system.family, system.eps, n, pressure.tolerance,
        pressure.max_iterations, pressure.burn_in,
    )
    summary = result.summary()
    summary["pressure_strictly_decreasing"] = curve.is_strictly_decreasing()
    return summary


def run_raccim(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    depth = config.raccim.depth
    orbit = system.orbit(system.margin(), depth + system.margin() + 2)
    holes = system.holes(orbit)
    cocycle = refine_for(system.cocycle, [holes.at(j) for j in range(depth + 2)])
    burn_in = config.transfer.burn_in
    eta = raccim_density(orbit, cocycle, holes, 0, burn_in, config.transfer.tolerance)
    a = IntervalSet.from_pairs(config.raccim.test_set)
    check = conditional_invariance_check(orbit, cocycle, holes, a, depth, 0, burn_in)
    eta_x, alpha_product = survivor_mass_identity(orbit, cocycle, holes, depth, 0, burn_in)
    forward = forward_identity_residual(orbit, cocycle, holes, 0, burn_in)
    survivors = survivor_set(
        orbit, cocycle.maps, depth, holes, 0, system.eps, config.holes.max_components
    )

    writer.write_csv("raccim_density.csv", ["cell", "eta"], eta.to_rows())
    writer.write_csv("survivor_set.csv", ["lo", "hi"], survivors.body.to_rows())
    return {
        "grid_cells": cocycle.grid.cells,
        "alpha": eta.alpha,
        "max_on_hole": eta.max_on_hole,
        "forward_identity_residual": forward,
        "conditional_invariance": {"lhs": check.lhs, "rhs": check.rhs, "residual": check.residual},
        "survivor_mass": {
            "eta": eta_x,
            "alpha_product": alpha_product,
            "residual": abs(eta_x - alpha_product),
        },
        "depth": depth,
    }


def run_decay(system: LabSystem, writer: ReportWriter, run: Mapper | None = None) -> dict:
    config = system.config
    decay = config.decay
    sets = [IntervalSet.from_pairs(decay.f), IntervalSet.from_pairs(decay.h)]
    cocycle = refine_for(system.cocycle, sets)
    grid = cocycle.grid
    f = GridDensity.indicator(grid, sets[0])
    h = GridDensity.indicator(grid, sets[1])
    if decay.centered:
        uniform = np.full(grid.cells, 1.0 / grid.cells)
        f, h = f.centered(uniform), h.centered(uniform)
    orbit = system.orbit(system.margin(), decay.max_lag + system.margin())
    report = decay_rate_estimate(
        orbit, cocycle, f, h, decay.max_lag, decay.skip_lags, decay.noise_floor, 0,
        config.transfer.burn_in,
    )
    writer.write_csv("decay.csv", ["lag", "gap"], report.to_rows())
    summary: dict[str, Any] = report.summary()
    summary["grid_cells"] = grid.cells
    return summary


RUNNERS: dict[str, Callable[[LabSystem, ReportWriter, Mapper | None], dict]] = {
    "closed-spectrum": run_closed_spectrum,
    "escape-rate": run_escape_rate,
    "extremal-index": run_extremal_index,
    "gumbel": run_gumbel,
    "hitting-times": run_hitting_times,
    "bowen": run_bowen,
    "raccim": run_raccim,
    "decay": run_decay,
}


def run_experiment(command: str, config: ExperimentConfig) -> tuple[dict, ReportWriter]:
    """
    Validate, run one subcommand on a worker pool and write its summary.

    Raises:
        ValidationError: If a structural hypothesis fails.
        NumericalError: If an engine does not converge.
    """
    system = build_system(config)
    writer = ReportWriter(config.run.output_dir, command, config)
    run_validate(system).raise_for_failures()
    logger.info("Running %s with %d thread(s)", command, config.run.threads)
    with worker_pool(config.run.threads) as run:
        results = RUNNERS[command](system, writer, run)
    writer.write_summary(results)
    return results, writer
