"""
Shared pytest fixtures for quenched-lab tests.
"""

import logging
from collections.abc import Generator
from fractions import Fraction
from pathlib import Path

import pytest

from quenched_lab.driving import DrivingSystem, FiberOrbit, fiber_sequence
from quenched_lab.maps import IntervalSet, PiecewiseLinearMap, beta_map, doubling
from quenched_lab.open_system import HoleFamily, PlacedHoles
from quenched_lab.transfer import Cocycle, Grid, WeightSpec

SEED = 20240917


@pytest.fixture
def tmp_config_file(tmp_path: Path) -> Generator[Path, None, None]:
    """
    Creates a temporary INI configuration file touching every section.

    Returns:
        Path to the temporary config file.
    """
    config_content = """[driving]
kind = iid
probabilities = 1/2, 1/2
seed = 99

[map.0]
preset = beta
beta = 3

[map.1]
preset = beta
beta = 5

[transfer]
weight_exponent = 1/2
grid_cells = 30
burn_in = 40
sandwich_burn_in = 70
tolerance = 1e-9
orbit_length = 300

[holes]
kind = last_branch

[perturb]
epsilon = 1/256
schedule_steps = 6
k_max = 15
convergence_tolerance = 1e-3
fibers = 12

[evt]
observation = neg_log_distance
center.0 = 1/2
center.1 = 1/3
t.0 = 1
t.1 = 2
n_values = 64, 128, 256
samples = 5000
hitting_n = 500

[pressure]
t_values = 0, 1/2, 1
orbit_length = 400
tolerance = 1e-7

[raccim]
test_set = 0:1/8, 1/4:1/2
depth = 3

[decay]
f = 0:1/2
h = 1/4:3/4
centered = false
max_lag = 12

[run]
seed = 5
threads = 3
output_dir = out
orbit_length = 700

[logging]
level = DEBUG
file = test.log
console = false
"""
    config_path = tmp_path / "test_config.ini"
    config_path.write_text(config_content, encoding="utf-8")
    yield config_path


@pytest.fixture
def minimal_config_file(tmp_path: Path) -> Generator[Path, None, None]:
    """
    Creates a minimal INI configuration file with only required fields.

    Returns:
        Path to the temporary config file.
    """
    config_content = """[map.0]
preset = doubling
"""
    config_path = tmp_path / "minimal_config.ini"
    config_path.write_text(config_content, encoding="utf-8")
    yield config_path


@pytest.fixture
def doubling_config_file(tmp_path: Path) -> Generator[Path, None, None]:
    """Doubling map with the fixed hole [1/2, 1), writing into tmp_path/out."""
    config_content = f"""[driving]
kind = constant

[map.0]
preset = doubling

[holes]
kind = fixed
interval.0 = 1/2:1

[transfer]
grid_cells = 2
orbit_length = 40

[run]
orbit_length = 200
output_dir = {tmp_path / "out"}

[logging]
file =
console = false
"""
    config_path = tmp_path / "doubling.ini"
    config_path.write_text(config_content, encoding="utf-8")
    yield config_path


@pytest.fixture
def reset_logging() -> Generator[None, None, None]:
    """Clears root handlers installed by setup_logging."""
    yield
    root_logger = logging.getLogger()
    for handler in root_logger.handlers:
        handler.close()
    root_logger.handlers.clear()


@pytest.fixture
def doubling_map() -> PiecewiseLinearMap:
    return doubling()


@pytest.fixture
def beta_maps() -> dict[int, PiecewiseLinearMap]:
    """Symbol 0 -> 3x mod 1, symbol 1 -> 5x mod 1."""
    return {0: beta_map(3), 1: beta_map(5)}


@pytest.fixture
def constant_orbit() -> FiberOrbit:
    return fiber_sequence(DrivingSystem.constant(0), 200, 600)


@pytest.fixture
def iid_orbit() -> FiberOrbit:
    return fiber_sequence(DrivingSystem.iid([0.5, 0.5], SEED), 200, 600)


@pytest.fixture
def doubling_cocycle(doubling_map: PiecewiseLinearMap) -> Cocycle:
    return Cocycle({0: doubling_map}, WeightSpec(), Grid(2))


@pytest.fixture
def beta_cocycle(beta_maps: dict[int, PiecewiseLinearMap]) -> Cocycle:
    """Lebesgue-weighted beta cocycle on the 15-cell aligned grid."""
    return Cocycle(beta_maps, WeightSpec(), Grid(15))


@pytest.fixture
def half_hole(constant_orbit: FiberOrbit) -> PlacedHoles:
    """The hole [1/2, 1) on every fiber of the constant orbit."""
    family = HoleFamily.fixed_holes({0: IntervalSet.single(Fraction(1, 2), Fraction(1))})
    return PlacedHoles(family, constant_orbit)


@pytest.fixture
def last_branch_holes(
    iid_orbit: FiberOrbit, beta_maps: dict[int, PiecewiseLinearMap]
) -> PlacedHoles:
    return PlacedHoles(HoleFamily.last_branch(beta_maps), iid_orbit)
