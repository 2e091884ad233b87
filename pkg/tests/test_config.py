"""
Unit tests for quenched_lab.config module.

Tests cover:
- Loading configuration from INI files
- Defaults for omitted sections
- CLI override precedence (CLI wins over INI)
- Missing required field validation
- Missing config file handling
- Malformed values and their messages
- Map presets and custom branch lists
"""

from fractions import Fraction
from pathlib import Path

import pytest

from quenched_lab.config import (
    DrivingConfig,
    ExperimentConfig,
    HoleConfig,
    LogConfig,
    MapConfig,
    PerturbConfig,
    RunConfig,
    TransferConfig,
    load_config,
)
from quenched_lab.maps import PiecewiseLinearMap


def _write(tmp_path: Path, text: str) -> str:
    path = tmp_path / "config.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadConfigWithINIFile:
    """Tests for load_config with INI file."""

    def test_load_config_reads_all_sections(self, tmp_config_file: Path):
        """Test that load_config correctly reads all sections from INI file."""
        config = load_config(str(tmp_config_file))

        # Driving and maps
        assert config.driving.kind == "iid"
        assert config.driving.probabilities == (Fraction(1, 2), Fraction(1, 2))
        assert config.driving.seed == 99
        assert config.maps[0].preset == "beta"
        assert config.maps[1].parameters == {"beta": Fraction(5)}

        # Transfer section
        assert config.transfer.weight_exponent == Fraction(1, 2)
        assert config.transfer.grid_cells == 30
        assert config.transfer.burn_in == 40
        assert config.transfer.sandwich_burn_in == 70
        assert config.transfer.tolerance == pytest.approx(1e-9)
        assert config.transfer.orbit_length == 300

        # Holes and perturbation
        assert config.holes.kind == "last_branch"
        assert config.perturb.epsilon == Fraction(1, 256)
        assert config.perturb.schedule_steps == 6
        assert config.perturb.k_max == 15
        assert config.perturb.fibers == 12

        # Extreme values
        assert config.evt.observation == "neg_log_distance"
        assert config.evt.centers == {0: Fraction(1, 2), 1: Fraction(1, 3)}
        assert config.evt.t_by_symbol == {0: Fraction(1), 1: Fraction(2)}
        assert config.evt.scaling == {0: Fraction(1), 1: Fraction(2)}
        assert config.evt.n_values == (64, 128, 256)
        assert config.evt.samples == 5000
        assert config.evt.hitting_n == 500

        # Pressure, raccim and decay
        assert config.pressure.t_values == (Fraction(0), Fraction(1, 2), Fraction(1))
        assert config.pressure.orbit_length == 400
        assert config.raccim.test_set == (
            (Fraction(0), Fraction(1, 8)),
            (Fraction(1, 4), Fraction(1, 2)),
        )
        assert config.raccim.depth == 3
        assert config.decay.h == ((Fraction(1, 4), Fraction(3, 4)),)
        assert config.decay.centered is False
        assert config.decay.max_lag == 12

        # Run and logging
        assert config.run.seed == 5
        assert config.run.threads == 3
        assert config.run.output_dir == "out"
        assert config.run.orbit_length == 700
        assert config.logging.level == "DEBUG"
        assert config.logging.file == "test.log"
        assert config.logging.console is False

    def test_load_config_returns_experimentconfig_type(self, tmp_config_file: Path):
        """Test that load_config returns correct types."""
        config = load_config(str(tmp_config_file))

        assert isinstance(config, ExperimentConfig)
        assert isinstance(config.driving, DrivingConfig)
        assert isinstance(config.maps[0], MapConfig)
        assert isinstance(config.transfer, TransferConfig)
        assert isinstance(config.holes, HoleConfig)
        assert isinstance(config.perturb, PerturbConfig)
        assert isinstance(config.run, RunConfig)
        assert isinstance(config.logging, LogConfig)

    def test_load_config_minimal_file(self, minimal_config_file: Path):
        """Test loading config with only a map uses defaults for everything else."""
        config = load_config(str(minimal_config_file))

        assert config.driving.kind == "constant"
        assert config.maps[0].preset == "doubling"
        assert config.transfer.weight_exponent == 1
        assert config.transfer.grid_cells == 0
        assert config.holes.kind == "none"
        assert config.perturb.epsilon == Fraction(1, 1024)
        assert config.perturb.k_max == 20
        assert config.pressure.t_values == tuple(Fraction(i, 10) for i in range(11))
        assert config.run.seed == 0
        assert config.run.threads == 1
        assert config.logging.level == "INFO"

    def test_fixed_hole_intervals_parsed(self, tmp_path: Path):
        """Test that per-symbol hole intervals are read as exact pairs."""
        path = _write(
            tmp_path,
            """[map.0]
preset = doubling

[holes]
kind = fixed
interval.0 = 0:1/8, 1/2:1
""",
        )
        config = load_config(path)
        assert config.holes.intervals == {
            0: ((Fraction(0), Fraction(1, 8)), (Fraction(1, 2), Fraction(1)))
        }
        assert config.holes.max_components == 200_000

    def test_hole_component_limit_parsed(self, tmp_path: Path):
        """Test that the component limit is read from the holes section."""
        path = _write(tmp_path, "[map.0]\npreset = doubling\n\n[holes]\nmax_components = 64\n")
        assert load_config(path).holes.max_components == 64


class TestLoadConfigMaps:
    """Tests for map sections."""

    def test_custom_map_branches(self, tmp_path: Path):
        """Test that a custom branch list builds the doubling map."""
        path = _write(
            tmp_path,
            """[map.0]
preset = custom
branches = 0:1/2:2:0, 1/2:1:2:-1
""",
        )
        tmap = load_config(path).maps[0].build()
        assert isinstance(tmap, PiecewiseLinearMap)
        assert len(tmap.branches) == 2
        assert tmap.evaluate(Fraction(3, 4)) == Fraction(1, 2)

    @pytest.mark.parametrize(
        "body,branches",
        [
            ("preset = doubling", 2),
            ("preset = linear_full\nk = 3", 3),
            ("preset = beta\nbeta = 5/2", 3),
            ("preset = three_branch\ns = 2", 3),
        ],
    )
    def test_presets_build(self, tmp_path: Path, body: str, branches: int):
        """Test that each preset builds a map with the expected branch count."""
        path = _write(tmp_path, f"[map.0]\n{body}\n")
        assert len(load_config(path).maps[0].build().branches) == branches

    def test_unknown_preset_rejected(self, tmp_path: Path):
        """Test that an unknown preset names the valid choices."""
        path = _write(tmp_path, "[map.0]\npreset = tent\n")
        with pytest.raises(ValueError, match="Invalid preset value in config: 'tent'"):
            load_config(path)

    def test_missing_preset_parameter(self, tmp_path: Path):
        """Test that a preset without its parameter is reported."""
        path = _write(tmp_path, "[map.0]\npreset = beta\n")
        with pytest.raises(ValueError, match="Missing required configuration fields: map.0.beta"):
            load_config(path)


class TestLoadConfigCLIOverrides:
    """Tests for CLI override precedence."""

    def test_cli_overrides_ini_values(self, tmp_config_file: Path):
        """Test that CLI arguments override INI file values."""
        config = load_config(
            str(tmp_config_file), seed=42, threads=8, output_dir="elsewhere", debug=True
        )

        assert config.run.seed == 42
        assert config.run.threads == 8
        assert config.run.output_dir == "elsewhere"
        assert config.logging.level == "DEBUG"
        assert config.logging.console is True

    def test_cli_seed_replaces_driving_seed(self, tmp_config_file: Path):
        """Test that --seed takes over from the driving section's own seed."""
        config = load_config(str(tmp_config_file), seed=42)

        assert config.driving.seed is None
        assert config.driving_seed == 42

    def test_driving_seed_used_without_cli(self, tmp_config_file: Path):
        """Test that the driving section's seed wins over run.seed when no CLI seed."""
        config = load_config(str(tmp_config_file))
        assert config.driving_seed == 99

    def test_cli_none_values_do_not_override(self, tmp_config_file: Path):
        """Test that None CLI values don't override INI values."""
        config = load_config(str(tmp_config_file), seed=None, threads=None, output_dir=None)

        assert config.run.seed == 5
        assert config.run.threads == 3
        assert config.run.output_dir == "out"

    def test_threads_clamped_to_one(self, minimal_config_file: Path):
        """Test that a zero thread count from the CLI becomes a serial run."""
        config = load_config(str(minimal_config_file), threads=0)
        assert config.run.threads == 1


class TestLoadConfigValidation:
    """Tests for missing and malformed values."""

    def test_missing_map_raises_error(self, tmp_path: Path):
        """Test that a config without any map section raises."""
        path = _write(tmp_path, "[run]\nseed = 1\n")
        with pytest.raises(ValueError, match="Missing required configuration fields: map"):
            load_config(path)

    def test_missing_map_for_driving_symbol(self, tmp_path: Path):
        """Test that every symbol the driving can emit needs a map."""
        path = _write(
            tmp_path,
            """[driving]
kind = iid
probabilities = 1/3, 1/3, 1/3

[map.0]
preset = doubling

[map.2]
preset = doubling
""",
        )
        with pytest.raises(ValueError, match="map.1"):
            load_config(path)

    def test_iid_without_probabilities(self, tmp_path: Path):
        """Test that iid driving needs its probabilities."""
        path = _write(tmp_path, "[driving]\nkind = iid\n\n[map.0]\npreset = doubling\n")
        with pytest.raises(ValueError, match="driving.probabilities"):
            load_config(path)

    def test_missing_config_file_raises_error(self, tmp_path: Path):
        """Test that FileNotFoundError is raised for missing config file."""
        with pytest.raises(FileNotFoundError, match="Configuration file not found"):
            load_config(str(tmp_path / "nope.ini"))

    @pytest.mark.parametrize(
        "section,line,key",
        [
            ("transfer", "grid_cells = many", "grid_cells"),
            ("transfer", "grid_cells = 1", "grid_cells"),
            ("transfer", "weight_exponent = -1", "weight_exponent"),
            ("holes", "kind = square", "kind"),
            ("holes", "epsilon = 2", "epsilon"),
            ("holes", "max_components = 0", "max_components"),
            ("perturb", "k_max = 0", "k_max"),
            ("evt", "observation = median", "observation"),
            ("pressure", "t_values = 0, -1", "t_values"),
            ("raccim", "test_set = 0-1/4", "test_set"),
        ],
    )
    def test_malformed_values_rejected(self, tmp_path: Path, section: str, line: str, key: str):
        """Test that malformed values raise with the offending key in the message."""
        path = _write(tmp_path, f"[map.0]\npreset = doubling\n\n[{section}]\n{line}\n")
        with pytest.raises(ValueError, match=f"Invalid {key} value in config"):
            load_config(path)

    def test_fixed_holes_need_intervals(self, tmp_path: Path):
        """Test that a fixed hole family needs at least one interval."""
        path = _write(tmp_path, "[map.0]\npreset = doubling\n\n[holes]\nkind = fixed\n")
        with pytest.raises(ValueError, match="holes.interval"):
            load_config(path)

    def test_ball_holes_need_centers(self, tmp_path: Path):
        """Test that a ball hole family needs a centre."""
        path = _write(tmp_path, "[map.0]\npreset = doubling\n\n[holes]\nkind = ball\n")
        with pytest.raises(ValueError, match="holes.center"):
            load_config(path)
