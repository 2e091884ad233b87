"""
Unit tests for quenched_lab.validation module.

Tests cover:
- The report container: failures, warnings, summary and raising
- Structural checks on maps and hole families
- Grid alignment warnings and the large-images hypotheses
- The density floor check
"""

from fractions import Fraction

import pytest

from quenched_lab.errors import ValidationError
from quenched_lab.maps import IntervalSet, beta_map, custom_map, doubling, linear_full, three_branch
from quenched_lab.open_system import HoleFamily
from quenched_lab.validation import (
    ERROR,
    WARNING,
    ValidationReport,
    check_density_floor,
    full_branch_outside,
    large_images,
    large_images_wrt_hole,
    validate_system,
)

F = Fraction


def _by_name(report: ValidationReport, name: str):
    return [c for c in report.checks if c.name == name]


class TestValidationReport:
    """Tests for ValidationReport bookkeeping."""

    def test_empty_report_is_ok(self):
        """Test that a report without checks passes."""
        report = ValidationReport()
        assert report.ok
        assert report.summary() == {"ok": True, "checks": []}
        report.raise_for_failures()

    def test_warning_does_not_fail(self):
        """Test that failed warnings are collected but keep the report ok."""
        report = ValidationReport()
        report.add("alignment", False, "approximate-grid", severity=WARNING)
        assert report.ok
        assert [c.name for c in report.warnings] == ["alignment"]
        assert report.failures == []

    def test_raise_for_failures_names_first(self):
        """Test that the first failing error is raised with its subject."""
        report = ValidationReport()
        report.add("expanding", True, "fine")
        report.add("partition", False, "gap at 1/2", subject="map")
        report.add("nesting", False, "not nested")
        with pytest.raises(ValidationError, match="partition: gap at 1/2") as info:
            report.raise_for_failures()
        assert info.value.subject == "map"

    def test_failure_is_logged(self, caplog):
        """Test that failed checks are logged at error level."""
        report = ValidationReport()
        with caplog.at_level("ERROR", logger="quenched_lab.validation"):
            report.add("expanding", False, "min |slope| = 1")
        assert "Check 'expanding' failed" in caplog.text

    def test_rows(self):
        """Test the row layout of the checks CSV."""
        report = ValidationReport()
        report.add("partition", True, "ok")
        assert report.to_rows() == [("partition", ERROR, True, "ok")]


class TestStructuralHelpers:
    """Tests for the branch and hole helpers."""

    def test_full_branch_outside(self):
        """Test that only branches missing the hole are listed."""
        hole = IntervalSet.single(F(2, 3), F(1))
        assert full_branch_outside(beta_map(3), hole) == [0, 1]
        assert full_branch_outside(doubling(), IntervalSet.full()) == []

    def test_large_images(self):
        """Test that a short branch breaks large images."""
        assert large_images({0: beta_map(3), 1: three_branch(3)})
        assert not large_images({0: beta_map(F(5, 2))})

    def test_large_images_wrt_hole(self):
        """Test that holes must be unions of full-branch domains."""
        maps = {0: beta_map(3)}
        aligned = HoleFamily.fixed_holes({0: IntervalSet.single(F(1, 3), F(1))})
        cut = HoleFamily.fixed_holes({0: IntervalSet.single(F(1, 2), F(1))})
        assert large_images_wrt_hole(maps, aligned, None, [0])
        assert not large_images_wrt_hole(maps, cut, None, [0])


class TestValidateSystem:
    """Tests for validate_system."""

    def test_beta_last_branch_passes(self, beta_maps):
        """Test that random beta maps with last-branch holes pass on 15 cells."""
        report = validate_system(beta_maps, HoleFamily.last_branch(beta_maps), grid_cells=15)
        assert report.ok
        assert report.warnings == []
        assert _by_name(report, "alignment")[0].detail == "15 cells"
        (components,) = _by_name(report, "hole_components")
        assert components.passed
        assert components.detail == "at most 1 components per hole, limit 200000"

    def test_smallest_aligned_grid_reported(self, beta_maps):
        """Test that grid_cells=0 reports the smallest aligned grid."""
        report = validate_system(beta_maps, HoleFamily.last_branch(beta_maps))
        assert _by_name(report, "alignment")[0].subject == 30

    def test_misaligned_grid_warns(self, beta_maps):
        """Test that a grid the maps do not respect gives an approximate-grid warning."""
        report = validate_system(beta_maps, HoleFamily.last_branch(beta_maps), grid_cells=4)
        assert report.ok
        (warning,) = report.warnings
        assert warning.name == "alignment"
        assert warning.detail.startswith("approximate-grid")

    def test_non_integer_slope_warns(self):
        """Test that beta = 5/2 admits no aligned grid."""
        report = validate_system({0: beta_map(F(5, 2))}, HoleFamily.none())
        assert report.warnings[0].detail == "approximate-grid: maps admit no aligned grid"

    def test_hole_covering_everything_fails(self):
        """Test that a hole hitting every full branch is an error."""
        family = HoleFamily.fixed_holes({0: IntervalSet.full()})
        report = validate_system({0: doubling()}, family)
        assert not report.ok
        with pytest.raises(ValidationError, match="full_branch_outside_hole"):
            report.raise_for_failures()

    def test_hole_component_limit(self):
        """Test that a hole with more pieces than the limit is an error."""
        hole = IntervalSet.from_pairs([(F(0), F(1, 8)), (F(1, 4), F(3, 8)), (F(1, 2), F(5, 8))])
        family = HoleFamily.fixed_holes({0: hole})
        assert validate_system({0: linear_full(8)}, family, max_components=3).ok
        report = validate_system({0: linear_full(8)}, family, max_components=2)
        assert [c.name for c in report.failures] == ["hole_components"]
        assert report.failures[0].subject == {(0, None): 3}

    def test_identity_is_not_expanding(self):
        """Test that a slope-one map fails the expansion check."""
        report = validate_system({0: custom_map([(0, 1, 1, 0)])}, HoleFamily.none())
        assert [c.name for c in report.failures] == ["expanding"]

    def test_shrinking_holes_checked_for_nesting(self):
        """Test that left holes over a decreasing schedule are nested."""
        report = validate_system(
            {0: doubling()}, HoleFamily.left(), eps_values=[F(1, 4), F(1, 8), F(1, 16)]
        )
        (nesting,) = _by_name(report, "nesting")
        assert nesting.passed
        assert len(_by_name(report, "full_branch_outside_hole")) == 3

    def test_fixed_holes_skip_nesting(self, beta_maps):
        """Test that fixed holes have no nesting check."""
        report = validate_system(beta_maps, HoleFamily.last_branch(beta_maps))
        assert _by_name(report, "nesting") == []

    def test_bowen_hypotheses_are_warnings(self):
        """Test that unmet large-images hypotheses only warn."""
        maps = {0: beta_map(F(5, 2))}
        family = HoleFamily.fixed_holes({0: IntervalSet.single(F(1, 2), F(4, 5))})
        report = validate_system(maps, family, bowen=True)
        assert report.ok
        names = {c.name for c in report.warnings}
        assert {"large_images", "large_images_wrt_hole"} <= names


class TestDensityFloor:
    """Tests for check_density_floor."""

    def test_positive_floors_pass(self):
        """Test that strictly positive floors pass."""
        report = ValidationReport()
        check = check_density_floor(report, {0: 0.5, 1: 0.25})
        assert check.passed
        assert check.detail == "phi > 0 on every hole"

    def test_vanishing_floor_fails(self):
        """Test that a zero floor names its fiber."""
        report = ValidationReport()
        check = check_density_floor(report, {0: 0.5, 3: 0.0})
        assert not check.passed
        assert check.subject == {3: 0.0}
        assert "[3]" in check.detail
        assert not report.ok
