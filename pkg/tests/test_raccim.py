"""
Unit tests for quenched_lab.raccim module.

Tests cover:
- Conditionally invariant densities for beta maps with last-branch holes
- The forward identity, conditional invariance and survivor mass identities
- Agreement of the matrix and interval engines
- Correlation gaps and the fitted decay rate
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from quenched_lab.driving import DrivingSystem, fiber_sequence
from quenched_lab.errors import ValidationError
from quenched_lab.maps import IntervalSet, custom_map
from quenched_lab.raccim import (
    conditional_invariance_check,
    cross_engine_residual,
    decay_rate_estimate,
    forward_identity_residual,
    pullback_along,
    raccim_density,
    survivor_mass_identity,
)
from quenched_lab.transfer import Cocycle, Grid, GridDensity, WeightSpec

F = Fraction


def _kept(orbit, j: int) -> float:
    """Lebesgue mass outside the last branch of 3x or 5x mod 1."""
    k = 3 if orbit.symbol(j) == 0 else 5
    return (k - 1) / k


@pytest.fixture
def markov_cocycle() -> Cocycle:
    """
    Four-cell Markov map whose Ulam chain has eigenvalues 1, 1/4, 0, 0.

    Cells: [0,1/4) -> [0,1), [1/4,1/2) -> [0,1/2), [1/2,3/4) -> [0,1/2), [3/4,1) -> [1/2,1).
    """
    tmap = custom_map(
        [
            (0, F(1, 4), 4, 0),
            (F(1, 4), F(1, 2), 2, F(-1, 2)),
            (F(1, 2), 1, 2, -1),
        ]
    )
    return Cocycle({0: tmap}, WeightSpec(), Grid(4))


class TestRaccimDensity:
    """Tests for raccim_density."""

    def test_uniform_off_hole(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test that eta is uniform off the hole, zero on it, with unit mass."""
        eta = raccim_density(iid_orbit, beta_cocycle, last_branch_holes)
        c0 = _kept(iid_orbit, 0)
        hole = last_branch_holes.at(0)
        on_hole = beta_cocycle.grid.cell_fractions(hole) >= 1.0
        assert eta.total == pytest.approx(1.0)
        assert eta.max_on_hole == 0.0
        assert eta.measure(hole) == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(eta.values[~on_hole], 1 / c0)
        assert eta.normalisation == pytest.approx(c0)

    def test_alpha_is_next_kept_mass(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test that the survival factor equals the kept mass of the next fiber."""
        for index in (0, 1, 5):
            eta = raccim_density(iid_orbit, beta_cocycle, last_branch_holes, index)
            assert eta.alpha == pytest.approx(_kept(iid_orbit, index + 1))
            assert len(eta.to_rows()) == 15


class TestIdentities:
    """Tests for the invariance identities of eta."""

    def test_forward_identity(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test L eta_j = lambda_0 alpha eta_{j+1} off the next hole."""
        for index in (0, 3):
            residual = forward_identity_residual(
                iid_orbit, beta_cocycle, last_branch_holes, index
            )
            assert residual < 1e-8

    @pytest.mark.parametrize("n", [0, 1, 3])
    def test_conditional_invariance(self, iid_orbit, beta_cocycle, last_branch_holes, n):
        """Test eta_j(T^-n A ∩ X_{j,n}) = eta_{j+n}(A) eta_j(X_{j,n})."""
        a = IntervalSet.single(F(0), F(1, 3))
        check = conditional_invariance_check(
            iid_orbit, beta_cocycle, last_branch_holes, a, n
        )
        assert check.lhs > 0
        assert check.residual == pytest.approx(0.0, abs=1e-9)

    def test_conditional_invariance_negative_depth(
        self, iid_orbit, beta_cocycle, last_branch_holes
    ):
        """Test that a negative depth is rejected."""
        with pytest.raises(ValidationError):
            conditional_invariance_check(
                iid_orbit, beta_cocycle, last_branch_holes, IntervalSet.full(), -1
            )

    def test_survivor_mass_identity(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test eta_j(X_{j,n}) = product of alpha over n fibers."""
        mass, product = survivor_mass_identity(iid_orbit, beta_cocycle, last_branch_holes, 4)
        expected = math.prod(_kept(iid_orbit, j) for j in range(1, 5))
        assert mass == pytest.approx(product, rel=1e-9)
        assert product == pytest.approx(expected, rel=1e-9)

    def test_cross_engine(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test that open matrices and exact survivor sets agree on an aligned grid."""
        grid = beta_cocycle.grid
        f = GridDensity.constant(grid)
        h = GridDensity.indicator(grid, IntervalSet.single(F(0), F(1, 3)))
        lhs, rhs = cross_engine_residual(iid_orbit, beta_cocycle, last_branch_holes, f, h, 3)
        assert lhs > 0
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_cross_engine_needs_one_step(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test that n = 0 is rejected."""
        f = GridDensity.constant(beta_cocycle.grid)
        with pytest.raises(ValidationError):
            cross_engine_residual(iid_orbit, beta_cocycle, last_branch_holes, f, f, 0)

    def test_pullback_along(self, constant_orbit, doubling_map):
        """Test that two doubling pullbacks of [0, 1/2) give four quarter-width pieces."""
        out = pullback_along(
            constant_orbit, {0: doubling_map}, IntervalSet.single(F(0), F(1, 2)), 0, 2
        )
        assert out.pairs() == [
            (F(0), F(1, 8)),
            (F(1, 4), F(3, 8)),
            (F(1, 2), F(5, 8)),
            (F(3, 4), F(7, 8)),
        ]


class TestDecay:
    """Tests for correlation gaps and decay_rate_estimate."""

    def test_geometric_rate(self, markov_cocycle):
        """Test that gaps decay exactly like the second Ulam eigenvalue 1/4."""
        orbit = fiber_sequence(DrivingSystem.constant(0), 200, 200)
        grid = markov_cocycle.grid
        left_half = GridDensity.indicator(grid, IntervalSet.single(F(0), F(1, 2)))
        report = decay_rate_estimate(orbit, markov_cocycle, left_half, left_half, max_lag=12)
        assert report.resolvable
        assert report.kappa == pytest.approx(0.25, rel=1e-6)
        assert report.r_squared == pytest.approx(1.0, abs=1e-9)
        assert report.fitted_lags.tolist() == list(range(3, 13))
        assert report.gaps[2] == pytest.approx(2 / 9 / 4**3, rel=1e-6)
        assert set(report.summary()) == {"kappa", "r_squared", "fitted_lags", "message"}
        assert len(report.to_rows()) == 12

    def test_unresolvable(self, constant_orbit, doubling_cocycle):
        """Test that doubling on two cells mixes in one step."""
        grid = doubling_cocycle.grid
        left_half = GridDensity.indicator(grid, IntervalSet.single(F(0), F(1, 2)))
        report = decay_rate_estimate(constant_orbit, doubling_cocycle, left_half, left_half)
        assert not report.resolvable
        assert report.kappa is None
        assert report.message == "decay faster than resolvable"
        assert report.summary()["kappa"] is None
