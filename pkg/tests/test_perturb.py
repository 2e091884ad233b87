"""
Unit tests for quenched_lab.perturb module.

Tests cover:
- Delta and the epsilon schedule
- Return sets and q-hat from the interval engine, the grid engine and Monte Carlo
- Extremal index estimates, extrapolation and convergence flags
- The first-order multiplier formula and escape-rate asymptotics
- Closed-form extremal indices at fixed points, periodic points and the left endpoint
"""

from fractions import Fraction

import numpy as np
import pytest

from quenched_lab.driving import DrivingSystem, fiber_sequence
from quenched_lab.errors import ValidationError, ZeroHoleMeasureError
from quenched_lab.maps import IntervalSet, beta_map, doubling, three_branch
from quenched_lab.open_system import HoleFamily, PlacedHoles
from quenched_lab.perturb import (
    ThetaEstimate,
    analytic_extremal_index_fixed_point,
    analytic_extremal_index_left_endpoint,
    analytic_extremal_index_periodic,
    delta,
    eps_schedule,
    escape_rate_asymptotics,
    first_order_check,
    qhat,
    qhat_monte_carlo,
    qhat_table,
    qseries,
    return_set,
    theta,
)
from quenched_lab.transfer import Cocycle, Grid, WeightSpec

F = Fraction

HALVES = [F(1, 2 ** (k + 1)) for k in range(6)]
RANDOM_BETA_SEED = 20240917


class TestDelta:
    """Tests for eps_schedule and delta."""

    def test_schedule_halves(self):
        """Test eps0 * 2^-j."""
        assert eps_schedule(F(1, 8), 3) == [F(1, 8), F(1, 16), F(1, 32), F(1, 64)]

    def test_delta_doubling(self, constant_orbit, doubling_cocycle, half_hole):
        """Test Delta = lambda_0 mu(H) = 1/2 for H = [1/2, 1)."""
        assert delta(constant_orbit, doubling_cocycle, half_hole) == pytest.approx(0.5)


class TestIntervalEngine:
    """Tests for return_set, qhat and qseries."""

    def test_return_set_k0(self, constant_orbit, doubling_map, half_hole):
        """Test that points of H landing in H after one step form [3/4, 1)."""
        returning = return_set(constant_orbit, {0: doubling_map}, half_hole, 0)
        assert returning.pairs() == [(F(3, 4), F(1))]

    def test_return_set_k1(self, constant_orbit, doubling_map, half_hole):
        """Test the first return after one excursion outside H."""
        returning = return_set(constant_orbit, {0: doubling_map}, half_hole, 1)
        assert returning.pairs() == [(F(5, 8), F(3, 4))]

    def test_qseries_geometric(self, constant_orbit, doubling_cocycle, half_hole):
        """Test q-hat^(k) = 2^-(k+1) for the doubling map with H = [1/2, 1)."""
        series = qseries(constant_orbit, doubling_cocycle, half_hole, 5)
        assert series.values == pytest.approx([float(q) for q in HALVES])
        assert series.tail_deficit == pytest.approx(1 / 64)
        assert series.partial_sums[-1] == pytest.approx(63 / 64)
        assert len(series.to_rows()) == 6

    def test_negative_k(self, constant_orbit, doubling_cocycle, half_hole):
        """Test that k < 0 is rejected."""
        with pytest.raises(ValidationError):
            qhat(constant_orbit, doubling_cocycle, half_hole, -1)

    def test_zero_hole_measure(self, constant_orbit, doubling_cocycle):
        """Test that an empty hole makes q-hat undefined."""
        holes = PlacedHoles(HoleFamily.none(), constant_orbit)
        with pytest.raises(ZeroHoleMeasureError, match="fiber=0"):
            qhat(constant_orbit, doubling_cocycle, holes, 0)


class TestGridEngine:
    """Tests for qhat_table and qhat_monte_carlo."""

    def test_table_matches_interval_engine(self, constant_orbit, doubling_cocycle, half_hole):
        """Test that the age-stacked sweep gives the same q-hat as the interval engine."""
        table = qhat_table(constant_orbit, doubling_cocycle, half_hole, 5, first=0, count=3)
        assert table.values.shape == (3, 6)
        for origin in table.origins:
            assert table.series(origin).values == pytest.approx([float(q) for q in HALVES])
        assert table.theta_raw == pytest.approx(np.full(3, 1 / 64))
        assert table.hole_mass == pytest.approx(np.full(3, 0.5))
        assert table.tail == pytest.approx(np.full(3, 1 / 64))

    def test_table_random_beta_engines_agree(self, iid_orbit, beta_cocycle, last_branch_holes):
        """Test grid and interval engines on random beta maps with last-branch holes."""
        table = qhat_table(iid_orbit, beta_cocycle, last_branch_holes, 4, first=10, count=2)
        for origin in table.origins:
            exact = qseries(iid_orbit, beta_cocycle, last_branch_holes, 4, index=origin)
            assert table.series(origin).values == pytest.approx(exact.values, abs=1e-10)

    def test_table_rows(self, constant_orbit, doubling_cocycle, half_hole):
        """Test origin,eps,k,qhat rows."""
        table = qhat_table(constant_orbit, doubling_cocycle, half_hole, 2, eps=F(1, 2))
        assert table.to_rows()[0] == (0, F(1, 2), 0, pytest.approx(0.5))

    def test_table_bad_arguments(self, constant_orbit, doubling_cocycle, half_hole):
        """Test that count < 1 is rejected."""
        with pytest.raises(ValidationError):
            qhat_table(constant_orbit, doubling_cocycle, half_hole, 2, count=0)

    def test_monte_carlo_close_to_exact(self, constant_orbit, doubling_cocycle, half_hole):
        """Test that sampling reproduces q-hat^(0) = 1/2 within four standard errors."""
        p, se = qhat_monte_carlo(
            constant_orbit, doubling_cocycle, half_hole, 0, samples=20000, seed=3
        )
        assert abs(p - 0.5) < 4 * se


class TestThetaEstimate:
    """Tests for ThetaEstimate bookkeeping."""

    def _estimate(self, tolerance: float = 1e-4) -> ThetaEstimate:
        raw = np.array([[0.6], [0.55], [0.525]])
        return ThetaEstimate(eps_schedule(F(1, 4), 2), [0], raw, np.zeros((3, 1)), tolerance)

    def test_extrapolation(self):
        """Test 2 raw(eps/2) - raw(eps) removes the linear term."""
        estimate = self._estimate()
        assert estimate.extrapolated == pytest.approx(np.array([[0.5], [0.5]]))
        assert estimate.limit == pytest.approx([0.5])
        assert estimate.converged
        assert estimate.mean == pytest.approx(0.5)
        assert estimate.weighted_mean([2.0]) == pytest.approx(1.0)

    def test_clamped(self):
        """Test that clamped values stay in [0, 1]."""
        raw = np.array([[-0.1], [1.2]])
        estimate = ThetaEstimate([F(1, 2), F(1, 4)], [0], raw, np.zeros((2, 1)), 1e-4)
        assert estimate.clamped.ravel().tolist() == [0.0, 1.0]
        rows = estimate.to_rows()
        assert rows[0][2:4] == (-0.1, 0.0)

    def test_single_eps_never_converged(self):
        """Test that one schedule entry cannot show convergence."""
        estimate = ThetaEstimate([F(1, 2)], [0, 1], np.array([[0.5, 0.4]]), np.zeros((1, 2)), 1)
        assert not estimate.converged
        assert estimate.limit == pytest.approx([0.5, 0.4])


class TestTheta:
    """Tests for theta and the first-order formula on the doubling map."""

    @pytest.fixture
    def left_holes(self) -> HoleFamily:
        return HoleFamily.left()

    def test_doubling_left_endpoint(self, constant_orbit, doubling_cocycle, left_holes):
        """Test theta-hat -> 1/2 for holes [0, eps) at the fixed point 0."""
        schedule = eps_schedule(F(1, 1024), 2)
        estimate = theta(constant_orbit, doubling_cocycle, left_holes, schedule, k_max=20)
        assert estimate.raw.shape == (3, 1)
        assert estimate.limit[0] == pytest.approx(0.5, abs=0.01)
        assert len(estimate.to_rows()) == 3

    def test_run_callable_keeps_order(self, constant_orbit, doubling_cocycle, left_holes):
        """Test that a custom mapper returns tables in schedule order."""
        schedule = eps_schedule(F(1, 64), 1)
        serial = theta(constant_orbit, doubling_cocycle, left_holes, schedule, k_max=8)
        mapped = theta(
            constant_orbit,
            doubling_cocycle,
            left_holes,
            schedule,
            k_max=8,
            run=lambda task, items: [task(e) for e in items],
        )
        assert mapped.raw == pytest.approx(serial.raw)
        assert [t.eps for t in mapped.tables] == schedule

    def test_empty_schedule(self, constant_orbit, doubling_cocycle, left_holes):
        """Test that an empty schedule is rejected."""
        with pytest.raises(ValidationError):
            theta(constant_orbit, doubling_cocycle, left_holes, [])

    def test_first_order_ratio(self, constant_orbit, doubling_cocycle, left_holes):
        """Test (lambda_0 - lambda_eps) / Delta_eps close to theta = 1/2."""
        table = first_order_check(
            constant_orbit, doubling_cocycle, left_holes, [F(1, 1024)], k_max=20
        )
        assert table.ratios[0] == pytest.approx(0.5, abs=0.02)
        assert table.rows[0].theta == pytest.approx(0.5, abs=0.02)
        assert table.rows[0].delta == pytest.approx(1 / 1024)
        assert len(table.to_rows()[0]) == 5

    def test_escape_rate_asymptotics(self, constant_orbit, doubling_cocycle, left_holes):
        """Test R_eps / mu(H_eps) close to the averaged theta-hat."""
        rows = escape_rate_asymptotics(
            constant_orbit, doubling_cocycle, left_holes, [F(1, 1024)], n=10, k_max=20
        )
        assert rows[0].ratio == pytest.approx(0.5, abs=0.02)
        assert rows[0].target == pytest.approx(0.5, abs=0.02)


class TestAnalyticExtremalIndex:
    """Tests for closed-form extremal indices."""

    def test_fixed_point_single_map(self, constant_orbit):
        """Test theta = 1 - 1/s at the central fixed point of three_branch(s)."""
        value = analytic_extremal_index_fixed_point(constant_orbit, {0: three_branch(2)}, F(1, 2))
        assert value == pytest.approx(0.5)

    def test_fixed_point_random_slopes(self):
        """Test that the previous fiber's slope sets theta."""
        orbit = fiber_sequence(DrivingSystem.periodic([0, 1]), 5, 5)
        maps = {0: three_branch(2), 1: three_branch(4)}
        assert analytic_extremal_index_fixed_point(orbit, maps, F(1, 2)) == pytest.approx(0.75)
        assert analytic_extremal_index_fixed_point(orbit, maps, F(1, 2), index=1) == (
            pytest.approx(0.5)
        )

    def test_fixed_point_scaled_holes(self):
        """Test that a narrow preceding hole caps q-hat^(0) at t_prev / t."""
        orbit = fiber_sequence(DrivingSystem.periodic([0, 1]), 5, 5)
        maps = {0: three_branch(2), 1: three_branch(4)}
        value = analytic_extremal_index_fixed_point(
            orbit, maps, F(1, 2), t={0: F(1), 1: F(1, 8)}
        )
        assert value == pytest.approx(7 / 8)

    def test_not_a_fixed_point(self, constant_orbit):
        """Test that a non-fixed centre is rejected."""
        with pytest.raises(ValidationError, match="not a fixed point"):
            analytic_extremal_index_fixed_point(constant_orbit, {0: three_branch(2)}, F(1, 3))

    def test_left_endpoint_doubling(self, constant_orbit, doubling_cocycle):
        """Test theta = 1/2 at the left endpoint of the doubling map."""
        value = analytic_extremal_index_left_endpoint(constant_orbit, doubling_cocycle)
        assert value == pytest.approx(0.5)

    def test_periodic_orbit(self):
        """Test theta = 1 - 1/4 for the period-2 orbit {1/3, 2/3} of the doubling map."""
        assert analytic_extremal_index_periodic(doubling(), F(1, 3), 2) == pytest.approx(0.75)

    def test_periodic_wrong_period(self):
        """Test that a fixed point is not accepted as period 2."""
        with pytest.raises(ValidationError, match="period 1"):
            analytic_extremal_index_periodic(doubling(), F(0), 2)

    def test_not_periodic(self):
        """Test that a non-periodic point is rejected."""
        with pytest.raises(ValidationError):
            analytic_extremal_index_periodic(doubling(), F(1, 5), 2)

    def test_hole_alignment_for_left_holes(self):
        """Test that left holes on a dyadic schedule stay grid-aligned."""
        family = HoleFamily.left()
        for eps in eps_schedule(F(1, 8), 3):
            assert IntervalSet.single(F(0), eps) == family.at(0, eps)


@pytest.mark.slow
class TestRandomBetaExtremalIndex:
    """Extremal index for i.i.d. beta maps 3 and 5 with holes [0, eps)."""

    ORBIT_LENGTH = 10**4
    BETAS = (3, 5)

    @pytest.fixture(scope="class")
    def orbit(self):
        driving = DrivingSystem.iid([0.5, 0.5], RANDOM_BETA_SEED)
        return fiber_sequence(driving, 200, self.ORBIT_LENGTH + 200)

    @pytest.fixture(scope="class")
    def estimate(self, orbit) -> ThetaEstimate:
        cocycle = Cocycle({0: beta_map(3), 1: beta_map(5)}, WeightSpec(), Grid(15))
        schedule = eps_schedule(F(1, 2048), 1)
        return theta(orbit, cocycle, HoleFamily.left(), schedule, k_max=20, count=12)

    def _expected(self, orbit, origins) -> list[float]:
        return [1 - 1 / self.BETAS[orbit.symbol(j - 1)] for j in origins]

    def test_per_fiber_values(self, orbit, estimate):
        """Test theta-hat = 1 - 1/beta of the previous fiber (2/3 or 4/5)."""
        expected = self._expected(orbit, estimate.origins)
        assert {round(v, 6) for v in expected} == {round(2 / 3, 6), round(4 / 5, 6)}
        assert estimate.limit == pytest.approx(expected, abs=1e-3)

    def test_raw_values_carry_linear_bias(self, orbit, estimate):
        """Test that raw theta-hat at eps = 2^-12 is within its O(eps) bias of the limit."""
        expected = self._expected(orbit, estimate.origins)
        assert estimate.raw[-1] == pytest.approx(expected, abs=1e-2)

    def test_orbit_average(self, orbit, estimate):
        """Test that the orbit average over 10^4 fibers is 11/15."""
        by_symbol: dict[int, list[float]] = {}
        for j, value in zip(estimate.origins, estimate.limit):
            by_symbol.setdefault(orbit.symbol(j - 1), []).append(float(value))
        per_symbol = {s: np.mean(values) for s, values in by_symbol.items()}
        previous = orbit.window(-1, self.ORBIT_LENGTH - 2)
        mean = float(np.mean([per_symbol[int(s)] for s in previous]))
        assert mean == pytest.approx(11 / 15, abs=1e-2)


@pytest.mark.slow
class TestFirstOrderSchedule:
    """The first-order ratio for the doubling map over eps = 2^-4 .. 2^-12."""

    def test_tail_converges_monotonically(self, constant_orbit, doubling_cocycle):
        """Test that the ratio error shrinks down the tail and ends below 10^-3."""
        schedule = [F(1, 2**j) for j in range(4, 13)]
        table = first_order_check(
            constant_orbit, doubling_cocycle, HoleFamily.left(), schedule, k_max=20
        )
        errors = np.abs(table.ratios - 0.5)
        assert np.all(np.diff(errors[-5:]) < 0)
        assert errors[-1] < 1e-3
