"""Schedule tests: exact step values, consistency validation, optimal decay
exponents against a brute-force minimizer, and partial-sum bracketing."""

import numpy as np
import pytest

from sgmcmc.schedules import (
    COND_DECREASING,
    COND_RATIO_VANISHES,
    COND_SUM_DIVERGES,
    ScheduleSums,
    StepSchedule,
    optimal_alpha,
    validate_schedule,
)


class TestStepSize:
    def test_fixed(self):
        sched = StepSchedule.fixed(0.01)
        assert sched.step_size(7) == 0.01

    def test_power_decay_exact_at_representable_point(self):
        sched = StepSchedule.power_decay(0.045, 1.0 / 3.0)
        # 8**(-1/3) is exactly 1/2
        assert sched.step_size(8) == pytest.approx(0.0225, rel=1e-15)

    def test_reciprocal(self):
        sched = StepSchedule.power_decay(1.0, 1.0)
        assert sched.step_size(4) == 0.25

    def test_zero_index_rejected(self):
        with pytest.raises(IndexError):
            StepSchedule.fixed(0.1).step_size(0)

    def test_strictly_decreasing(self):
        sched = StepSchedule.power_decay(0.7, 0.4)
        hs = sched.step_sizes(500)
        assert np.all(np.diff(hs) < 0)
        assert np.all(hs > 0)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            StepSchedule.fixed(-1e-3)
        with pytest.raises(ValueError):
            StepSchedule.power_decay(0.0, 0.5)


class TestValidation:
    def test_power_decay_third_valid(self):
        v = validate_schedule(StepSchedule.power_decay(0.045, 1.0 / 3.0), order=2)
        assert v.valid and not v.violated

    @pytest.mark.parametrize("alpha", [0.2, 1.0 / 3.0, 0.5])
    def test_open_interval_accepted(self, alpha):
        assert validate_schedule(StepSchedule.power_decay(1.0, alpha), order=1).valid

    def test_alpha_three_halves_violates_sum_divergence(self):
        v = validate_schedule(StepSchedule.power_decay(1.0, 1.5), order=2)
        assert not v.valid
        assert COND_SUM_DIVERGES in v.violated
        # p-series comparison oracle: partial sums have essentially converged
        hs = StepSchedule.power_decay(1.0, 1.5).step_sizes(1_000_000)
        tail = np.sum(hs[100_000:])
        assert tail < 0.01 * np.sum(hs)

    def test_alpha_zero_violates_ratio(self):
        v = validate_schedule(StepSchedule.power_decay(1.0, 0.0), order=2)
        assert not v.valid
        assert COND_RATIO_VANISHES in v.violated

    def test_negative_alpha_not_decreasing(self):
        v = validate_schedule(StepSchedule.power_decay(1.0, -0.3), order=2)
        assert not v.valid
        assert COND_DECREASING in v.violated
        assert COND_RATIO_VANISHES in v.violated

    def test_fixed_flagged_but_usable(self):
        v = validate_schedule(StepSchedule.fixed(0.02), order=2)
        assert not v.valid
        assert v.usable_for_fixed_step_theory
        assert v.ratio_at_horizon == 0.02**2  # constant sequence algebra

    def test_ratio_diagnostic_decays_for_valid_schedule(self):
        small = validate_schedule(StepSchedule.power_decay(1.0, 0.5, horizon=1000), 1)
        large = validate_schedule(StepSchedule.power_decay(1.0, 0.5, horizon=100_000), 1)
        assert large.ratio_at_horizon < small.ratio_at_horizon


class TestOptimalAlpha:
    def test_paper_values(self):
        assert optimal_alpha("bias", 2) == pytest.approx(1.0 / 3.0)
        assert optimal_alpha("mse", 2) == pytest.approx(1.0 / 5.0)
        assert optimal_alpha("bias", 1) == pytest.approx(0.5)
        assert optimal_alpha("mse", 1) == pytest.approx(1.0 / 3.0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            optimal_alpha("variance", 2)
        with pytest.raises(ValueError):
            optimal_alpha("bias", 0)

    @pytest.mark.parametrize("target,order", [("bias", 1), ("bias", 2), ("mse", 1), ("mse", 2)])
    def test_brute_force_minimizer_of_rate_bound(self, target, order):
        # the two competing error terms decay as L**(alpha-1) and L**(-K*alpha)
        # (bias) or L**(-2K*alpha) (mse); the best alpha minimises their max
        big_l = 1e6
        grid = np.linspace(0.01, 0.99, 981)
        k_eff = order if target == "bias" else 2 * order
        bound = np.maximum(big_l ** (grid - 1.0), big_l ** (-k_eff * grid))
        best = grid[np.argmin(bound)]
        assert best == pytest.approx(optimal_alpha(target, order), abs=2e-3)


class TestPartialSums:
    @pytest.mark.parametrize("alpha", [0.2, 1.0 / 3.0, 0.8])
    def test_bracketing_bounds(self, alpha):
        # integral-comparison bracket for the partial sums of l**-alpha:
        # int_1^L x^-a dx  <  sum  <  1 + int_1^L x^-a dx
        hs = StepSchedule.power_decay(1.0, alpha).step_sizes(1_000_000)
        sums = np.cumsum(hs)
        for big_l in (10, 1000, 100_000, 1_000_000):
            s = sums[big_l - 1]
            integral = (big_l ** (1 - alpha) - 1.0) / (1.0 - alpha)
            assert integral < s < 1.0 + integral

    def test_incremental_sums_match_recomputation(self):
        sched = StepSchedule.power_decay(0.045, 1.0 / 3.0)
        sums = ScheduleSums(order=2)
        for l in range(1, 2001):
            sums.add(sched.step_size(l))
        hs = sched.step_sizes(2000)
        assert sums.S_L == pytest.approx(np.sum(hs), rel=1e-12)
        assert sums.S_L_Kp1 == pytest.approx(np.sum(hs**3), rel=1e-12)
        assert sums.S_L_sq == pytest.approx(np.sum(hs**2), rel=1e-12)
        assert sums.ratio() == pytest.approx(np.sum(hs**3) / np.sum(hs), rel=1e-12)

    def test_sums_strictly_increasing(self):
        sched = StepSchedule.power_decay(1.0, 0.5)
        sums = ScheduleSums(order=1)
        prev = (0.0, 0.0, 0.0)
        for l in range(1, 100):
            sums.add(sched.step_size(l))
            now = (sums.S_L, sums.S_L_Kp1, sums.S_L_sq)
            assert all(b > a for a, b in zip(prev, now))
            prev = now
