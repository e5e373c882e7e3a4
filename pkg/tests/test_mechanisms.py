"""Noise primitive tests: calibration round-trips, closed forms, samplers."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpcl.errors import CalibrationError
from dpcl.mechanisms import (
    GaussianParams,
    LaplaceParams,
    PrivacyBudget,
    calibrate_gaussian,
    classical_gaussian_sigma,
    derive_seed,
    gaussian_noise,
    gaussian_tradeoff_delta,
    laplace_noise,
    laplace_tail,
)

# Independent high-precision bisection of the trade-off condition (50-digit
# arithmetic) for eps=1, delta=1e-5, sensitivity=1.
SIGMA_STAR_1_1E5 = 3.7306316348159418
# Closed form 1 - exp(-1)/2 evaluated at 20 digits.
LAPLACE_CDF_B1_X1 = 0.8160602794142788


class TestCalibration:
    def test_zero_sensitivity_is_noiseless(self):
        params = calibrate_gaussian(PrivacyBudget(1.0, 1e-5), 0.0)
        assert params.sigma == 0.0

    def test_matches_high_precision_oracle(self):
        params = calibrate_gaussian(PrivacyBudget(1.0, 1e-5), 1.0)
        assert params.sigma == pytest.approx(SIGMA_STAR_1_1E5, abs=1e-6)
        recovered = gaussian_tradeoff_delta(1.0, params.sigma, 1.0)
        assert abs(recovered - 1e-5) <= 1e-9

    def test_monotone_in_epsilon(self):
        s1 = calibrate_gaussian(PrivacyBudget(1.0, 1e-5), 1.0).sigma
        s8 = calibrate_gaussian(PrivacyBudget(8.0, 1e-5), 1.0).sigma
        assert s1 > s8

    def test_monotone_in_delta(self):
        tight = calibrate_gaussian(PrivacyBudget(1.0, 1e-7), 1.0).sigma
        loose = calibrate_gaussian(PrivacyBudget(1.0, 1e-5), 1.0).sigma
        assert tight > loose

    def test_linear_in_sensitivity(self):
        unit = calibrate_gaussian(PrivacyBudget(2.0, 1e-6), 1.0).sigma
        scaled = calibrate_gaussian(PrivacyBudget(2.0, 1e-6), 3.0).sigma
        assert scaled == pytest.approx(3.0 * unit, rel=1e-12)

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0, 8.0])
    @pytest.mark.parametrize("delta", [1e-5, 1e-7])
    def test_roundtrip_within_1e9(self, eps, delta):
        params = calibrate_gaussian(PrivacyBudget(eps, delta), 1.0)
        assert abs(gaussian_tradeoff_delta(eps, params.sigma) - delta) <= 1e-9

    @pytest.mark.parametrize("eps", [0.5, 1.0, 8.0])
    @pytest.mark.parametrize("delta", [1e-5, 1e-7])
    def test_never_worse_than_classical_bound(self, eps, delta):
        budget = PrivacyBudget(eps, delta)
        assert calibrate_gaussian(budget, 1.0).sigma <= classical_gaussian_sigma(budget, 1.0)

    def test_pure_dp_rejected(self):
        with pytest.raises(CalibrationError):
            calibrate_gaussian(PrivacyBudget(1.0, 0.0), 1.0)

    def test_infinite_epsilon_means_no_noise(self):
        assert calibrate_gaussian(PrivacyBudget(math.inf, 1e-5), 1.0).sigma == 0.0


class TestGaussianNoise:
    def test_zero_sigma_gives_zero_vector(self):
        out = gaussian_noise(5, GaussianParams(0.0, 1.0), 42)
        assert np.array_equal(out, np.zeros(5))

    def test_sample_variance(self):
        out = gaussian_noise(100_000, GaussianParams(2.0, 1.0), derive_seed(7, "var"))
        assert np.var(out) == pytest.approx(4.0, rel=0.05)

    def test_deterministic_per_seed(self):
        a = gaussian_noise(64, GaussianParams(1.5, 1.0), derive_seed(3, "draw", 1))
        b = gaussian_noise(64, GaussianParams(1.5, 1.0), derive_seed(3, "draw", 1))
        c = gaussian_noise(64, GaussianParams(1.5, 1.0), derive_seed(3, "draw", 2))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestLaplace:
    def test_symmetry_at_zero(self):
        assert laplace_tail(0.0, LaplaceParams(1.0)) == 0.5

    def test_upper_limit(self):
        assert laplace_tail(1e9, LaplaceParams(1.0)) == pytest.approx(1.0)

    def test_closed_form_value(self):
        assert laplace_tail(1.0, LaplaceParams(1.0)) == pytest.approx(
            LAPLACE_CDF_B1_X1, abs=1e-12
        )

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 10))
    @settings(max_examples=100, deadline=None)
    def test_monotone_cdf(self, x, y, b):
        lo, hi = min(x, y), max(x, y)
        params = LaplaceParams(b)
        assert laplace_tail(lo, params) <= laplace_tail(hi, params) + 1e-15

    @pytest.mark.parametrize("x", [-1.0, 0.0, 1.0])
    def test_sampler_matches_cdf(self, x):
        n = 100_000
        params = LaplaceParams(1.0)
        draws = laplace_noise(n, params, derive_seed(11, "cdf", int(x)))
        p = laplace_tail(x, params)
        se = math.sqrt(p * (1 - p) / n)
        assert abs(np.mean(draws <= x) - p) <= 3 * se


class TestTradeoffEdgeCases:
    def test_infinite_epsilon_needs_no_noise_at_all(self):
        assert gaussian_tradeoff_delta(math.inf, 0.0, 1.0) == 0.0

    def test_zero_sigma_is_fully_revealing(self):
        assert gaussian_tradeoff_delta(1.0, 0.0, 1.0) == 1.0

    @given(st.floats(0.1, 10.0), st.floats(0.05, 20.0))
    @settings(max_examples=60, deadline=None)
    def test_tradeoff_decreasing_in_sigma(self, eps, sigma):
        assert gaussian_tradeoff_delta(eps, sigma) >= gaussian_tradeoff_delta(eps, sigma * 1.5) - 1e-15
