"""Chaotic maps, their iteration and orbit statistics."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaostex.dynamics import (
    ChaoticMapSpec,
    DegenerateOrbitError,
    DomainError,
    MapKind,
    OrbitStats,
    derivative,
    invariant_density,
    iterate,
    lyapunov_estimate,
    map_step,
    orbit_stats,
)

LOGISTIC = ChaoticMapSpec("logistic")
TENT = ChaoticMapSpec("tent")
SINE = ChaoticMapSpec("sine")
DEFAULTS = [LOGISTIC, TENT, SINE]

# Regression goldens from the first verified run (x0 = 0.123, burn-in 1000).
LOGISTIC_399_LAMBDA_1E5 = 0.640189537840484
SINE_LAMBDA_1E5 = 0.6888923841730605


class TestSpec:
    def test_defaults(self):
        assert LOGISTIC.param == 3.99
        assert TENT.param == 2.0
        assert SINE.param == 1.0

    @pytest.mark.parametrize("kind,bad", [("logistic", 4.01), ("tent", 2.5), ("sine", 1.2), ("sine", 0.0), ("tent", -1)])
    def test_param_range(self, kind, bad):
        with pytest.raises(ValueError):
            ChaoticMapSpec(kind, bad)

    def test_from_name(self):
        assert ChaoticMapSpec.from_name(" Sine ").kind is MapKind.SINE
        assert ChaoticMapSpec.from_name("logistic", 4.0).param == 4.0
        with pytest.raises(ValueError):
            ChaoticMapSpec.from_name("henon")

    def test_orbit_stats_invariants(self):
        with pytest.raises(ValueError):
            OrbitStats(0.1, np.ones(10) / 10, 0, 0)
        with pytest.raises(ValueError):
            OrbitStats(0.1, np.ones(10) / 10, 10, -1)


class TestMapStep:
    def test_logistic_half(self):
        assert map_step(LOGISTIC, 0.5) == pytest.approx(0.9975, abs=1e-15)

    def test_tent_lower_branch(self):
        assert map_step(TENT, 0.25) == 0.5

    def test_tent_half_takes_upper_branch(self):
        assert map_step(ChaoticMapSpec("tent", 1.5), 0.5) == 1.5 * 0.5

    def test_sine_half(self):
        assert map_step(SINE, 0.5) == 1.0

    def test_vectorized_matches_scalar(self, rng):
        x = rng.random(50)
        for spec in DEFAULTS:
            np.testing.assert_array_equal(map_step(spec, x), [map_step(spec, float(v)) for v in x])

    def test_roundoff_is_clamped(self):
        assert map_step(TENT, -1e-13) == 0.0
        assert map_step(TENT, 1 + 1e-13) == 0.0

    @pytest.mark.parametrize("x", [-1e-9, 1 + 1e-9, 1.5, float("nan")])
    def test_domain_error(self, x):
        with pytest.raises(DomainError):
            map_step(LOGISTIC, x)

    def test_range_closure_dense(self, rng):
        x = rng.random(1_000_000)
        x[:3] = [0.0, 0.5, 1.0]
        for spec in DEFAULTS:
            y = map_step(spec, x)
            assert y.min() >= 0.0 and y.max() <= 1.0

    @settings(max_examples=200, deadline=None)
    @given(
        kind=st.sampled_from(list(MapKind)),
        frac=st.floats(min_value=1e-6, max_value=1.0),
        x=st.floats(min_value=0.0, max_value=1.0),
    )
    def test_range_closure_any_valid_param(self, kind, frac, x):
        top = {MapKind.LOGISTIC: 4.0, MapKind.TENT: 2.0, MapKind.SINE: 1.0}[kind]
        y = map_step(ChaoticMapSpec(kind, top * frac), x)
        assert 0.0 <= y <= 1.0


class TestIterate:
    @pytest.mark.parametrize("spec", DEFAULTS)
    def test_k_zero_identity(self, spec):
        assert iterate(spec, 0.37, 0) == 0.37

    def test_tent_two_steps(self):
        assert iterate(TENT, 0.2, 2) == 0.8

    def test_logistic_matches_exact_rational_orbit(self):
        # Exact rational arithmetic on the same binary64 inputs, one rounding at the end.
        r, x = Fraction(3.99), Fraction(0.2)
        for _ in range(2):
            x = r * x * (1 - x)
        assert abs(iterate(LOGISTIC, 0.2, 2) - float(x)) <= 1e-12

    def test_logistic_matches_mpmath_orbit(self):
        mpmath = pytest.importorskip("mpmath")
        with mpmath.workdps(50):
            r, x = mpmath.mpf(3.99), mpmath.mpf(0.2)
            for _ in range(2):
                x = r * x * (1 - x)
            assert abs(iterate(LOGISTIC, 0.2, 2) - float(x)) <= 1e-12

    def test_negative_k(self):
        with pytest.raises(ValueError):
            iterate(SINE, 0.3, -1)

    def test_deterministic(self, rng):
        x = rng.random(100)
        for spec in DEFAULTS:
            np.testing.assert_array_equal(iterate(spec, x, 7), iterate(spec, x.copy(), 7))

    def test_semigroup(self, rng):
        x = rng.random(1000)
        for spec in DEFAULTS:
            np.testing.assert_array_equal(iterate(spec, iterate(spec, x, 3), 4), iterate(spec, x, 7))

    def test_sensitivity_to_initial_conditions(self):
        a, b = 0.3, 0.3 + 1e-10
        sep = []
        for _ in range(60):
            a, b = map_step(LOGISTIC, a), map_step(LOGISTIC, b)
            sep.append(abs(a - b))
        assert max(sep) > 0.1

    def test_zero_is_fixed(self):
        for spec in DEFAULTS:
            assert iterate(spec, 0.0, 10) == 0.0


class TestDerivative:
    def test_sine_continuous_at_half(self):
        h = 1e-6
        left = (map_step(SINE, 0.5) - map_step(SINE, 0.5 - h)) / h
        right = (map_step(SINE, 0.5 + h) - map_step(SINE, 0.5)) / h
        assert abs(left - right) < 1e-4
        assert derivative(SINE, 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_tent_kink_at_half(self):
        h = 1e-6
        left = (map_step(TENT, 0.5) - map_step(TENT, 0.5 - h)) / h
        right = (map_step(TENT, 0.5 + h) - map_step(TENT, 0.5)) / h
        assert left - right == pytest.approx(2 * TENT.param, rel=1e-6)

    @pytest.mark.parametrize("spec", [LOGISTIC, SINE])
    def test_matches_finite_difference(self, spec, rng):
        x = rng.uniform(0.05, 0.95, 20)
        h = 1e-7
        fd = (map_step(spec, x + h) - map_step(spec, x - h)) / (2 * h)
        np.testing.assert_allclose(derivative(spec, x), fd, atol=1e-6)


class TestLyapunov:
    def test_tent_is_ln2(self):
        assert abs(lyapunov_estimate(TENT, 0.123, 100_000) - math.log(2)) < 1e-6

    @pytest.mark.parametrize("x0", [0.123, 0.7, 0.31415])
    def test_tent_is_ln2_any_x0(self, x0):
        assert abs(lyapunov_estimate(TENT, x0, 10_000) - math.log(2)) < 1e-6

    def test_logistic_r4_is_ln2(self):
        est = lyapunov_estimate(ChaoticMapSpec("logistic", 4.0), 0.123, 1_000_000)
        assert abs(est - math.log(2)) < 1e-3

    def test_logistic_399_golden(self):
        est = lyapunov_estimate(LOGISTIC, 0.123, 100_000)
        assert est > 0.5
        assert est == pytest.approx(LOGISTIC_399_LAMBDA_1E5, abs=1e-12)

    def test_sine_golden(self):
        assert lyapunov_estimate(SINE, 0.123, 100_000) == pytest.approx(SINE_LAMBDA_1E5, abs=1e-12)

    def test_too_short(self):
        with pytest.raises(ValueError):
            lyapunov_estimate(TENT, 0.1, 9_999)

    @pytest.mark.parametrize("x0", [0.0, 1.0, -0.2])
    def test_x0_outside_open_interval(self, x0):
        with pytest.raises(ValueError):
            lyapunov_estimate(LOGISTIC, x0)

    def test_collapsing_orbit_is_degenerate(self):
        # 0.5 -> 1 -> 0 -> 0 ... under the r = 4 logistic map
        with pytest.raises(DegenerateOrbitError):
            lyapunov_estimate(ChaoticMapSpec("logistic", 4.0), 0.5)


def _multinomial_z(density, n):
    b = density.size
    p = 1.0 / b
    sigma = math.sqrt(p * (1 - p) / n)
    return np.abs(density - p).max() / sigma


class TestInvariantDensity:
    @pytest.mark.parametrize("n,bins", [(100_000, 10), (1_000_000, 20)])
    def test_tent_uniform(self, n, bins):
        d = invariant_density(TENT, 0.123, n, bins)
        assert _multinomial_z(d, n) < 3.0

    def test_logistic_extremes(self):
        d = invariant_density(LOGISTIC, 0.123, 1_000_000, 10)
        extremes = d[0] + d[-1]
        central = max(d[i] + d[i + 1] for i in range(1, 8))
        assert extremes > central

    @pytest.mark.parametrize("spec", DEFAULTS)
    def test_normalized(self, spec):
        d = invariant_density(spec, 0.123, 100_000, 10)
        assert abs(d.sum() - 1.0) < 1e-12
        assert (d >= 0).all()

    @pytest.mark.parametrize("spec", DEFAULTS)
    def test_zero_seed_is_fixed(self, spec):
        d = invariant_density(spec, 0.0, 100_000, 10)
        assert d[0] == 1.0

    def test_argument_checks(self):
        with pytest.raises(ValueError):
            invariant_density(TENT, 0.1, 99_999)
        with pytest.raises(ValueError):
            invariant_density(TENT, 0.1, 100_000, bins=9)

    def test_orbit_stats_shares_orbit(self):
        st_ = orbit_stats(LOGISTIC, 0.123, 100_000, 10)
        assert st_.lyapunov == lyapunov_estimate(LOGISTIC, 0.123, 100_000)
        np.testing.assert_array_equal(st_.density, invariant_density(LOGISTIC, 0.123, 100_000, 10))
        assert st_.n_samples == 100_000 and st_.burn_in == 1000
