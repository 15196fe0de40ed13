import math

import numpy as np
import pytest
from scipy.integrate import quad

from deepis.rare_event import (
    FailureEvent,
    SmoothingParams,
    geometric_ladder,
    log_sigmoid_smooth,
    log_smooth_indicator,
    posterior_denominator_bridging,
    posterior_numerator_bridging,
    prior_bridging,
    sigmoid_smooth,
    smooth_indicator,
    smoothing_bound,
    tempering_ladder,
)


def first_coord(x):
    return np.atleast_2d(np.asarray(x, dtype=float))[:, 0]


def test_sigmoid_midpoint():
    assert sigmoid_smooth(2.0, 2.0, 50.0) == pytest.approx(0.5)


def test_sigmoid_logistic_level():
    gamma = 7.0
    z = 1.0 + math.log(9.0) / gamma
    assert sigmoid_smooth(z, 1.0, gamma) == pytest.approx(0.9, abs=1e-12)


def test_sigmoid_overflow_safe():
    # exponent +800: linear value e^{-800} is below the double subnormal range,
    # so the linear form returns exactly 0 without NaN/inf; the log form keeps
    # the full information
    val = sigmoid_smooth(0.0, 800.0, 1.0)
    assert np.isfinite(val) and val >= 0.0
    assert log_sigmoid_smooth(0.0, 800.0, 1.0) == pytest.approx(-800.0)
    assert sigmoid_smooth(800.0, 0.0, 1.0) == pytest.approx(1.0)


def test_smooth_indicator_geq_midpoint():
    ev = FailureEvent(first_coord, "geq", lower=3.0)
    assert smooth_indicator(ev, 10.0, [[3.0]])[0] == pytest.approx(0.5)


def test_smooth_indicator_interval_deep_interior():
    ev = FailureEvent(first_coord, "interval", lower=0.0, upper=2.0)
    val = smooth_indicator(ev, 500.0, [[1.0]])[0]
    assert val == pytest.approx(1.0, abs=1e-12)


def test_smooth_indicator_leq_reflection():
    ev = FailureEvent(first_coord, "leq", upper=1.0)
    assert smooth_indicator(ev, 20.0, [[1.0]])[0] == pytest.approx(0.5)
    assert smooth_indicator(ev, 20.0, [[0.0]])[0] > 0.999


def test_smooth_indicator_pointwise_convergence():
    ev = FailureEvent(first_coord, "geq", lower=1.0)
    gamma = 600.0
    # |smooth - indicator| <= 0.01 once |h - a| >= 5 / gamma
    offs = np.array([5.0 / gamma, 0.02, 0.1])
    near = smooth_indicator(ev, gamma, (1.0 + offs)[:, None])
    far = smooth_indicator(ev, gamma, (1.0 - offs)[:, None])
    assert np.all(np.abs(near - 1.0) <= 0.01)
    assert np.all(np.abs(far) <= 0.01)


def test_smooth_indicator_high_gamma_off_boundary():
    ev = FailureEvent(first_coord, "interval", lower=0.0, upper=1.0)
    gamma = 1e6
    inside = smooth_indicator(ev, gamma, [[0.5]])[0]
    outside = smooth_indicator(ev, gamma, [[1.1]])[0]
    assert abs(inside - 1.0) <= 1e-6
    assert outside <= 1e-6


def test_log_smooth_indicator_matches_linear():
    ev = FailureEvent(first_coord, "interval", lower=0.2, upper=0.8)
    z = np.linspace(-0.5, 1.5, 101)
    lin = np.maximum(sigmoid_smooth(z, 0.2, 30.0) - sigmoid_smooth(z, 0.8, 30.0), 0.0)
    logv = log_smooth_indicator(ev, 30.0, z)
    # the linear difference itself cancels to ~eps/value in the tails
    np.testing.assert_allclose(np.exp(logv), lin, rtol=1e-6)


def test_log_smooth_indicator_no_overflow_far_tail():
    ev = FailureEvent(first_coord, "interval", lower=0.0, upper=1.0)
    logv = log_smooth_indicator(ev, 1e5, np.array([50.0, -50.0]))
    assert np.all(np.isfinite(logv))
    assert np.all(logv < -1e5)


def test_geometric_ladder_sqrt10():
    ladder = geometric_ladder(1e-3, 1e5)
    assert len(ladder) == 17
    assert ladder[0] == 1e-3
    assert ladder[-1] == 1e5
    ratios = np.diff(np.log10(ladder))
    np.testing.assert_allclose(ratios, 0.5, rtol=1e-9)


def test_tempering_ladder_13_layers():
    alphas = tempering_ladder()
    assert len(alphas) == 13
    assert alphas[0] == pytest.approx(1e-4)
    assert alphas[-1] == 1.0


def test_denominator_single_layer():
    log_lik = lambda x: -first_coord(x) ** 2
    log_prior = lambda x: np.zeros(len(np.atleast_2d(x)))
    sched = posterior_denominator_bridging(log_lik, log_prior, [1.0])
    assert len(sched) == 1
    pts = np.array([[0.3], [0.7]])
    np.testing.assert_allclose(sched.log_densities[0](pts), log_lik(pts))


def test_denominator_ladder_layers():
    log_lik = lambda x: -first_coord(x) ** 2
    log_prior = lambda x: np.zeros(len(np.atleast_2d(x)))
    sched = posterior_denominator_bridging(log_lik, log_prior, tempering_ladder())
    assert len(sched) == 13
    assert sched.params[0]["alpha"] == pytest.approx(1e-4)


def test_prior_bridging_single_layer_pointwise():
    ev = FailureEvent(first_coord, "geq", lower=0.5)
    log_prior = lambda x: np.full(len(np.atleast_2d(x)), -0.25)
    smoothing = SmoothingParams(100.0, (100.0,))
    sched = prior_bridging(ev, log_prior, smoothing)
    assert len(sched) == 1
    pts = np.linspace(0, 1, 9)[:, None]
    expected = np.log(smooth_indicator(ev, 100.0, pts)) - 0.25
    np.testing.assert_allclose(sched.log_densities[0](pts), expected, rtol=1e-12)


def test_numerator_bridging_gamma_follows_beta():
    ev = FailureEvent(first_coord, "geq", lower=0.5)
    log_lik = lambda x: -first_coord(x)
    log_prior = lambda x: np.zeros(len(np.atleast_2d(x)))
    betas = tempering_ladder()
    sched = posterior_numerator_bridging(ev, log_lik, log_prior, betas, SmoothingParams(1e4))
    assert len(sched) == 13
    gammas = [p["gamma"] for p in sched.params]
    np.testing.assert_allclose(gammas, [b * 1e4 for b in betas], rtol=1e-12)
    assert gammas[-1] == pytest.approx(1e4)


def test_smoothing_bound_value():
    # sup = 1, zeta* = 1, gamma = 4 -> 2 sqrt(ln 2) / 2 = sqrt(ln 2)
    assert smoothing_bound(1.0, 1.0, 4.0) == pytest.approx(math.sqrt(math.log(2.0)))


def test_smoothing_bound_power_law():
    b1 = smoothing_bound(2.0, 0.5, 10.0)
    b4 = smoothing_bound(2.0, 0.5, 40.0)
    assert b4 == pytest.approx(0.5 * b1)


def test_smoothing_bound_monotone_and_flag():
    gammas = np.logspace(0, 6, 13)
    vals = [smoothing_bound(1.0, 1.0, g) for g in gammas]
    assert np.all(np.diff(vals) < 0)
    v = smoothing_bound(3.0, 1.0, 16.0, square_integrable=True)
    expected = math.sqrt(2.0) * 3.0**0.25 * (2 * math.log(2) - 1) ** 0.25 * 16.0**-0.25
    assert v == pytest.approx(expected)
    with pytest.raises(ValueError):
        smoothing_bound(0.0, 1.0, 1.0)


def test_smoothing_error_slope_gaussian_response():
    # 1-D standard normal prior, response h(x) = x, threshold a = 2: the
    # Hellinger distance between the exact and smoothed optimal densities
    # should scale like gamma^{-1/2} (bounded response density)
    a = 2.0
    zeta_star = quad(lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi), a, 12.0)[0]

    def hellinger(gamma):
        def zg(x):
            return sigmoid_smooth(x, a, gamma) * math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)

        zeta_g = sum(
            quad(zg, lo, hi, limit=300)[0]
            for lo, hi in [(-12.0, a - 1.0), (a - 1.0, a + 1.0), (a + 1.0, 12.0)]
        )

        def integrand(x):
            ps = math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) / zeta_star if x >= a else 0.0
            pg = zg(x) / zeta_g
            return (math.sqrt(ps) - math.sqrt(pg)) ** 2

        val = sum(
            quad(integrand, lo, hi, limit=400)[0]
            for lo, hi in [(-12.0, a - 1.0), (a - 1.0, a), (a, a + 1.0), (a + 1.0, 12.0)]
        )
        return math.sqrt(0.5 * val)

    gammas = np.array([1e1, 1e2, 1e3, 1e4])
    dh = np.array([hellinger(g) for g in gammas])
    slope = np.polyfit(np.log(gammas), np.log(dh), 1)[0]
    assert -0.65 <= slope <= -0.35
