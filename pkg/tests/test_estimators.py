import math

import numpy as np
import pytest

from deepis.basis import UnivariateBasis, truncated_normal_reference, uniform_reference
from deepis.dirt import DIRT, BridgingSchedule, build_dirt
from deepis.estimators import (
    CouplingSpec,
    dis_estimate,
    ess,
    hellinger_estimate,
    ratio_estimate,
    relative_mse,
    replicate_rng,
    self_normalized_estimate,
)
from deepis.ftt import CrossOptions
from deepis.problems.gauss_toy import GaussianConjugateToy


def identity_dirt(d=2, half_width=6.0):
    return DIRT([], [truncated_normal_reference(half_width)] * d)


def toy_dirts(toy, seed=0):
    """Small transports for the numerator/denominator of the toy ratio."""
    bases = [UnivariateBasis.uniform(-toy.half_width, toy.half_width, 33)]
    refs = [toy.reference]
    opts = CrossOptions(max_rank=6, sweeps=3, tolerance=1e-6, validation_size=100)

    def log_post(x):
        return toy.log_likelihood(x)  # pullback targets carry the prior as lambda

    # numerator target: smooth surrogate of the indicator times L
    def log_num(x):
        x2 = np.atleast_2d(x)
        from deepis.rare_event import log_sigmoid_smooth

        return log_sigmoid_smooth(x2[:, 0], toy.threshold, 40.0) + toy.log_likelihood(x)

    dirt_q = build_dirt(
        BridgingSchedule([lambda x: 0.3 * log_post(x), log_post]), bases, refs, opts, seed=seed
    )
    dirt_p = build_dirt(
        BridgingSchedule([lambda x: 0.3 * log_num(x), log_num]), bases, refs, opts, seed=seed + 1
    )
    return dirt_p, dirt_q


def test_ess_examples():
    assert ess(np.ones(7)) == pytest.approx(7.0)
    assert ess([0.0, 0.0, 3.0]) == pytest.approx(1.0)
    assert ess([1.0, 1.0, 2.0]) == pytest.approx(16.0 / 6.0)


def test_zero_variance_case():
    dirt = identity_dirt(2)
    rep = dis_estimate(dirt, dirt.log_reference_density, n=512, seed=0)
    assert rep.estimate == pytest.approx(1.0, abs=1e-13)
    assert rep.rel_std == pytest.approx(0.0, abs=1e-13)
    assert rep.ess == pytest.approx(512.0)
    assert rep.d_hell == pytest.approx(0.0, abs=1e-7)


def test_dis_unbiased_prior_tail():
    # identity transport, rho* = tail indicator times reference
    toy = GaussianConjugateToy(half_width=3.0)
    dirt = DIRT([], [toy.reference])

    def log_rho(x):
        return toy.log_indicator(x) + toy.log_prior(x)

    rep = dis_estimate(dirt, log_rho, n=200_000, seed=1)
    se = rep.estimate * rep.rel_std
    assert abs(rep.estimate - toy.prior_tail) <= 3 * se
    assert rep.n_evals == 200_000


def test_degenerate_weights_flagged():
    dirt = identity_dirt(1)

    def log_rho(x):
        return np.full(len(np.atleast_2d(x)), -np.inf)

    rep = dis_estimate(dirt, log_rho, n=64, seed=2)
    assert rep.degenerate
    assert rep.estimate == 0.0


def test_hellinger_identical_densities_zero():
    dirt = identity_dirt(2)
    est = hellinger_estimate(dirt, dirt.log_reference_density, n=2000, seed=3)
    assert est.value == pytest.approx(0.0, abs=1e-7)


def test_hellinger_two_gaussians_closed_form():
    # N(0,1) vs N(1,1): D_H^2 = 1 - exp(-1/8); wide truncation makes the
    # boundary effect negligible at this precision
    dirt = identity_dirt(1, half_width=6.0)

    def log_rho(x):
        x = np.atleast_2d(x)
        return -0.5 * (x[:, 0] - 1.0) ** 2

    est = hellinger_estimate(dirt, log_rho, n=100_000, seed=4)
    truth = math.sqrt(1.0 - math.exp(-1.0 / 8.0))
    assert abs(est.value - truth) <= 3 * est.std_error
    assert 0.0 <= est.value <= 1.0


def test_hellinger_estimate_in_unit_interval():
    dirt = identity_dirt(1)

    def log_rho(x):
        x = np.atleast_2d(x)
        return -8.0 * np.abs(x[:, 0] - 2.0)

    est = hellinger_estimate(dirt, log_rho, n=5000, seed=5)
    assert 0.0 <= est.value <= 1.0


def test_ratio_trivial_f_shared_streams():
    toy = GaussianConjugateToy()
    dirt_p, dirt_q = toy_dirts(toy)

    def log_one(x):
        return np.zeros(len(np.atleast_2d(x)))

    rep = ratio_estimate(
        dirt_q, dirt_q, log_one, toy.log_likelihood, toy.log_prior,
        n=256, coupling=CouplingSpec(a=1.0), seed=6,
    )
    assert rep.estimate == pytest.approx(1.0, abs=1e-12)


def test_ratio_matches_toy_truth():
    toy = GaussianConjugateToy()
    dirt_p, dirt_q = toy_dirts(toy)
    rep = ratio_estimate(
        dirt_p, dirt_q, toy.log_indicator, toy.log_likelihood, toy.log_prior,
        n=2**14, coupling=CouplingSpec(a=0.0), seed=7,
    )
    se = rep.estimate * rep.rel_std
    assert abs(rep.estimate - toy.posterior_tail) <= 3 * se
    assert rep.n_evals == 2 ** 15


def test_ratio_coupling_preserves_marginals():
    toy = GaussianConjugateToy()
    _, dirt_q = toy_dirts(toy)
    from deepis.estimators import _coupled_reference

    rng = replicate_rng(11)
    u_p, u_q = _coupled_reference(dirt_q, dirt_q, 200_000, -2.0 / 3.0, rng)
    ref = toy.reference
    for u in (u_p[:, 0], u_q[:, 0]):
        # empirical CDF at probe points matches the reference CDF
        for q in (-1.5, 0.0, 0.8):
            emp = np.mean(u <= q)
            se = math.sqrt(ref.cdf(q) * (1 - ref.cdf(q)) / len(u))
            assert abs(emp - ref.cdf(q)) <= 4 * se
    corr = np.corrcoef(u_p[:, 0], u_q[:, 0])[0, 1]
    assert corr < -0.5  # negative coupling carries through the copula


def test_self_normalized_matches_ratio_scale():
    toy = GaussianConjugateToy()
    _, dirt_q = toy_dirts(toy)
    rep = self_normalized_estimate(
        dirt_q, toy.log_indicator, toy.log_likelihood, toy.log_prior, n=2**14, seed=8
    )
    assert rep.estimate == pytest.approx(toy.posterior_tail, rel=0.25)
    assert rep.n_evals == 2 ** 14


def test_relative_mse_identity():
    rng = np.random.default_rng(9)
    est = rng.normal(2.0, 0.1, size=500)
    truth = 1.9
    parts = relative_mse(est, truth)
    assert parts["rmse"] == pytest.approx(parts["var_term"] + parts["bias_sq_term"], rel=1e-12)


def test_replicate_rng_streams_independent_and_reproducible():
    a1 = replicate_rng(42, 0).standard_normal(8)
    a2 = replicate_rng(42, 0).standard_normal(8)
    b = replicate_rng(42, 1).standard_normal(8)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)


def test_report_record_fields():
    dirt = identity_dirt(1)
    rep = dis_estimate(dirt, dirt.log_reference_density, n=128, seed=10)
    rec = rep.to_record()
    assert set(rec) >= {"estimate", "n", "ess", "rel_std", "d_hell", "n_evals", "seed"}
