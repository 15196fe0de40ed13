import math

import numpy as np
import pytest

from deepis.cross_entropy import (
    GaussianMixtureProposal,
    cross_entropy_estimate,
    cross_entropy_ratio_estimate,
    fit_mixture,
)
from deepis.problems.annulus import AnnulusProblem
from deepis.rare_event import FailureEvent


def box_prior_2d():
    def log_prior(x):
        x = np.atleast_2d(x)
        inside = np.all((x >= 0.0) & (x <= 1.0), axis=1)
        return np.where(inside, 0.0, -np.inf)

    def sampler(rng, n):
        return rng.uniform(0.0, 1.0, size=(n, 2))

    return log_prior, sampler


def test_mixture_log_pdf_single_gaussian():
    gm = GaussianMixtureProposal(np.ones(1), np.zeros((1, 2)), np.eye(2)[None])
    val = gm.log_pdf(np.zeros((1, 2)))[0]
    assert val == pytest.approx(-math.log(2 * math.pi))


def test_mixture_sampling_moments():
    mean = np.array([[1.0, -2.0]])
    cov = np.array([[[0.5, 0.2], [0.2, 1.0]]])
    gm = GaussianMixtureProposal(np.ones(1), mean, cov)
    rng = np.random.default_rng(0)
    x = gm.sample(rng, 200_000)
    np.testing.assert_allclose(x.mean(axis=0), mean[0], atol=0.02)
    np.testing.assert_allclose(np.cov(x.T), cov[0], atol=0.02)


def test_fit_mixture_single_component_moments():
    rng = np.random.default_rng(1)
    x = rng.normal([2.0, 0.5], [0.3, 0.7], size=(50_000, 2))
    gm = fit_mixture(x, np.ones(len(x)), 1, rng)
    np.testing.assert_allclose(gm.means[0], [2.0, 0.5], atol=0.02)
    np.testing.assert_allclose(np.sqrt(np.diag(gm.covs[0])), [0.3, 0.7], atol=0.02)


def test_gaussian_target_converges_fast():
    # the proposal family contains the target: one level step suffices and
    # the integral of the (normalized) density is recovered
    def log_prior(x):
        x = np.atleast_2d(x)
        return -0.5 * np.sum(x * x, axis=1) - math.log(2 * math.pi)

    def sampler(rng, n):
        return rng.standard_normal((n, 2))

    event = FailureEvent(lambda x: np.zeros(len(np.atleast_2d(x))), "geq", lower=-1.0)
    rep = cross_entropy_estimate(event, log_prior, sampler, 2, n_per_iter=20_000, seed=2)
    assert rep.extras["n_iters"] <= 2
    assert abs(rep.estimate - 1.0) <= 3 * rep.estimate * rep.rel_std + 1e-12


def test_disk_probability_within_ten_percent():
    p = AnnulusProblem(r_outer=0.1, r_inner=0.0)
    log_prior, sampler = box_prior_2d()
    event = FailureEvent(p.radius_sq, "leq", upper=p.r_outer**2)
    rep = cross_entropy_estimate(
        event, log_prior, sampler, 2, n_per_iter=10_000, seed=3
    )
    assert abs(rep.estimate - p.exact_probability) / p.exact_probability <= 0.10


def test_singular_elite_covariance_regularized():
    # response depends on one coordinate only and elites collapse to a line
    def response(x):
        x = np.atleast_2d(x)
        return np.round(x[:, 0], 3) * 0.0 + (x[:, 0] > 0.5)

    log_prior, sampler = box_prior_2d()
    event = FailureEvent(response, "geq", lower=1.0)

    rep = cross_entropy_estimate(event, log_prior, sampler, 2, n_per_iter=2000, seed=4, max_iters=3)
    assert rep.extras["regularized"] or rep.degenerate is False


def test_iteration_cap_respected():
    # unreachable level: must stop at the cap and flag degeneracy or return
    def response(x):
        return -np.ones(len(np.atleast_2d(x)))

    log_prior, sampler = box_prior_2d()
    event = FailureEvent(response, "geq", lower=5.0)
    rep = cross_entropy_estimate(event, log_prior, sampler, 2, n_per_iter=500, seed=5, max_iters=4)
    assert rep.extras["n_iters"] <= 4
    assert rep.estimate == 0.0 and rep.degenerate


def test_ratio_estimate_gaussian_shift_analytic():
    # prior N(0,1), likelihood exp(-(x-2)^2/2): posterior N(1, 1/2);
    # event x > 1.5 has analytic posterior probability
    def log_prior(x):
        x = np.atleast_2d(x)
        return -0.5 * x[:, 0] ** 2 - 0.5 * math.log(2 * math.pi)

    def sampler(rng, n):
        return rng.standard_normal((n, 1))

    def log_lik(x):
        x = np.atleast_2d(x)
        return -0.5 * (x[:, 0] - 2.0) ** 2

    event = FailureEvent(lambda x: np.atleast_2d(x)[:, 0], "geq", lower=1.5)
    rep = cross_entropy_ratio_estimate(
        event, log_prior, sampler, 1, log_lik, n_per_iter=40_000, seed=6
    )
    from scipy.stats import norm

    truth = norm.sf(1.5, loc=1.0, scale=math.sqrt(0.5))
    assert abs(rep.estimate - truth) <= 4 * rep.estimate * rep.rel_std
