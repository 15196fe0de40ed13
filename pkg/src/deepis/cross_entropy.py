"""Cross-entropy importance sampling baseline with Gaussian-mixture proposals.

Levels march an elite quantile of the failure margin toward the event; the
proposal is refit on the elites by weighted moment matching (EM when more
than one component). Posterior variants carry the tempering-free likelihood
weight throughout and a moment-matching run without levels estimates the
evidence for the ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import special

from .estimators import EstimatorReport, ess, replicate_rng
from .rare_event import FailureEvent

__all__ = ["GaussianMixtureProposal", "cross_entropy_estimate", "cross_entropy_ratio_estimate"]

_COV_JITTER = 1e-8
_EM_ITERS = 25


@dataclass
class GaussianMixtureProposal:
    weights: np.ndarray  # (c,)
    means: np.ndarray  # (c, d)
    covs: np.ndarray  # (c, d, d)
    regularized: bool = False

    def __post_init__(self) -> None:
        self._chols = []
        regularized = self.regularized
        for j in range(self.covs.shape[0]):
            cov = 0.5 * (self.covs[j] + self.covs[j].T)
            jitter = _COV_JITTER
            while True:
                try:
                    chol = np.linalg.cholesky(cov)
                    break
                except np.linalg.LinAlgError:
                    cov = cov + jitter * np.eye(cov.shape[0])
                    jitter *= 10.0
                    regularized = True
            self.covs[j] = cov
            self._chols.append(chol)
        self.regularized = regularized

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_pdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        parts = np.empty((self.weights.size, x.shape[0]))
        for j, chol in enumerate(self._chols):
            z = scipy.linalg.solve_triangular(chol, (x - self.means[j]).T, lower=True)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            parts[j] = (
                np.log(self.weights[j])
                - 0.5 * np.sum(z * z, axis=0)
                - 0.5 * (self.dim * np.log(2.0 * np.pi) + logdet)
            )
        return special.logsumexp(parts, axis=0)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        counts = rng.multinomial(n, self.weights)
        out = np.empty((n, self.dim))
        pos = 0
        for j, cnt in enumerate(counts):
            z = rng.standard_normal((cnt, self.dim))
            out[pos : pos + cnt] = self.means[j] + z @ self._chols[j].T
            pos += cnt
        return out[rng.permutation(n)]


def _fit_single(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    wsum = np.sum(w)
    mean = (w @ x) / wsum
    centered = x - mean
    cov = (centered.T * w) @ centered / wsum
    return mean, cov


def fit_mixture(
    x: np.ndarray, w: np.ndarray, n_components: int, rng: np.random.Generator
) -> GaussianMixtureProposal:
    """Weighted moment matching; EM refinement for multi-component mixtures."""
    m, d = x.shape
    if n_components == 1 or m <= n_components:
        mean, cov = _fit_single(x, w)
        return GaussianMixtureProposal(np.ones(1), mean[None], cov[None])
    # seed components on weighted draws, then run weighted EM
    picks = rng.choice(m, size=n_components, replace=False, p=w / np.sum(w))
    means = x[picks].copy()
    _, cov0 = _fit_single(x, w)
    covs = np.tile(cov0, (n_components, 1, 1))
    mix = np.full(n_components, 1.0 / n_components)
    gm = GaussianMixtureProposal(mix, means, covs)
    for _ in range(_EM_ITERS):
        logp = np.empty((n_components, m))
        for j in range(n_components):
            comp = GaussianMixtureProposal(np.ones(1), gm.means[j][None], gm.covs[j][None].copy())
            logp[j] = np.log(gm.weights[j] + 1e-300) + comp.log_pdf(x)
        logp -= special.logsumexp(logp, axis=0, keepdims=True)
        resp = np.exp(logp) * w[None, :]
        totals = resp.sum(axis=1)
        if np.any(totals <= 0):
            break
        means = resp @ x / totals[:, None]
        covs = np.empty_like(gm.covs)
        for j in range(n_components):
            centered = x - means[j]
            covs[j] = (centered.T * resp[j]) @ centered / totals[j]
        gm = GaussianMixtureProposal(totals / totals.sum(), means, covs, gm.regularized)
    return gm


def cross_entropy_estimate(
    event: FailureEvent,
    log_prior,
    prior_sampler,
    dim: int,
    log_likelihood=None,
    n_components: int = 1,
    n_per_iter: int = 10_000,
    elite_frac: float = 0.1,
    seed: int = 0,
    max_iters: int = 50,
) -> EstimatorReport:
    """Estimate E = integral of 1_A{h} * L * pi_0 by cross-entropy IS.

    Parameters
    ----------
    event : FailureEvent over the problem domain.
    log_prior : batch log prior density (must be -inf outside its support so
        Gaussian proposal mass outside the domain gets zero weight).
    prior_sampler : callable (rng, n) -> (n, dim) prior draws for the first
        iteration.
    log_likelihood : optional tempering-free log likelihood for posterior
        numerators; omitted means a priori estimation.
    """
    if n_components < 1:
        raise ValueError("mixture size must be at least 1")
    rng = replicate_rng(seed)
    loglik = log_likelihood if log_likelihood is not None else (lambda x: np.zeros(len(x)))

    proposal = None
    x = prior_sampler(rng, n_per_iter)
    log_q = log_prior(x)
    n_evals = 0
    levels: list[float] = []
    regularized = False
    for _ in range(max_iters):
        z = event.response(x)
        n_evals += len(x)
        score = event.score(z)
        log_w = loglik(x) + log_prior(x) - log_q
        level = float(min(np.quantile(score, 1.0 - elite_frac), 0.0))
        levels.append(level)
        elite = score >= level
        wmax = np.max(log_w[elite]) if np.any(elite & np.isfinite(log_w)) else -np.inf
        if not np.isfinite(wmax):
            return EstimatorReport(
                0.0, n_per_iter, np.inf, 0.0, np.inf, 0.0, n_evals, seed, None, True,
                {"n_iters": len(levels), "levels": levels},
            )
        w_elite = np.exp(log_w[elite] - wmax)
        proposal = fit_mixture(x[elite], w_elite, n_components, rng)
        regularized = regularized or proposal.regularized
        if level >= 0.0:
            break
        x = proposal.sample(rng, n_per_iter)
        log_q = proposal.log_pdf(x)

    # final estimate with a fresh sample from the converged proposal
    x = proposal.sample(rng, n_per_iter)
    log_q = proposal.log_pdf(x)
    z = event.response(x)
    n_evals += n_per_iter
    log_w = loglik(x) + log_prior(x) - log_q
    inside = event.score(z) >= 0.0
    w = np.where(inside & np.isfinite(log_w), np.exp(np.where(np.isfinite(log_w), log_w, 0.0)), 0.0)
    mean = float(np.mean(w))
    var = float(np.var(w, ddof=1))
    rel_std = np.sqrt(var / n_per_iter) / mean if mean > 0 else np.inf
    return EstimatorReport(
        estimate=mean,
        n=n_per_iter,
        rel_std=float(rel_std),
        weight_mean=mean,
        weight_rel_var=var / mean**2 if mean > 0 else np.inf,
        ess=ess(w),
        n_evals=n_evals,
        seed=seed,
        degenerate=mean <= 0.0,
        extras={"n_iters": len(levels), "levels": levels, "regularized": regularized},
    )


def _evidence_by_moment_matching(
    log_prior, prior_sampler, log_likelihood, dim, n_components, n_per_iter, rng, fit_iters=4
) -> tuple[float, float, float, int]:
    """Adaptive importance sampling for Z = E_prior[L]; returns
    (estimate, rel_std, ess, n_evals)."""
    x = prior_sampler(rng, n_per_iter)
    log_q = log_prior(x)
    n_evals = 0
    proposal = None
    for _ in range(fit_iters):
        log_w = log_likelihood(x) + log_prior(x) - log_q
        n_evals += len(x)
        wmax = np.max(log_w[np.isfinite(log_w)])
        w = np.exp(np.where(np.isfinite(log_w), log_w - wmax, -np.inf))
        proposal = fit_mixture(x, w, n_components, rng)
        x = proposal.sample(rng, n_per_iter)
        log_q = proposal.log_pdf(x)
    log_w = log_likelihood(x) + log_prior(x) - log_q
    n_evals += n_per_iter
    wmax = np.max(log_w[np.isfinite(log_w)])
    w = np.exp(np.where(np.isfinite(log_w), log_w - wmax, -np.inf))
    mean = float(np.mean(w))
    rel_std = float(np.sqrt(np.var(w, ddof=1) / n_per_iter) / mean)
    return float(np.exp(wmax) * mean), rel_std, ess(w), n_evals


def cross_entropy_ratio_estimate(
    event: FailureEvent,
    log_prior,
    prior_sampler,
    dim: int,
    log_likelihood,
    n_components: int = 1,
    n_per_iter: int = 10_000,
    elite_frac: float = 0.1,
    seed: int = 0,
    max_iters: int = 50,
) -> EstimatorReport:
    """Posterior failure probability Q/Z by two cross-entropy stages."""
    num = cross_entropy_estimate(
        event,
        log_prior,
        prior_sampler,
        dim,
        log_likelihood=log_likelihood,
        n_components=n_components,
        n_per_iter=n_per_iter,
        elite_frac=elite_frac,
        seed=seed,
        max_iters=max_iters,
    )
    rng = replicate_rng(seed, 1)
    z_est, z_rel, z_ess, z_evals = _evidence_by_moment_matching(
        log_prior, prior_sampler, log_likelihood, dim, n_components, n_per_iter, rng
    )
    degenerate = num.degenerate or z_est <= 0
    estimate = 0.0 if degenerate else num.estimate / z_est
    rel_std = np.inf if degenerate else float(np.hypot(num.rel_std, z_rel))
    return EstimatorReport(
        estimate=estimate,
        n=n_per_iter,
        rel_std=rel_std,
        weight_mean=num.weight_mean,
        weight_rel_var=num.weight_rel_var,
        ess=min(num.ess, z_ess),
        n_evals=num.n_evals + z_evals,
        seed=seed,
        degenerate=degenerate,
        extras={"numerator": num, "evidence": z_est, "evidence_rel_std": z_rel},
    )
