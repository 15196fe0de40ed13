"""Importance sampling estimators and diagnostics over deep transports.

All weights are handled in log space; a weight of exactly zero is encoded as
-inf and is legal (rare-event indicators vanish off the failure set).
Accumulations go through numpy's pairwise summation on materialized arrays, so
results are bit-stable for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .dirt import DIRT

__all__ = [
    "CouplingSpec",
    "EstimatorReport",
    "HellingerEstimate",
    "replicate_rng",
    "ess",
    "log_ess",
    "dis_estimate",
    "ratio_estimate",
    "self_normalized_estimate",
    "hellinger_estimate",
    "relative_mse",
]


def replicate_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Counter-based RNG stream derived from (seed, replicate index)."""
    return np.random.Generator(np.random.Philox(key=seed).jumped(replicate))


@dataclass(frozen=True)
class CouplingSpec:
    """Antithetic coupling of the two reference streams of a ratio estimator.

    The coefficient correlates the underlying standard-normal variates
    (U_p from a*U_q plus sqrt(1-a^2) noise); pushing them through the normal
    CDF and the reference inverse CDF keeps both marginals exactly on the
    reference. a=1 shares the streams, a=0 makes them independent.
    """

    a: float = 0.0

    def __post_init__(self) -> None:
        if not -1.0 <= self.a <= 1.0:
            raise ValueError("coupling coefficient must lie in [-1, 1]")


@dataclass
class EstimatorReport:
    """One importance-sampling estimate with its weight diagnostics."""

    estimate: float
    n: int
    rel_std: float  # estimated relative standard deviation of the estimator
    weight_mean: float
    weight_rel_var: float
    ess: float
    n_evals: int
    seed: int
    d_hell: float | None = None
    degenerate: bool = False
    extras: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = {
            "estimate": float(self.estimate),
            "n": int(self.n),
            "ess": float(self.ess),
            "rel_std": float(self.rel_std),
            "d_hell": None if self.d_hell is None else float(self.d_hell),
            "n_evals": int(self.n_evals),
            "seed": int(self.seed),
        }
        if self.degenerate:
            rec["degenerate"] = True
        return rec


@dataclass(frozen=True)
class HellingerEstimate:
    value: float
    std_error: float
    n: int
    ess: float
    degenerate: bool = False


def ess(weights) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of nonnegative weights."""
    w = np.asarray(weights, dtype=float)
    total = np.sum(w)
    if total <= 0:
        return 0.0
    return float(total * total / np.sum(w * w))


def log_ess(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    finite = lw[np.isfinite(lw)]
    if finite.size == 0:
        return -np.inf
    return float(2.0 * special.logsumexp(lw[np.isfinite(lw)]) - special.logsumexp(2.0 * finite))


def _shifted_weights(log_w: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Return (weights / exp(shift), shift, degenerate)."""
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)) or np.any(np.isposinf(log_w)):
        raise ValueError("log weights must be finite or -inf")
    finite = np.isfinite(log_w)
    if not np.any(finite):
        return np.zeros_like(log_w), 0.0, True
    shift = float(np.max(log_w[finite]))
    w = np.exp(log_w - shift, where=finite, out=np.zeros_like(log_w))
    return w, shift, False


def _weight_report(log_w, n_evals: int, seed: int, with_hellinger: bool) -> EstimatorReport:
    w, shift, degenerate = _shifted_weights(log_w)
    n = w.size
    if degenerate:
        return EstimatorReport(0.0, n, np.inf, 0.0, np.inf, 0.0, n_evals, seed, None, True)
    mean = float(np.mean(w))
    var = float(np.var(w, ddof=1)) if n > 1 else 0.0
    rel_var = var / (mean * mean) if mean > 0 else np.inf
    rel_std = np.sqrt(rel_var / n)
    d_hell = None
    if with_hellinger:
        root = np.sqrt(w)
        d2 = 1.0 - float(np.mean(root)) / np.sqrt(mean)
        d_hell = float(np.sqrt(max(d2, 0.0)))
    return EstimatorReport(
        estimate=float(np.exp(shift) * mean),
        n=n,
        rel_std=float(rel_std),
        weight_mean=float(np.exp(shift) * mean),
        weight_rel_var=float(rel_var),
        ess=ess(w),
        n_evals=n_evals,
        seed=seed,
        d_hell=d_hell,
    )


def dis_estimate(
    dirt: DIRT,
    log_rho_star,
    n: int,
    seed: int = 0,
    compute_hellinger: bool = True,
) -> EstimatorReport:
    """Deep importance sampling estimate of zeta* = integral of rho*.

    Draws reference samples, pushes them through the transport, and averages
    the weights rho*(T(U)) / pbar(T(U)). Unbiased whenever rho* is
    nonnegative with support inside the reference image.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    rng = replicate_rng(seed)
    u = dirt.sample_reference(rng, n)
    x, log_pbar = dirt.forward_with_log_density(u)
    log_w = np.asarray(log_rho_star(x), dtype=float) - log_pbar
    return _weight_report(log_w, n_evals=n, seed=seed, with_hellinger=compute_hellinger)


def _coupled_reference(dirt_p: DIRT, dirt_q: DIRT, n: int, a: float, rng) -> tuple[np.ndarray, np.ndarray]:
    d = dirt_q.dim
    z_q = rng.standard_normal((n, d))
    if a == 1.0:
        z_p = z_q
    elif a == -1.0:
        z_p = -z_q
    else:
        z_p = a * z_q + np.sqrt(1.0 - a * a) * rng.standard_normal((n, d))
    cdf_q = 0.5 * (1.0 + special.erf(z_q / np.sqrt(2.0)))
    cdf_p = 0.5 * (1.0 + special.erf(z_p / np.sqrt(2.0)))
    u_q = np.column_stack([ref.inverse_cdf(cdf_q[:, k]) for k, ref in enumerate(dirt_q.references)])
    u_p = np.column_stack([ref.inverse_cdf(cdf_p[:, k]) for k, ref in enumerate(dirt_p.references)])
    return u_p, u_q


def ratio_estimate(
    dirt_p: DIRT,
    dirt_q: DIRT,
    log_f,
    log_likelihood,
    log_prior,
    n: int,
    coupling: CouplingSpec | None = None,
    seed: int = 0,
) -> EstimatorReport:
    """Ratio estimator of a posterior expectation E[f | data] = Q / Z.

    The numerator stream targets f * L * pi_0 through ``dirt_p`` and the
    denominator stream targets L * pi_0 through ``dirt_q``; the two reference
    streams are antithetically coupled per ``coupling``. The returned report
    carries the ratio; numerator and denominator sub-reports and the empirical
    weight correlation sit in ``extras``.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    coupling = coupling or CouplingSpec()
    rng = replicate_rng(seed)
    u_p, u_q = _coupled_reference(dirt_p, dirt_q, n, coupling.a, rng)

    x_p, log_pbar_p = dirt_p.forward_with_log_density(u_p)
    x_q, log_pbar_q = dirt_q.forward_with_log_density(u_q)
    log_wq = (
        np.asarray(log_f(x_p), dtype=float)
        + np.asarray(log_likelihood(x_p), dtype=float)
        + np.asarray(log_prior(x_p), dtype=float)
        - log_pbar_p
    )
    log_wz = (
        np.asarray(log_likelihood(x_q), dtype=float)
        + np.asarray(log_prior(x_q), dtype=float)
        - log_pbar_q
    )
    rep_q = _weight_report(log_wq, n_evals=n, seed=seed, with_hellinger=False)
    rep_z = _weight_report(log_wz, n_evals=n, seed=seed, with_hellinger=False)

    degenerate = rep_z.degenerate or rep_z.estimate <= 0.0
    estimate = 0.0 if degenerate else rep_q.estimate / rep_z.estimate

    # weight correlation and delta-method relative std of the ratio
    wq, _, deg_q = _shifted_weights(log_wq)
    wz, _, _ = _shifted_weights(log_wz)
    corr = 0.0
    if not (deg_q or degenerate) and np.std(wq) > 0 and np.std(wz) > 0:
        corr = float(np.corrcoef(wq, wz)[0, 1])
    if degenerate or deg_q:
        rel_std = np.inf
    else:
        vq = rep_q.weight_rel_var
        vz = rep_z.weight_rel_var
        cov_term = 2.0 * corr * np.sqrt(vq * vz) * (coupling.a != 0.0)
        rel_std = float(np.sqrt(max(vq + vz - cov_term, 0.0) / n))
    return EstimatorReport(
        estimate=float(estimate),
        n=n,
        rel_std=rel_std,
        weight_mean=rep_q.weight_mean,
        weight_rel_var=rep_q.weight_rel_var,
        ess=min(rep_q.ess, rep_z.ess),
        n_evals=2 * n,
        seed=seed,
        degenerate=degenerate or deg_q,
        extras={"numerator": rep_q, "denominator": rep_z, "weight_corr": corr, "coupling_a": coupling.a},
    )


def self_normalized_estimate(
    dirt: DIRT,
    log_f,
    log_likelihood,
    log_prior,
    n: int,
    seed: int = 0,
) -> EstimatorReport:
    """Self-normalized variant: one stream, shared importance density."""
    if n < 2:
        raise ValueError("need at least two samples")
    rng = replicate_rng(seed)
    u = dirt.sample_reference(rng, n)
    x, log_pbar = dirt.forward_with_log_density(u)
    log_wz = (
        np.asarray(log_likelihood(x), dtype=float)
        + np.asarray(log_prior(x), dtype=float)
        - log_pbar
    )
    log_wq = log_wz + np.asarray(log_f(x), dtype=float)
    rep_q = _weight_report(log_wq, n_evals=n, seed=seed, with_hellinger=False)
    rep_z = _weight_report(log_wz, n_evals=n, seed=seed, with_hellinger=False)
    degenerate = rep_z.degenerate or rep_z.estimate <= 0.0
    estimate = 0.0 if degenerate else rep_q.estimate / rep_z.estimate
    return EstimatorReport(
        estimate=float(estimate),
        n=n,
        rel_std=np.inf if degenerate else float(np.sqrt((rep_q.weight_rel_var + rep_z.weight_rel_var) / n)),
        weight_mean=rep_q.weight_mean,
        weight_rel_var=rep_q.weight_rel_var,
        ess=rep_z.ess,
        n_evals=n,
        seed=seed,
        degenerate=degenerate,
        extras={"numerator": rep_q, "denominator": rep_z},
    )


def hellinger_estimate(dirt: DIRT, log_rho_star, n: int, seed: int = 0) -> HellingerEstimate:
    """Self-normalized Hellinger distance between the transport density and a
    target known up to its constant, with a delta-method standard error.

    Uses D_H^2 = 1 - mean(sqrt(w)) / sqrt(mean(w)) over weights
    w = rho*(x) / pbar(x) at samples x from the transport.
    """
    if n < 100:
        raise ValueError("need at least 100 samples for the Hellinger estimate")
    rng = replicate_rng(seed)
    u = dirt.sample_reference(rng, n)
    x, log_pbar = dirt.forward_with_log_density(u)
    log_w = np.asarray(log_rho_star(x), dtype=float) - log_pbar
    w, _, degenerate = _shifted_weights(log_w)
    if degenerate:
        return HellingerEstimate(1.0, np.inf, n, 0.0, True)
    root = np.sqrt(w)
    a = float(np.mean(root))
    b = float(np.mean(w))
    d2 = 1.0 - a / np.sqrt(b)
    value = float(np.sqrt(max(d2, 0.0)))
    cov = np.cov(np.vstack([root, w]), ddof=1)
    grad = np.array([-1.0 / np.sqrt(b), 0.5 * a * b ** (-1.5)])
    var_d2 = float(grad @ cov @ grad) / n
    se = np.sqrt(max(var_d2, 0.0)) / (2.0 * max(value, 1e-6))
    return HellingerEstimate(value, float(se), n, ess(w))


def relative_mse(estimates, truth: float) -> dict:
    """Relative mean square error of a replicate ensemble and its exact
    variance/bias decomposition (population variance)."""
    e = np.asarray(estimates, dtype=float)
    if truth == 0:
        raise ValueError("relative error undefined for zero truth")
    rmse = float(np.mean((e - truth) ** 2) / truth**2)
    var_term = float(np.var(e, ddof=0) / truth**2)
    bias_sq = float((np.mean(e) - truth) ** 2 / truth**2)
    return {"rmse": rmse, "var_term": var_term, "bias_sq_term": bias_sq}
