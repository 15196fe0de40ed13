"""One-dimensional conjugate Gaussian toy with closed-form ground truth.

Prior: standard normal truncated to [-s, s] (identical to the reference).
Likelihood: unnormalized Gaussian exp(-(x - y0)^2 / (2 sigma^2)). Posterior:
a truncated normal whose normalizing constant, tail probabilities and the
ratio R = pr(X > t | data) are all available through the normal CDF, making
the toy the oracle for the estimator statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..basis import ReferenceDensity1D, truncated_normal_reference

__all__ = ["GaussianConjugateToy"]


def _phi(x):
    return 0.5 * (1.0 + special.erf(np.asarray(x, dtype=float) / math.sqrt(2.0)))


@dataclass(frozen=True)
class GaussianConjugateToy:
    y_obs: float = 1.0
    sigma: float = 1.0
    half_width: float = 3.0
    threshold: float = 2.0

    @property
    def reference(self) -> ReferenceDensity1D:
        return truncated_normal_reference(self.half_width)

    # posterior = N(post_mean, post_var) truncated to [-s, s]
    @property
    def post_var(self) -> float:
        return self.sigma**2 / (1.0 + self.sigma**2)

    @property
    def post_mean(self) -> float:
        return self.y_obs / (1.0 + self.sigma**2)

    # -- evaluators on (m, 1) point arrays ----------------------------------

    def log_prior(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.reference.log_pdf(x[:, 0])

    def log_likelihood(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -0.5 * ((x[:, 0] - self.y_obs) / self.sigma) ** 2

    def log_indicator(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            return np.log((x[:, 0] > self.threshold).astype(float))

    def response(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0]

    # -- closed forms --------------------------------------------------------

    @property
    def _prior_norm(self) -> float:
        s = self.half_width
        return float(_phi(s) - _phi(-s))

    def _posterior_mass(self, lo: float, hi: float) -> float:
        """Integral of L * prior over [lo, hi]."""
        m, v = self.post_mean, self.post_var
        amp = math.exp(-0.5 * self.y_obs**2 / (1.0 + self.sigma**2))
        sd = math.sqrt(v)
        return float(
            amp * sd * (_phi((hi - m) / sd) - _phi((lo - m) / sd)) / self._prior_norm
        )

    @property
    def evidence(self) -> float:
        """Z = E_prior[L]."""
        return self._posterior_mass(-self.half_width, self.half_width)

    @property
    def numerator(self) -> float:
        """Q = E_prior[1{x > t} L]."""
        return self._posterior_mass(self.threshold, self.half_width)

    @property
    def posterior_tail(self) -> float:
        """R = pr(X > t | data) = Q / Z."""
        return self.numerator / self.evidence

    @property
    def prior_tail(self) -> float:
        """zeta* = pr_prior(X > t), the a priori rare-event probability."""
        s = self.half_width
        return float((_phi(s) - _phi(self.threshold)) / self._prior_norm)
