"""Annulus/disk failure event on the unit square with a uniform prior.

The failure set is R_i <= |x - x0| <= R_o; its probability is exactly
pi (R_o^2 - R_i^2), so every estimator test on this problem has analytic
ground truth. The smoothed surrogate is the product of two sigmoids in the
squared radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..dirt import BridgingSchedule
from ..rare_event import SmoothingParams

__all__ = ["AnnulusProblem"]


def _softplus(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, t + np.log1p(np.exp(-np.abs(t))), np.log1p(np.exp(np.minimum(t, 0.0))))


@dataclass(frozen=True)
class AnnulusProblem:
    r_outer: float
    r_inner: float = 0.0
    center: tuple[float, float] = (0.4, 0.4)

    def __post_init__(self) -> None:
        if not 0.0 <= self.r_inner < self.r_outer:
            raise ValueError("need 0 <= R_i < R_o")

    @property
    def exact_probability(self) -> float:
        return math.pi * (self.r_outer**2 - self.r_inner**2)

    def radius_sq(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = x - np.asarray(self.center)[None, :]
        return np.einsum("mk,mk->m", d, d)

    def indicator(self, x) -> np.ndarray:
        z = self.radius_sq(x)
        return ((z >= self.r_inner**2) & (z <= self.r_outer**2)).astype(float)

    def log_indicator(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.indicator(x))

    def log_smooth(self, gamma: float, x) -> np.ndarray:
        """Log of the two-sigmoid surrogate in the squared radius."""
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        z = self.radius_sq(x)
        return -_softplus(gamma * (z - self.r_outer**2)) - _softplus(
            gamma * (self.r_inner**2 - z)
        )

    def smooth(self, gamma: float, x) -> np.ndarray:
        return np.exp(self.log_smooth(gamma, x))

    def bridging(self, smoothing: SmoothingParams) -> BridgingSchedule:
        """Prior schedule f_gamma * pi_0 (the prior is uniform, log pi_0 = 0)."""
        gammas = smoothing.ladder()

        def make(gamma):
            def log_phi(x):
                return self.log_smooth(gamma, x)

            return log_phi

        return BridgingSchedule([make(g) for g in gammas], [{"gamma": g} for g in gammas])
