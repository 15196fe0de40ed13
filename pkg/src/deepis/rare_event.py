"""Smoothed failure indicators and bridging-schedule builders for rare events.

An indicator 1_A{h(x)} is replaced by a logistic surrogate of width 1/gamma;
an increasing gamma ladder (optionally tied to a likelihood-tempering ladder)
turns the surrogate into a bridging schedule for the layered transport.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dirt import BridgingSchedule

__all__ = [
    "FailureEvent",
    "SmoothingParams",
    "sigmoid_smooth",
    "log_sigmoid_smooth",
    "smooth_indicator",
    "log_smooth_indicator",
    "geometric_ladder",
    "tempering_ladder",
    "prior_bridging",
    "posterior_denominator_bridging",
    "posterior_numerator_bridging",
    "smoothing_bound",
]


def _softplus(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)) without overflow."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, t + np.log1p(np.exp(-np.abs(t))), np.log1p(np.exp(np.minimum(t, 0.0))))


def sigmoid_smooth(z, a: float, gamma: float) -> np.ndarray:
    """Logistic surrogate of 1_{[a, inf)}(z): 1 / (1 + exp(gamma (a - z)))."""
    if gamma <= 0:
        raise ValueError("smoothing width gamma must be positive")
    return np.exp(log_sigmoid_smooth(z, a, gamma))


def log_sigmoid_smooth(z, a: float, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ValueError("smoothing width gamma must be positive")
    z = np.asarray(z, dtype=float)
    return -_softplus(gamma * (a - z))


@dataclass(frozen=True)
class FailureEvent:
    """Failure set A for a scalar response h: one of [a, inf), (-inf, a], [a, b].

    ``response`` maps an (m, d) batch of points to (m,) response values.
    """

    response: object
    kind: str  # "geq" | "leq" | "interval"
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "geq":
            if self.lower is None:
                raise ValueError("[a, inf) event needs a lower threshold")
        elif self.kind == "leq":
            if self.upper is None:
                raise ValueError("(-inf, a] event needs an upper threshold")
        elif self.kind == "interval":
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise ValueError("[a, b] event needs thresholds with a < b")
        else:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def indicator_of_response(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind == "geq":
            return (z >= self.lower).astype(float)
        if self.kind == "leq":
            return (z <= self.upper).astype(float)
        return ((z >= self.lower) & (z <= self.upper)).astype(float)

    def indicator(self, x) -> np.ndarray:
        return self.indicator_of_response(self.response(np.atleast_2d(np.asarray(x, dtype=float))))

    def score(self, z) -> np.ndarray:
        """Signed margin: >= 0 exactly on the event (used by level marching)."""
        z = np.asarray(z, dtype=float)
        if self.kind == "geq":
            return z - self.lower
        if self.kind == "leq":
            return self.upper - z
        return np.minimum(z - self.lower, self.upper - z)


def smooth_indicator(event: FailureEvent, gamma: float, x) -> np.ndarray:
    """Smoothed indicator of the event at points x, in (0, 1)."""
    z = event.response(np.atleast_2d(np.asarray(x, dtype=float)))
    return smooth_indicator_of_response(event, gamma, z)


def smooth_indicator_of_response(event: FailureEvent, gamma: float, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if event.kind == "geq":
        return sigmoid_smooth(z, event.lower, gamma)
    if event.kind == "leq":
        # reflection: 1_{(-inf,a]}(z) = 1_{[-a,inf)}(-z)
        return sigmoid_smooth(-z, -event.upper, gamma)
    both = sigmoid_smooth(z, event.lower, gamma) - sigmoid_smooth(z, event.upper, gamma)
    return np.maximum(both, 0.0)


def log_smooth_indicator(event: FailureEvent, gamma: float, z) -> np.ndarray:
    """Log of the smoothed indicator of the response value z, overflow-safe."""
    z = np.asarray(z, dtype=float)
    if event.kind == "geq":
        return log_sigmoid_smooth(z, event.lower, gamma)
    if event.kind == "leq":
        return log_sigmoid_smooth(-z, -event.upper, gamma)
    # difference of sigmoids, evaluated from whichever side keeps both terms
    # away from log(1) = 0 so no significance is lost in the far tails
    a, b = event.lower, event.upper

    def log_diff(big, small):
        delta = np.minimum(small - big, -1e-300)
        with np.errstate(divide="ignore", invalid="ignore"):
            return big + np.log(-np.expm1(delta))

    lower_side = log_diff(
        log_sigmoid_smooth(z, a, gamma), log_sigmoid_smooth(z, b, gamma)
    )
    upper_side = log_diff(
        log_sigmoid_smooth(-z, -b, gamma), log_sigmoid_smooth(-z, -a, gamma)
    )
    return np.where(z <= 0.5 * (a + b), lower_side, upper_side)


def geometric_ladder(start: float, stop: float, factor: float = math.sqrt(10.0)) -> list[float]:
    """Geometric sequence from start up to stop (inclusive, exact last value)."""
    if not (start > 0 and stop >= start and factor > 1):
        raise ValueError("need 0 < start <= stop and factor > 1")
    steps = max(0, int(round(math.log(stop / start) / math.log(factor))))
    ladder = [start * factor**j for j in range(steps + 1)]
    if not math.isclose(ladder[-1], stop, rel_tol=1e-9):
        ladder = [start * factor**j for j in range(steps)] + [stop]
    ladder[-1] = stop
    return ladder


def tempering_ladder(start: float = 1e-4, factor: float = 10.0 ** (1.0 / 3.0)) -> list[float]:
    """Likelihood tempering powers rising geometrically from start to exactly 1."""
    return geometric_ladder(start, 1.0, factor)


@dataclass(frozen=True)
class SmoothingParams:
    """Final width gamma* and the increasing ladder leading to it.

    Provide either the explicit ladder or leave ``gammas`` empty and derive it
    proportionally from a tempering ladder (gamma_l = beta_l * gamma*).
    """

    gamma_star: float
    gammas: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.gamma_star <= 0:
            raise ValueError("gamma* must be positive")
        gammas = tuple(float(g) for g in self.gammas)
        if gammas:
            if any(b >= c for b, c in zip(gammas, gammas[1:])):
                raise ValueError("smoothing ladder must be strictly increasing")
            if not math.isclose(gammas[-1], self.gamma_star, rel_tol=1e-9):
                raise ValueError("smoothing ladder must end at gamma*")
        object.__setattr__(self, "gammas", gammas)

    @staticmethod
    def geometric(gamma_init: float, gamma_star: float, factor: float = math.sqrt(10.0)):
        return SmoothingParams(gamma_star, tuple(geometric_ladder(gamma_init, gamma_star, factor)))

    def ladder(self, powers: list[float] | None = None) -> list[float]:
        if self.gammas:
            return list(self.gammas)
        if powers is None:
            raise ValueError("no explicit ladder; need tempering powers to derive one")
        return [b * self.gamma_star for b in powers]


def prior_bridging(event: FailureEvent, log_prior, smoothing: SmoothingParams) -> BridgingSchedule:
    """Schedule f_gamma * pi_0 over an increasing smoothing ladder."""
    gammas = smoothing.ladder()

    def make(gamma):
        def log_phi(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return log_smooth_indicator(event, gamma, event.response(x)) + log_prior(x)

        return log_phi

    return BridgingSchedule([make(g) for g in gammas], [{"gamma": g} for g in gammas])


def posterior_denominator_bridging(log_likelihood, log_prior, alphas: list[float]) -> BridgingSchedule:
    """Tempered-likelihood schedule L^alpha * pi_0 ending at alpha = 1."""
    alphas = [float(a) for a in alphas]
    if not alphas or any(a >= b for a, b in zip(alphas, alphas[1:])) or not math.isclose(alphas[-1], 1.0):
        raise ValueError("tempering powers must increase strictly and end at 1")

    def make(alpha):
        def log_phi(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return alpha * log_likelihood(x) + log_prior(x)

        return log_phi

    return BridgingSchedule([make(a) for a in alphas], [{"alpha": a} for a in alphas])


def posterior_numerator_bridging(
    event: FailureEvent,
    log_likelihood,
    log_prior,
    betas: list[float],
    smoothing: SmoothingParams,
) -> BridgingSchedule:
    """Joint smoothing-plus-tempering schedule f_gamma * L^beta * pi_0.

    By default the smoothing widths follow the tempering powers,
    gamma_l = beta_l * gamma*.
    """
    betas = [float(b) for b in betas]
    if not betas or any(a >= b for a, b in zip(betas, betas[1:])) or not math.isclose(betas[-1], 1.0):
        raise ValueError("tempering powers must increase strictly and end at 1")
    gammas = smoothing.ladder(betas)
    if len(gammas) != len(betas):
        raise ValueError("smoothing ladder and tempering ladder must share length")

    def make(beta, gamma):
        def log_phi(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            z = event.response(x)
            return log_smooth_indicator(event, gamma, z) + beta * log_likelihood(x) + log_prior(x)

        return log_phi

    return BridgingSchedule(
        [make(b, g) for b, g in zip(betas, gammas)],
        [{"beta": b, "gamma": g} for b, g in zip(betas, gammas)],
    )


def smoothing_bound(
    sup_response_density: float,
    zeta_star: float,
    gamma: float,
    square_integrable: bool = False,
) -> float:
    """Upper bound on the Hellinger error induced by sigmoid smoothing.

    Bounded response density: 2 sqrt(log2 * sup / zeta*) / sqrt(gamma). With
    ``square_integrable`` the first argument is the integral of the squared
    response density and the bound decays like gamma^{-1/4} with constant
    sqrt(2) (2 log2 - 1)^{1/4} (integral)^{1/4} / sqrt(zeta*).
    """
    if sup_response_density <= 0 or zeta_star <= 0 or gamma <= 0:
        raise ValueError("smoothing_bound needs positive inputs")
    if square_integrable:
        return (
            math.sqrt(2.0)
            / math.sqrt(zeta_star)
            * (sup_response_density) ** 0.25
            * (2.0 * math.log(2.0) - 1.0) ** 0.25
            * gamma**-0.25
        )
    return 2.0 * math.sqrt(math.log(2.0) * sup_response_density / zeta_star) / math.sqrt(gamma)
