"""Spatial susceptible-infectious-removed compartment model.

K compartments coupled by graph diffusion; per-compartment infection and
recovery rates form the 2K-dimensional parameter vector, interleaved as
(theta_1, nu_1, ..., theta_K, nu_K). Observations are noisy infectious counts
at equidistant times; the risk functional is the running maximum of the
infectious count in a monitored compartment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..estimators import replicate_rng
from .ode import BatchSolution, OdeOptions, StepLimitError, integrate_batch

__all__ = [
    "SirProblem",
    "sir_rhs",
    "integrate_sir",
    "sir_response",
    "sir_log_likelihood",
    "sir_generate_data",
    "read_adjacency_file",
    "write_adjacency_file",
    "read_data_csv",
    "write_data_csv",
]


@dataclass(frozen=True)
class SirProblem:
    """Model configuration: graph, initial state, observations, risk event."""

    adjacency: tuple[tuple[int, ...], ...]
    s0: np.ndarray
    i0: np.ndarray
    r0: np.ndarray
    t_end: float = 5.0
    obs_times: np.ndarray | None = None
    noise_std: float = 1.0
    i_max: float = 88.0
    monitored: int = -1
    ode: OdeOptions = field(default_factory=OdeOptions)

    def __post_init__(self) -> None:
        k = len(self.adjacency)
        object.__setattr__(
            self, "adjacency", tuple(tuple(int(b) for b in nbrs) for nbrs in self.adjacency)
        )
        for name in ("s0", "i0", "r0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (k,):
                raise ValueError(f"{name} must have one entry per compartment")
            object.__setattr__(self, name, arr)
        for a, nbrs in enumerate(self.adjacency):
            for b in nbrs:
                if a == b or not 0 <= b < k:
                    raise ValueError("adjacency must be off-diagonal and in range")
                if a not in self.adjacency[b]:
                    raise ValueError("adjacency must be symmetric")
        if self.obs_times is None:
            object.__setattr__(self, "obs_times", self.t_end * np.arange(1, 7) / 6.0)
        else:
            object.__setattr__(self, "obs_times", np.asarray(self.obs_times, dtype=float))
        object.__setattr__(self, "monitored", int(self.monitored) % k)

    @property
    def n_compartments(self) -> int:
        return len(self.adjacency)

    @property
    def dim(self) -> int:
        return 2 * self.n_compartments

    @property
    def adjacency_matrix(self) -> np.ndarray:
        k = self.n_compartments
        a = np.zeros((k, k))
        for i, nbrs in enumerate(self.adjacency):
            if nbrs:
                a[i, list(nbrs)] = 1.0
        return a

    @property
    def initial_state(self) -> np.ndarray:
        return np.concatenate([self.s0, self.i0, self.r0])

    @staticmethod
    def lattice(k: int, **kwargs) -> "SirProblem":
        """Periodic 1-D lattice with the inhomogeneous initial populations
        S_k(0) = 99 - K + k, I_k(0) = K + 1 - k, R_k(0) = 0 for k = 1..K."""
        if k < 1:
            raise ValueError("need at least one compartment")
        if k == 1:
            adjacency = ((),)
        elif k == 2:
            adjacency = ((1,), (0,))
        else:
            adjacency = tuple(tuple(sorted({(j - 1) % k, (j + 1) % k})) for j in range(k))
        idx = np.arange(1, k + 1, dtype=float)
        return SirProblem(
            adjacency=adjacency,
            s0=99.0 - k + idx,
            i0=k + 1.0 - idx,
            r0=np.zeros(k),
            **kwargs,
        )

    @staticmethod
    def from_adjacency_file(path, s0, i0, r0, **kwargs) -> "SirProblem":
        return SirProblem(adjacency=read_adjacency_file(path), s0=s0, i0=i0, r0=r0, **kwargs)

    def true_rates(self, theta: float = 0.1, nu: float = 1.0) -> np.ndarray:
        """Paper-style ground truth [theta, nu, theta, nu, ...]."""
        x = np.empty(self.dim)
        x[0::2] = theta
        x[1::2] = nu
        return x


def sir_rhs(problem: SirProblem, state, rates) -> np.ndarray:
    """Time derivative for a batch: state (m, 3K), rates (m, 2K)."""
    state = np.atleast_2d(np.asarray(state, dtype=float))
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    k = problem.n_compartments
    s, i, r = state[:, :k], state[:, k : 2 * k], state[:, 2 * k :]
    theta = rates[:, 0::2]
    nu = rates[:, 1::2]
    adj = problem.adjacency_matrix
    deg = adj.sum(axis=1)

    def diffuse(z):
        return 0.5 * (z @ adj.T - z * deg[None, :])

    infect = theta * s * i
    recover = nu * i
    return np.concatenate(
        [-infect + diffuse(s), infect - recover + diffuse(i), recover + diffuse(r)],
        axis=1,
    )


def integrate_sir(
    problem: SirProblem,
    rates,
    options: OdeOptions | None = None,
    keep_dense: bool = False,
) -> BatchSolution:
    """Solve the model for a batch of rate vectors (m, 2K).

    Records the full state at the observation times and tracks the running
    maximum of the monitored infectious count through the dense output.
    """
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    if rates.shape[1] != problem.dim:
        raise ValueError(f"rates must have dimension {problem.dim}")
    if not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite")
    options = options or problem.ode
    y0 = np.tile(problem.initial_state, (rates.shape[0], 1))

    def rhs(t, y, members):
        del t
        return sir_rhs(problem, y, rates[members])

    try:
        return integrate_batch(
            rhs,
            y0,
            (0.0, problem.t_end),
            options,
            obs_times=problem.obs_times,
            track_index=problem.n_compartments + problem.monitored,
            keep_dense=keep_dense,
        )
    except StepLimitError as err:
        raise StepLimitError(f"{err}; first rate vector {rates[0].tolist()}") from err


def sir_response(
    problem: SirProblem, rates, options: OdeOptions | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Observed infectious counts and monitored running maximum.

    Returns (obs_i, max_i): obs_i has shape (m, K, n_obs) and max_i (m,).
    """
    sol = integrate_sir(problem, rates, options)
    k = problem.n_compartments
    obs_i = np.swapaxes(sol.obs[:, :, k : 2 * k], 1, 2)
    return obs_i, sol.tracked_max


def sir_log_likelihood(problem: SirProblem, rates, data, options=None) -> np.ndarray:
    """Gaussian log likelihood of infectious-count observations (unit noise
    variance scaled by the problem's noise_std)."""
    data = np.asarray(data, dtype=float)
    if data.shape != (problem.n_compartments, problem.obs_times.size):
        raise ValueError("data must have shape (K, n_obs)")
    obs_i, _ = sir_response(problem, rates, options)
    resid = (obs_i - data[None]) / problem.noise_std
    return -0.5 * np.einsum("mkt,mkt->m", resid, resid)


def sir_generate_data(
    problem: SirProblem, x_true, seed: int = 0, noise: bool = True
) -> np.ndarray:
    """Synthetic observations I_k(t_j; x_true) + N(0, noise_std^2) noise."""
    obs_i, _ = sir_response(problem, np.atleast_2d(x_true))
    data = obs_i[0]
    if noise:
        rng = replicate_rng(seed)
        data = data + problem.noise_std * rng.standard_normal(data.shape)
    return data


class SirWorkingModel:
    """SIR likelihood, risk response and prior in reference coordinates.

    The layered transport lives on the truncated reference domain; rates are
    recovered through the monotone map rates = prior_icdf(ref_cdf(u)), under
    which the box prior density becomes exactly the reference density. The
    likelihood and the response share one ODE solve per batch of points
    (bridging densities query both at the same points).
    """

    def __init__(self, problem: SirProblem, data, references, prior=None, options=None, cache_batches: int = 16):
        from .priors import BoxPrior, prior_transform

        self.problem = problem
        self.data = np.asarray(data, dtype=float)
        self.references = list(references)
        self.prior = prior or BoxPrior.cube(0.0, 2.0, problem.dim)
        self.options = options
        self._transform = prior_transform
        self._cache: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}
        self._cache_batches = cache_batches
        self.n_solves = 0

    def to_rates(self, u) -> np.ndarray:
        return self._transform(self.prior, self.references, u)

    def _solve(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        key = u.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        obs_i, max_i = sir_response(self.problem, self.to_rates(u), self.options)
        self.n_solves += u.shape[0]
        if len(self._cache) >= self._cache_batches:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = (obs_i, max_i)
        return obs_i, max_i

    def log_prior(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return sum(ref.log_pdf(u[:, k]) for k, ref in enumerate(self.references))

    def log_likelihood(self, u) -> np.ndarray:
        obs_i, _ = self._solve(u)
        resid = (obs_i - self.data[None]) / self.problem.noise_std
        return -0.5 * np.einsum("mkt,mkt->m", resid, resid)

    def response(self, u) -> np.ndarray:
        return self._solve(u)[1]

    def log_indicator(self, u) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log((self.response(u) > self.problem.i_max).astype(float))


# -- file formats -------------------------------------------------------------


def read_adjacency_file(path) -> tuple[tuple[int, ...], ...]:
    """Adjacency text format: first data line K, then symmetric 1-based edges."""
    lines = [
        ln.strip()
        for ln in Path(path).read_text().splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    if not lines:
        raise ValueError("empty adjacency file")
    k = int(lines[0])
    neighbors: list[set[int]] = [set() for _ in range(k)]
    for ln in lines[1:]:
        a_s, b_s = ln.split()
        a, b = int(a_s) - 1, int(b_s) - 1
        if not (0 <= a < k and 0 <= b < k) or a == b:
            raise ValueError(f"bad edge {ln!r}")
        neighbors[a].add(b)
        neighbors[b].add(a)
    return tuple(tuple(sorted(n)) for n in neighbors)


def write_adjacency_file(path, adjacency) -> None:
    lines = [str(len(adjacency))]
    for a, nbrs in enumerate(adjacency):
        for b in nbrs:
            if b > a:
                lines.append(f"{a + 1} {b + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_data_csv(path, data: np.ndarray) -> None:
    """Observation CSV with columns compartment, time_index, value (1-based)."""
    data = np.asarray(data, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["compartment", "time_index", "value"])
        for k in range(data.shape[0]):
            for j in range(data.shape[1]):
                writer.writerow([k + 1, j + 1, repr(float(data[k, j]))])


def read_data_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["compartment"]), int(rec["time_index"]), float(rec["value"])))
    if not rows:
        raise ValueError("empty data file")
    k = max(r[0] for r in rows)
    t = max(r[1] for r in rows)
    data = np.full((k, t), np.nan)
    for comp, tj, val in rows:
        data[comp - 1, tj - 1] = val
    if np.any(np.isnan(data)):
        raise ValueError("data file has missing (compartment, time) entries")
    return data
