"""Batched adaptive Dormand-Prince 5(4) integration with dense output.

Every trajectory in the batch carries its own time, step size and PI error
controller; the batch advances in lockstep numpy operations over the active
members. Dense output uses the standard quartic interpolant of the pair, which
also drives observation-time extraction and running-maximum tracking with
per-step quadratic refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["OdeOptions", "StepLimitError", "BatchSolution", "integrate_batch"]


class StepLimitError(RuntimeError):
    """A trajectory exhausted its step budget before reaching the horizon."""


@dataclass(frozen=True)
class OdeOptions:
    rtol: float = 1e-6
    atol: float = 1e-6
    max_steps: int = 100_000

    def __post_init__(self) -> None:
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.zeros((7, 7))
_A[1, 0] = 1 / 5
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
_B = _A[6].copy()
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# quartic dense-output coefficients (Shampine) for the pair
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)
_ORDER = 5
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def _dense_eval(y0: np.ndarray, h: np.ndarray, k: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Interpolant at local coordinates theta in [0, 1]; shapes (m, s)."""
    powers = np.stack([theta, theta**2, theta**3, theta**4], axis=1)
    weights = powers @ _P.T  # (m, 7)
    return y0 + h[:, None] * np.einsum("mi,mis->ms", weights, k)


def _quartic_step_max(y0c: np.ndarray, h: np.ndarray, kc: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Maximum of the dense quartic for one component over a step.

    The interpolant is a quartic in the local coordinate, so interior extrema
    are roots of its cubic derivative; sign changes on a coarse grid are
    refined by bisection, vectorized over members and brackets.
    """
    w = h[:, None] * (kc @ _P)  # (na, 4): coefficients of theta .. theta^4

    def val(s):
        return y0c[:, None] + ((((w[:, 3:4] * s + w[:, 2:3]) * s) + w[:, 1:2]) * s + w[:, 0:1]) * s

    def der(s):
        return ((4.0 * w[:, 3:4] * s + 3.0 * w[:, 2:3]) * s + 2.0 * w[:, 1:2]) * s + w[:, 0:1]

    svals = val(grid[None, :])
    best = np.max(svals, axis=1)
    d = der(grid[None, :])
    lo = np.broadcast_to(grid[:-1], d[:, :-1].shape).copy()
    hi = np.broadcast_to(grid[1:], d[:, 1:].shape).copy()
    dlo = d[:, :-1].copy()
    active = (dlo * d[:, 1:]) < 0.0
    if np.any(active):
        for _ in range(30):
            mid = 0.5 * (lo + hi)
            dm = der(mid)
            left = (dlo * dm) <= 0.0
            hi = np.where(active & left, mid, hi)
            lo = np.where(active & ~left, mid, lo)
            dlo = np.where(active & ~left, dm, dlo)
        roots = 0.5 * (lo + hi)
        root_vals = np.where(active, val(roots), -np.inf)
        best = np.maximum(best, np.max(root_vals, axis=1))
    return best


@dataclass
class BatchSolution:
    """Results of a batched integration."""

    t_end: float
    y_end: np.ndarray  # (m, s)
    obs: np.ndarray | None  # (m, n_obs, s) states at requested times
    tracked_max: np.ndarray | None  # (m,) running max of the tracked component
    n_steps: np.ndarray  # accepted steps per member
    dense_steps: list | None = None  # per member: list of (t, h, y0, k)

    def interpolate(self, member: int, ts) -> np.ndarray:
        """Dense evaluation for one member (requires keep_dense=True)."""
        if self.dense_steps is None:
            raise ValueError("integration was run without keep_dense")
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        steps = self.dense_steps[member]
        out = np.empty((ts.size, self.y_end.shape[1]))
        starts = np.array([rec[0] for rec in steps])
        for j, t in enumerate(ts):
            i = int(np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(steps) - 1))
            t0, h, y0, k = steps[i]
            theta = np.clip((t - t0) / h, 0.0, 1.0)
            out[j] = _dense_eval(y0[None], np.array([h]), k[None], np.array([theta]))[0]
        return out


def _initial_step(rhs, t0, y0, sc, t_span):
    f0 = rhs(np.full(y0.shape[0], t0), y0, np.arange(y0.shape[0]))
    d0 = np.sqrt(np.mean((y0 / sc) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 > 1e-5) & (d1 > 1e-5), 0.01 * d0 / d1, 1e-6 * t_span)
    return np.minimum(h0, 0.1 * t_span), f0


def integrate_batch(
    rhs,
    y0: np.ndarray,
    t_span: tuple[float, float],
    options: OdeOptions | None = None,
    obs_times=None,
    track_index: int | None = None,
    dense_refine: int = 4,
    keep_dense: bool = False,
) -> BatchSolution:
    """Integrate dy/dt = rhs(t, y) for a batch of initial states.

    Parameters
    ----------
    rhs : callable
        Maps (t (ma,), y (ma, s), members (ma,)) to derivatives (ma, s),
        vectorized over the currently active batch members; ``members`` holds
        their indices into the original batch (for per-member parameters).
    y0 : (m, s) array of initial states.
    t_span : (t0, t1) with t1 > t0.
    obs_times : optional increasing times inside the span at which full states
        are recorded via dense output.
    track_index : optional state component whose running maximum over the span
        is tracked (sampled at ``dense_refine`` points per accepted step plus a
        quadratic refinement around the best sample).
    keep_dense : store per-step interpolation data (memory scales with steps
        times batch size; meant for small batches).
    """
    options = options or OdeOptions()
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2:
        raise ValueError("y0 must be a 2-D (batch, state) array")
    m, s = y.shape
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    span = t1 - t0

    if obs_times is not None:
        obs_times = np.asarray(obs_times, dtype=float)
        if np.any(obs_times < t0 - 1e-12) or np.any(obs_times > t1 + 1e-12):
            raise ValueError("observation times outside the span")
        obs = np.empty((m, obs_times.size, s))
        obs_ptr = np.zeros(m, dtype=int)
    else:
        obs = None
        obs_ptr = None

    tracked = y[:, track_index].copy() if track_index is not None else None

    t = np.full(m, t0)
    sc = options.atol + options.rtol * np.abs(y)
    h, _ = _initial_step(rhs, t0, y, sc, span)
    err_prev = np.ones(m)
    attempts = np.zeros(m, dtype=int)
    accepted = np.zeros(m, dtype=int)
    active = np.ones(m, dtype=bool)
    dense_steps = [[] for _ in range(m)] if keep_dense else None

    # the derivative of the quartic interpolant has at most 3 roots; a grid of
    # >= 8 cells isolates their sign changes reliably
    theta_grid = np.linspace(0.0, 1.0, max(dense_refine, 8) + 1)

    while np.any(active):
        idx = np.flatnonzero(active)
        attempts[idx] += 1
        if np.any(attempts[idx] > options.max_steps):
            bad = idx[np.argmax(attempts[idx] > options.max_steps)]
            raise StepLimitError(f"step budget exhausted for batch member {bad}")
        ha = np.minimum(h[idx], t1 - t[idx])
        ya = y[idx]
        ta = t[idx]
        k = np.zeros((idx.size, 7, s))
        for stage in range(7):
            yi = ya + ha[:, None] * np.einsum("j,mjs->ms", _A[stage, :stage + 1], k[:, : stage + 1])
            k[:, stage] = rhs(ta + _C[stage] * ha, yi, idx)
        y_new = ya + ha[:, None] * np.einsum("j,mjs->ms", _B, k)
        err_vec = ha[:, None] * np.einsum("j,mjs->ms", _E, k)
        scale = options.atol + options.rtol * np.maximum(np.abs(ya), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2, axis=1))
        err = np.maximum(err, 1e-300)

        accept = err <= 1.0
        acc = idx[accept]
        if acc.size:
            ha_acc = ha[accept]
            k_acc = k[accept]
            ya_acc = ya[accept]
            t_new = ta[accept] + ha_acc

            if obs is not None:
                while True:
                    ready = (obs_ptr[acc] < obs_times.size) & (
                        obs_times[np.minimum(obs_ptr[acc], obs_times.size - 1)] <= t_new + 1e-12
                    )
                    if not np.any(ready):
                        break
                    rows = np.flatnonzero(ready)
                    members = acc[rows]
                    t_obs = obs_times[obs_ptr[members]]
                    theta = np.clip((t_obs - ta[accept][rows]) / ha_acc[rows], 0.0, 1.0)
                    vals = _dense_eval(ya_acc[rows], ha_acc[rows], k_acc[rows], theta)
                    obs[members, obs_ptr[members]] = vals
                    obs_ptr[members] += 1

            if tracked is not None:
                cand = _quartic_step_max(
                    ya_acc[:, track_index], ha_acc, k_acc[:, :, track_index], theta_grid
                )
                tracked[acc] = np.maximum(tracked[acc], cand)

            if keep_dense:
                for row, member in enumerate(acc):
                    dense_steps[member].append(
                        (ta[accept][row], ha_acc[row], ya_acc[row].copy(), k_acc[row].copy())
                    )

            y[acc] = y_new[accept]
            t[acc] = t_new
            accepted[acc] += 1
            done = t[acc] >= t1 - 1e-12 * span
            active[acc[done]] = False

        # PI step-size controller
        with np.errstate(over="ignore"):
            factor = _SAFETY * err ** (-0.7 / _ORDER) * err_prev[idx] ** (0.4 / _ORDER)
        factor = np.clip(factor, _MIN_FACTOR, _MAX_FACTOR)
        factor = np.where(accept, factor, np.minimum(factor, 1.0))
        h[idx] = ha * factor
        if np.any(h[idx] < 1e-14 * span):
            bad = idx[int(np.argmax(h[idx] < 1e-14 * span))]
            raise StepLimitError(f"step size underflow for batch member {bad}")
        err_prev[idx] = np.where(accept, err, err_prev[idx])

    return BatchSolution(
        t_end=t1,
        y_end=y,
        obs=obs,
        tracked_max=tracked,
        n_steps=accepted,
        dense_steps=dense_steps,
    )
