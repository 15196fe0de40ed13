"""Functional tensor-trains and black-box cross approximation.

A :class:`FunctionalTT` stores one coefficient core per dimension over a
piecewise-linear basis; evaluating it contracts the matrix-valued factors
left to right. :func:`cross_approximate` builds one from a black-box batch
evaluator by alternating left/right sweeps with maxvol pivoting, growing the
ranks when the sampled residual stays above tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import UnivariateBasis, locate_cells

__all__ = [
    "FunctionalTT",
    "CrossOptions",
    "CrossResult",
    "CrossEvaluationError",
    "cross_approximate",
    "maxvol",
]


class CrossEvaluationError(RuntimeError):
    """The target returned a non-finite value at an evaluation point."""


class FunctionalTT:
    """Tensor-train of basis coefficients; callable on batches of points.

    cores[k] has shape (r_k, n_k, r_{k+1}) with r_0 = r_d = 1. Because the
    basis interpolates at its nodes, core entries are simultaneously
    coefficients and grid values.
    """

    def __init__(self, bases: list[UnivariateBasis], cores: list[np.ndarray]):
        if len(bases) != len(cores):
            raise ValueError("need one core per dimension")
        cores = [np.ascontiguousarray(np.asarray(c, dtype=float)) for c in cores]
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k, (b, c) in enumerate(zip(bases, cores)):
            if c.ndim != 3 or c.shape[1] != b.size:
                raise ValueError(f"core {k} shape {c.shape} mismatches basis size {b.size}")
            if k > 0 and c.shape[0] != cores[k - 1].shape[2]:
                raise ValueError(f"rank chain broken between cores {k - 1} and {k}")
        self.bases = list(bases)
        self.cores = cores

    @property
    def dim(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple([1] + [c.shape[2] for c in self.cores])

    def core_matrices(self, k: int, x: np.ndarray) -> np.ndarray:
        """Matrix factor of dimension k at points x, shape (m, r_k, r_{k+1})."""
        idx, s = locate_cells(self.bases[k], np.asarray(x, dtype=float))
        c = self.cores[k]
        left = c[:, idx, :] * (1.0 - s)[None, :, None]
        right = c[:, idx + 1, :] * s[None, :, None]
        return np.moveaxis(left + right, 1, 0)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points of shape (m, d) (or a single point of shape (d,))."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, TT has {self.dim}")
        v = np.ones((pts.shape[0], 1))
        for k in range(self.dim):
            v = np.einsum("ma,mab->mb", v, self.core_matrices(k, pts[:, k]))
        out = v[:, 0]
        return float(out[0]) if single else out

    def eval_grid_indices(self, indices: np.ndarray) -> np.ndarray:
        """Evaluate at grid multi-indices, shape (m, d) of ints."""
        indices = np.atleast_2d(np.asarray(indices, dtype=int))
        v = np.ones((indices.shape[0], 1))
        for k, c in enumerate(self.cores):
            v = np.einsum("ma,mab->mb", v, np.moveaxis(c[:, indices[:, k], :], 1, 0))
        return v[:, 0]

    def grid_values(self) -> np.ndarray:
        """Materialize the full tensor of node values (small dimensions only)."""
        full = self.cores[0]
        for c in self.cores[1:]:
            full = np.tensordot(full, c, axes=(full.ndim - 1, 0))
        return full[0, ..., 0]


@dataclass(frozen=True)
class CrossOptions:
    """Controls for the alternating cross sweeps and rank adaptation.

    The residual is the maximum relative mismatch between the tensor-train
    and the target over grid points not used for interpolation: fresh fiber
    points are checked against the previous fit during every sweep, and a
    held-out random sample of ``validation_size`` grid points is checked at
    the end.
    """

    max_rank: int = 10
    rank_increment: int = 2
    sweeps: int = 5
    tolerance: float = 3e-2
    initial_rank: int = 1
    pivot_oversampling: int = 2
    validation_size: int = 1000
    offgrid_validation: bool = True  # also sample the off-grid residual

    def __post_init__(self) -> None:
        if not (self.max_rank >= self.initial_rank >= 1):
            raise ValueError("need max_rank >= initial_rank >= 1")
        if self.sweeps < 1:
            raise ValueError("need at least one sweep")
        if self.rank_increment < 1 or self.pivot_oversampling < 1:
            raise ValueError("rank_increment and pivot_oversampling must be >= 1")


@dataclass
class CrossResult:
    tt: FunctionalTT
    residual: float  # held-out max relative error at grid points (cross error)
    n_evals: int
    converged: bool
    rank_capped: bool
    sweep_residuals: list[float] = field(default_factory=list)
    right_sets: list[np.ndarray] | None = None
    residual_offgrid: float = np.nan  # ditto at off-grid points (adds the basis error)


def maxvol(a: np.ndarray, tol: float = 1.05, max_iters: int = 200) -> np.ndarray:
    """Indices of r rows of an (n, r) matrix with quasi-maximal volume."""
    a = np.asarray(a, dtype=float)
    n, r = a.shape
    if n <= r:
        return np.arange(n)
    # norm-greedy start from column-pivoted QR of a^T
    rows = np.array(scipy.linalg.qr(a.T, pivoting=True, mode="r")[1][:r], dtype=int)
    for _ in range(max_iters):
        sub = a[rows]
        try:
            b = np.linalg.solve(sub.T, a.T).T
            if not np.all(np.isfinite(b)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            b = a @ np.linalg.pinv(sub)
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= tol:
            break
        rows[j] = i
    return rows


class _CachedEvaluator:
    """Deduplicating grid evaluator; n_evals counts cache misses only."""

    def __init__(self, f, grids: list[np.ndarray]):
        self.f = f
        self.grids = grids
        self.cache: dict[tuple[int, ...], float] = {}
        self.n_evals = 0
        self.scale = 0.0

    def fetch(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=int)
        keys = [tuple(row) for row in indices]
        missing = [k for k in dict.fromkeys(keys) if k not in self.cache]
        if missing:
            pts = np.array(
                [[self.grids[d][i] for d, i in enumerate(key)] for key in missing]
            )
            vals = np.asarray(self.f(pts), dtype=float).reshape(-1)
            if vals.shape[0] != len(missing):
                raise ValueError("target evaluator returned a wrong-sized batch")
            bad = ~np.isfinite(vals)
            if np.any(bad):
                where = pts[int(np.argmax(bad))]
                raise CrossEvaluationError(
                    f"non-finite target value at point {where.tolist()}"
                )
            self.n_evals += len(missing)
            self.scale = max(self.scale, float(np.max(np.abs(vals))))
            for key, val in zip(missing, vals):
                self.cache[key] = float(val)
        new = set(missing)
        fresh = np.array([k in new for k in keys])
        return np.array([self.cache[k] for k in keys]), fresh


def _unique_rows(existing: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    seen = {tuple(r) for r in existing}
    keep = []
    for row in candidates:
        t = tuple(row)
        if t not in seen:
            seen.add(t)
            keep.append(row)
    if not keep:
        return existing
    return np.vstack([existing, np.array(keep, dtype=int)])


def cross_approximate(
    f,
    bases: list[UnivariateBasis],
    opts: CrossOptions | None = None,
    seed: int = 0,
    initial_right_sets: list[np.ndarray] | None = None,
) -> CrossResult:
    """Rank-adaptive cross approximation of a black-box function.

    Parameters
    ----------
    f : callable
        Batch evaluator mapping an (m, d) coordinate array to (m,) values.
        Must be finite on the tensor-product domain; evaluations are
        deduplicated through a grid-index cache, so ``n_evals`` counts
        distinct target calls.
    bases : list of UnivariateBasis
        Per-dimension grids; the result interpolates f at the sampled cross
        points.
    opts : CrossOptions
        Sweep count, rank schedule and stopping tolerance.
    seed : int
        Seeds pivot initialization, rank enrichment and the validation sample.
    initial_right_sets : list of arrays, optional
        Warm-start pivot multi-index sets (as returned in
        ``CrossResult.right_sets``), e.g. from a previous layer targeting a
        nearby function. Sizes are clipped to the configured initial rank cap.

    Returns
    -------
    CrossResult
        Fitted tensor-train, relative residual estimate, number of target
        evaluations, convergence and rank-cap flags, and the final pivot sets.
    """
    opts = opts or CrossOptions()
    d = len(bases)
    grids = [b.nodes for b in bases]
    sizes = [b.size for b in bases]
    rng = np.random.Generator(np.random.Philox(key=seed))
    ev = _CachedEvaluator(f, grids)

    if d == 1:
        vals, _ = ev.fetch(np.arange(sizes[0])[:, None])
        tt = FunctionalTT(bases, [vals.reshape(1, sizes[0], 1)])
        residual = _validation_residual(tt, ev, sizes, rng, opts.validation_size)
        offgrid = (
            _offgrid_residual(tt, ev, bases, rng, opts.validation_size)
            if opts.offgrid_validation
            else residual
        )
        return CrossResult(tt, residual, ev.n_evals, True, False, [residual], [], offgrid)

    def rank_cap(k: int) -> int:
        left = int(min(np.prod(sizes[: k + 1], dtype=float), 2**31))
        right = int(min(np.prod(sizes[k + 1 :], dtype=float), 2**31))
        return min(opts.max_rank, left, right)

    def random_right(k: int, count: int) -> np.ndarray:
        return np.column_stack(
            [rng.integers(0, sizes[j], size=count) for j in range(k + 1, d)]
        )

    # right_sets[k]: pivot multi-indices into dimensions k+1..d-1, k = 0..d-2
    right_sets: list[np.ndarray] = []
    for k in range(d - 1):
        want = min(max(opts.initial_rank, 1), rank_cap(k))
        if initial_right_sets is not None and k < len(initial_right_sets):
            found = np.asarray(initial_right_sets[k], dtype=int).reshape(-1, d - 1 - k)
            found = _unique_rows(np.empty((0, d - 1 - k), dtype=int), found)
            want = min(max(want, found.shape[0]), rank_cap(k))
            found = found[:want]
        else:
            found = np.empty((0, d - 1 - k), dtype=int)
        while found.shape[0] < want:
            found = _unique_rows(found, random_right(k, want * opts.pivot_oversampling))
        right_sets.append(found[:want])
    left_sets: list[np.ndarray] = [np.empty((1, 0), dtype=int)] + [None] * (d - 1)

    cores: list[np.ndarray] = [None] * d
    snapshot: FunctionalTT | None = None
    sweep_residuals: list[float] = []
    converged = False

    def fiber_indices(k: int) -> np.ndarray:
        lefts = left_sets[k]
        rights = right_sets[k] if k < d - 1 else np.empty((1, 0), dtype=int)
        rl, n, rr = lefts.shape[0], sizes[k], rights.shape[0]
        li = np.repeat(lefts, n * rr, axis=0)
        gi = np.tile(np.repeat(np.arange(n), rr), rl)[:, None]
        ri = np.tile(rights, (rl * n, 1))
        return np.hstack([li, gi, ri])

    def fetch_fiber(k: int) -> tuple[np.ndarray, float]:
        """Evaluate the fiber cross of core k; returns values and the max
        relative mismatch of the previous fit at freshly evaluated points."""
        idx = fiber_indices(k)
        vals, fresh = ev.fetch(idx)
        err = np.nan
        if snapshot is not None and np.any(fresh):
            pred = snapshot.eval_grid_indices(idx[fresh])
            scale = ev.scale if ev.scale > 0 else 1.0
            err = float(np.max(np.abs(pred - vals[fresh])) / scale)
        lefts = left_sets[k]
        rights = right_sets[k] if k < d - 1 else np.empty((1, 0), dtype=int)
        return vals.reshape(lefts.shape[0], sizes[k], rights.shape[0]), err

    for sweep in range(opts.sweeps):
        errs: list[float] = []
        # left-to-right: refit cores 0..d-2, re-pick left pivot sets
        for k in range(d - 1):
            vals, err = fetch_fiber(k)
            errs.append(err)
            rl, n, rr = vals.shape
            unfold = vals.reshape(rl * n, rr)
            q = np.linalg.qr(unfold)[0] if rl * n >= rr else unfold
            piv = maxvol(q)
            cores[k] = _interp_solve(unfold, piv, axis=0).reshape(rl, n, rr)
            expanded = np.hstack(
                [np.repeat(left_sets[k], n, axis=0), np.tile(np.arange(n), rl)[:, None]]
            )
            left_sets[k + 1] = expanded[piv]
        vals, err = fetch_fiber(d - 1)
        errs.append(err)
        cores[d - 1] = vals
        snapshot = FunctionalTT(bases, [c.copy() for c in cores])

        # right-to-left: refit cores d-1..1, re-pick right pivot sets
        for k in range(d - 1, 0, -1):
            vals, err = fetch_fiber(k)
            errs.append(err)
            rl, n, rr = vals.shape
            unfold = vals.reshape(rl, n * rr)
            q = np.linalg.qr(unfold.T)[0] if n * rr >= rl else unfold.T
            piv = maxvol(q)
            cores[k] = _interp_solve(unfold, piv, axis=1).reshape(rl, n, rr)
            expanded = np.hstack(
                [np.repeat(np.arange(sizes[k]), rr)[:, None], np.tile(right_sets[k] if k < d - 1 else np.empty((1, 0), dtype=int), (sizes[k], 1))]
            )
            right_sets[k - 1] = expanded[piv]
        vals, err = fetch_fiber(0)
        errs.append(err)
        cores[0] = vals
        snapshot = FunctionalTT(bases, [c.copy() for c in cores])

        measured = [e for e in errs if np.isfinite(e)]
        sweep_res = max(measured) if measured else np.inf
        sweep_residuals.append(sweep_res)
        if sweep_res <= opts.tolerance:
            converged = True
            break

        if sweep < opts.sweeps - 1:
            for k in range(d - 1):
                cap = rank_cap(k)
                have = right_sets[k].shape[0]
                if have >= cap:
                    continue
                want = min(opts.rank_increment, cap - have)
                cand = random_right(k, want * opts.pivot_oversampling)
                right_sets[k] = _unique_rows(right_sets[k], cand)[: have + want]

    tt = FunctionalTT(bases, cores)
    if opts.validation_size > 0:
        residual = _validation_residual(tt, ev, sizes, rng, opts.validation_size)
        offgrid = (
            _offgrid_residual(tt, ev, bases, rng, opts.validation_size)
            if opts.offgrid_validation
            else residual
        )
        converged = converged or residual <= opts.tolerance
    else:
        measured = [r for r in sweep_residuals if np.isfinite(r)]
        residual = measured[-1] if measured else 1.0
        offgrid = residual
    at_cap = any(right_sets[k].shape[0] >= rank_cap(k) for k in range(d - 1))
    rank_capped = (not converged) and at_cap and residual > opts.tolerance
    return CrossResult(
        tt, residual, ev.n_evals, converged, rank_capped, sweep_residuals,
        [s.copy() for s in right_sets], offgrid,
    )


def _interp_solve(unfold: np.ndarray, piv: np.ndarray, axis: int) -> np.ndarray:
    """Interpolatory core fit: identity on the pivot rows (axis 0) or columns."""
    sub = unfold[piv] if axis == 0 else unfold[:, piv]
    try:
        if axis == 0:
            out = np.linalg.solve(sub.T, unfold.T).T
        else:
            out = np.linalg.solve(sub, unfold)
        if not np.all(np.isfinite(out)):
            raise np.linalg.LinAlgError
        return out
    except np.linalg.LinAlgError:
        pinv = np.linalg.pinv(sub)
        return unfold @ pinv if axis == 0 else pinv @ unfold


def _validation_residual(
    tt: FunctionalTT,
    ev: _CachedEvaluator,
    sizes: list[int],
    rng: np.random.Generator,
    size: int,
) -> float:
    """Max relative error of the TT against f on random held-out grid points."""
    if size <= 0:
        return 0.0
    idx = np.column_stack([rng.integers(0, n, size=size) for n in sizes])
    truth, _ = ev.fetch(idx)
    scale = ev.scale if ev.scale > 0 else 1.0
    if float(np.max(np.abs(truth)) if truth.size else 0.0) == 0.0 and ev.scale == 0.0:
        return 0.0
    return float(np.max(np.abs(tt.eval_grid_indices(idx) - truth)) / scale)


def _offgrid_residual(
    tt: FunctionalTT,
    ev: _CachedEvaluator,
    bases: list[UnivariateBasis],
    rng: np.random.Generator,
    size: int,
) -> float:
    """Max relative error at continuous points (cross plus basis error)."""
    if size <= 0:
        return 0.0
    pts = np.column_stack([rng.uniform(b.lower, b.upper, size=size) for b in bases])
    truth = np.asarray(ev.f(pts), dtype=float).reshape(-1)
    if np.any(~np.isfinite(truth)):
        where = pts[int(np.argmax(~np.isfinite(truth)))]
        raise CrossEvaluationError(f"non-finite target value at point {where.tolist()}")
    ev.n_evals += size
    scale = max(ev.scale, float(np.max(np.abs(truth))) if truth.size else 0.0)
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(tt(pts) - truth)) / scale)
