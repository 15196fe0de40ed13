"""Squared inverse Rosenblatt transport built from one tensor-train layer.

The unnormalized density is rho(x) = g(x)^2 + tau * lambda(x) with g in
functional tensor-train form and lambda a product reference density. All
marginals of the squared term are integrated exactly: the backward recursion
contracts each core with the Cholesky factor of the mass matrix of everything
to its right, so that

    rho_{<=k}(x_{<=k}) = || G_{<=k}(x_{<=k}) Lfac_{>k} ||^2 + tau lam_{<=k},

and every one-dimensional conditional CDF is a piecewise cubic (from the
squared piecewise-linear basis) plus a reference CDF term, evaluated and
inverted in closed form per grid cell.

Internally the left products G_{<k} are carried as unit vectors with a
separate log magnitude, and the tau term enters through the well-scaled ratio
r = tau lam_{<k} / |G_{<k}|^2, so the transport stays stable in hundreds of
dimensions and across badly scaled densities.
"""

from __future__ import annotations

import numpy as np

from .basis import DomainError, ReferenceDensity1D, UnivariateBasis, locate_cells, mass_matrix
from .ftt import FunctionalTT

__all__ = ["SIRT", "MassMatrixError", "build_sirt"]

_CDF_TOL = 1e-12
_MAX_NEWTON = 100


class MassMatrixError(RuntimeError):
    """A marginal mass matrix came out numerically indefinite."""


def _factor_psd(m: np.ndarray) -> np.ndarray:
    """Factor L with L L^T = m, clipping roundoff-negative eigenvalues.

    Raises MassMatrixError when the matrix is indefinite beyond roundoff
    (min eigenvalue below -1e-12 * trace).
    """
    sym = 0.5 * (m + m.T)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(sym)
    scale = max(float(np.trace(sym)), np.finfo(float).tiny)
    if w.min() < -1e-12 * scale:
        raise MassMatrixError(
            f"indefinite marginal mass matrix: min eigenvalue {w.min():.3e}, trace {scale:.3e}"
        )
    w = np.clip(w, 0.0, None)
    try:
        return np.linalg.cholesky(v @ np.diag(w) @ v.T + 1e-300 * np.eye(len(w)))
    except np.linalg.LinAlgError:
        return v @ np.diag(np.sqrt(w))


def _tridiagonal_apply(diag: np.ndarray, off: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply the tridiagonal basis mass matrix along axis 1 of (r, n, r') b."""
    out = b * diag[None, :, None]
    out[:, :-1, :] += b[:, 1:, :] * off[None, :, None]
    out[:, 1:, :] += b[:, :-1, :] * off[None, :, None]
    return out


class SIRT:
    """One squared-inverse-Rosenblatt layer; immutable after construction."""

    def __init__(
        self,
        tt: FunctionalTT,
        tau: float,
        references: list[ReferenceDensity1D],
        factors: list[np.ndarray],
        mass: float,
    ):
        self.tt = tt
        self.tau = float(tau)
        self.references = list(references)
        self.factors = factors  # factors[j] = Lfac over dims >= j, j = 0..d (last = [[1]])
        self.mass = float(mass)  # integral of g^2
        self.zeta = self.mass + self.tau
        if not self.zeta > 0:
            raise ValueError("normalizing constant must be positive")
        self._log_tau = np.log(self.tau) if self.tau > 0 else -np.inf
        d = tt.dim
        # per-dimension precomputations
        self._b = [
            np.einsum("anb,bc->anc", tt.cores[j], factors[j + 1]) for j in range(d)
        ]
        self._h = [b.cell_widths for b in tt.bases]
        self._node_cdf = [
            references[j].cdf(tt.bases[j].nodes) for j in range(d)
        ]
        self._ref_cells = [np.diff(c) for c in self._node_cdf]
        max_nr = max(tt.bases[j].size * max(tt.cores[j].shape[2], 1) for j in range(d))
        self._chunk = max(32, int(6e6 / max_nr))
        self._first_state = None  # cached conditional tables of dimension 0

    # -- small helpers -------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.tt.dim

    @property
    def bases(self) -> list[UnivariateBasis]:
        return self.tt.bases

    def _check_points(self, x, d_expected: int) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        if pts.shape[1] != d_expected:
            raise ValueError(f"expected points of dimension {d_expected}, got {pts.shape[1]}")
        return pts

    def _advance(self, k, vhat, glog, lamlog, xk):
        """Absorb coordinate k into the left chain (normalized, log-scaled)."""
        idx, s = locate_cells(self.bases[k], xk)
        c = self.tt.cores[k]
        mats = np.moveaxis(
            c[:, idx, :] * (1.0 - s)[None, :, None] + c[:, idx + 1, :] * s[None, :, None],
            1,
            0,
        )
        v = np.einsum("ma,mab->mb", vhat, mats)
        norm = np.linalg.norm(v, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            vhat = np.where(norm[:, None] > 0, v / norm[:, None], 0.0)
            glog = glog + np.where(norm > 0, np.log(norm), -np.inf)
        lamlog = lamlog + self.references[k].log_pdf(xk)
        return vhat, glog, lamlog

    def _cell_state(self, k, vhat, glog, lamlog):
        """Node values and cell masses of the conditional at dimension k.

        Returns (p, e, a, b, cm): squared node coefficients p (m, n),
        adjacent-node dot products e (m, n-1), convex weights a, b of the
        squared-TT and reference parts, and cell masses cm (m, n-1) summing
        to the conditional normalization. For the first dimension the left
        chain is trivial, so the tables collapse to a single cached row that
        broadcasts against any batch.
        """
        if k == 0:
            if self._first_state is None:
                self._first_state = self._cell_state_raw(
                    0, np.ones((1, 1)), np.zeros(1), np.zeros(1)
                )
            return self._first_state
        return self._cell_state_raw(k, vhat, glog, lamlog)

    def _cell_state_raw(self, k, vhat, glog, lamlog):
        m = vhat.shape[0]
        b_k = self._b[k]
        ra, n, rb = b_k.shape
        coef = (vhat @ b_k.reshape(ra, n * rb)).reshape(m, n, rb)
        p = np.einsum("mnb,mnb->mn", coef, coef)
        e = np.einsum("mnb,mnb->mn", coef[:, :-1, :], coef[:, 1:, :])
        h = self._h[k]
        gm = (h[None, :] / 3.0) * (p[:, :-1] + p[:, 1:] + e)
        with np.errstate(over="ignore", invalid="ignore"):
            logr = self._log_tau + lamlog - 2.0 * glog
            r = np.exp(np.clip(logr, -745.0, 745.0))
            r = np.where(np.isneginf(glog), np.inf, r)
        with np.errstate(invalid="ignore"):
            a = 1.0 / (1.0 + r)
        a = np.where(np.isinf(r), 0.0, a)
        b = 1.0 - a
        cm = a[:, None] * gm + b[:, None] * self._ref_cells[k][None, :]
        return p, e, a, b, cm

    @staticmethod
    def _row_gather(table, idx):
        """table[i, idx[i]] with broadcasting of single-row tables."""
        if table.shape[0] == 1:
            return table[0, idx]
        return table[np.arange(idx.size), idx]

    def _partial_mass(self, k, p, e, a, b, idx, s, xk):
        """Conditional mass accumulated inside cell idx up to local coord s."""
        h = self._h[k][idx]
        pi = self._row_gather(p, idx)
        pj = self._row_gather(p, idx + 1)
        ei = self._row_gather(e, idx)
        s2 = s * s
        s3 = s2 * s
        pg = h * (pi * (s - s2 + s3 / 3.0) + ei * (s2 - 2.0 * s3 / 3.0) + pj * s3 / 3.0)
        pr = self.references[k].cdf(xk) - self._node_cdf[k][idx]
        return a * pg + b * pr

    def _cond_density(self, k, p, e, a, b, idx, s, xk, denom):
        """Normalized conditional density at xk (true units)."""
        pi = self._row_gather(p, idx)
        pj = self._row_gather(p, idx + 1)
        ei = self._row_gather(e, idx)
        q = pi * (1.0 - s) ** 2 + 2.0 * ei * s * (1.0 - s) + pj * s * s
        return (a * q + b * self.references[k].pdf(xk)) / denom

    # -- spec operations -----------------------------------------------------

    def unnormalized_marginal(self, k: int, x) -> np.ndarray:
        """rho_{<=k}(x_{<=k}) for 1 <= k <= d; equals rho(x) at k = d."""
        if not 1 <= k <= self.dim:
            raise ValueError(f"marginal level {k} outside 1..{self.dim}")
        pts = self._check_points(x, k)
        out = np.empty(pts.shape[0])
        for lo in range(0, pts.shape[0], self._chunk):
            blk = pts[lo : lo + self._chunk]
            m = blk.shape[0]
            vhat, glog, lamlog = np.ones((m, 1)), np.zeros(m), np.zeros(m)
            for j in range(k - 1):
                vhat, glog, lamlog = self._advance(j, vhat, glog, lamlog, blk[:, j])
            xk = blk[:, k - 1]
            idx, s = locate_cells(self.bases[k - 1], xk)
            coef = np.einsum("ma,anb->mnb", vhat, self._b[k - 1])
            rows = np.arange(m)
            w = coef[rows, idx, :] * (1.0 - s)[:, None] + coef[rows, idx + 1, :] * s[:, None]
            gsq = np.exp(2.0 * glog) * np.einsum("mb,mb->m", w, w)
            lam = np.exp(lamlog + self.references[k - 1].log_pdf(xk))
            out[lo : lo + self._chunk] = gsq + self.tau * lam
        return out

    def conditional_cdf(self, k: int, x_prev, xk) -> np.ndarray:
        """F_{k | <k}(x_k | x_{<k}) in [0, 1], exactly 0/1 at the endpoints."""
        xk = np.atleast_1d(np.asarray(xk, dtype=float))
        pts = self._check_points(
            np.asarray(x_prev, dtype=float).reshape(len(xk), k - 1), k - 1
        )
        u, _, _ = self._forward_dim(k - 1, pts, xk)
        return u

    def invert_conditional_cdf(self, k: int, x_prev, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(u < 0.0) or np.any(u > 1.0):
            raise DomainError("conditional CDF value outside [0, 1]")
        pts = self._check_points(
            np.asarray(x_prev, dtype=float).reshape(len(u), k - 1), k - 1
        )
        m = pts.shape[0]
        vhat, glog, lamlog = np.ones((m, 1)), np.zeros(m), np.zeros(m)
        for j in range(k - 1):
            vhat, glog, lamlog = self._advance(j, vhat, glog, lamlog, pts[:, j])
        xk, _ = self._invert_dim(k - 1, vhat, glog, lamlog, u)
        return xk

    def _forward_dim(self, k, x_prev, xk):
        """CDF of coordinate k given earlier coordinates (both 0-indexed)."""
        m = x_prev.shape[0]
        vhat, glog, lamlog = np.ones((m, 1)), np.zeros(m), np.zeros(m)
        for j in range(k):
            vhat, glog, lamlog = self._advance(j, vhat, glog, lamlog, x_prev[:, j])
        p, e, a, b, cm = self._cell_state(k, vhat, glog, lamlog)
        denom = np.sum(cm, axis=1)
        if np.any(denom <= 0.0):
            raise ZeroDivisionError(
                "conditional normalization vanished; marginal density is zero "
                "at a conditioning point (tau = 0)"
            )
        idx, s = locate_cells(self.bases[k], xk)
        cum = np.cumsum(cm, axis=1)
        before = np.where(idx > 0, np.take_along_axis(cum, np.maximum(idx - 1, 0)[:, None], 1)[:, 0], 0.0)
        mass = before + self._partial_mass(k, p, e, a, b, idx, s, xk)
        u = np.clip(mass / denom, 0.0, 1.0)
        return u, (p, e, a, b, idx, s, denom), (vhat, glog, lamlog)

    def _invert_dim(self, k, vhat, glog, lamlog, u):
        """Solve F_{k|<k}(x) = u per point; returns x and conditional density.

        Safeguarded Newton on the per-cell cubic plus reference term; converged
        points drop out of the iteration.
        """
        p, e, a, b, cm = self._cell_state(k, vhat, glog, lamlog)
        denom = np.sum(cm, axis=1)
        if np.any(denom <= 0.0):
            raise ZeroDivisionError(
                "conditional normalization vanished; marginal density is zero "
                "at a conditioning point (tau = 0)"
            )
        target = np.clip(u * denom, 0.0, denom)
        cum = np.cumsum(cm, axis=1)
        if cum.shape[0] == 1:
            idx = np.searchsorted(cum[0], target, side="left")
        else:
            idx = np.sum(cum < target[:, None], axis=1)
        idx = np.minimum(idx, cm.shape[1] - 1)
        before = np.where(idx > 0, self._row_gather(cum, np.maximum(idx - 1, 0)), 0.0)
        rem = np.clip(target - before, 0.0, None)

        h = self._h[k][idx]
        t0 = self.bases[k].nodes[idx]
        pi = self._row_gather(p, idx)
        pj = self._row_gather(p, idx + 1)
        ei = self._row_gather(e, idx)
        cdf0 = self._node_cdf[k][idx]
        cell_mass = np.maximum(self._row_gather(cm, idx), np.finfo(float).tiny)
        ref = self.references[k]
        a_pt = np.broadcast_to(a, rem.shape)
        b_pt = np.broadcast_to(b, rem.shape)
        den_pt = np.broadcast_to(denom, rem.shape)

        def mass_at(s, sub):
            s2 = s * s
            s3 = s2 * s
            pg = h[sub] * (
                pi[sub] * (s - s2 + s3 / 3.0)
                + ei[sub] * (s2 - 2.0 * s3 / 3.0)
                + pj[sub] * s3 / 3.0
            )
            pr = ref.cdf(t0[sub] + s * h[sub]) - cdf0[sub]
            return a_pt[sub] * pg + b_pt[sub] * pr

        s = np.clip(rem / cell_mass, 0.0, 1.0)
        lo = np.zeros_like(s)
        hi = np.ones_like(s)
        act = np.arange(len(rem))
        for _ in range(_MAX_NEWTON):
            sa = s[act]
            fval = mass_at(sa, act) - rem[act]
            done = np.abs(fval) <= _CDF_TOL * den_pt[act]
            if np.any(done):
                keep = ~done
                act = act[keep]
                if act.size == 0:
                    break
                sa = sa[keep]
                fval = fval[keep]
            hi[act] = np.where(fval > 0, sa, hi[act])
            lo[act] = np.where(fval <= 0, sa, lo[act])
            q = (
                pi[act] * (1.0 - sa) ** 2
                + 2.0 * ei[act] * sa * (1.0 - sa)
                + pj[act] * sa * sa
            )
            deriv = h[act] * (a_pt[act] * q + b_pt[act] * ref.pdf(t0[act] + sa * h[act]))
            with np.errstate(divide="ignore", invalid="ignore"):
                s_new = sa - fval / deriv
            fallback = ~np.isfinite(s_new) | (s_new <= lo[act]) | (s_new >= hi[act])
            s[act] = np.where(fallback, 0.5 * (lo[act] + hi[act]), s_new)
        xk = t0 + s * h
        dens = self._cond_density(k, p, e, a, b, idx, s, xk, denom)
        return xk, dens

    def _chain_log_density(self, glog, lamlog) -> np.ndarray:
        """log p at the point whose full chain state is (glog, lamlog)."""
        with np.errstate(invalid="ignore"):
            return np.logaddexp(2.0 * glog, self._log_tau + lamlog) - np.log(self.zeta)

    def _rt_full(self, pts, want_jacobian: bool):
        """Rosenblatt pass: returns (u, log |grad rt|, log p at the input)."""
        out = np.empty_like(pts)
        logjac = np.zeros(pts.shape[0]) if want_jacobian else None
        logdens = np.empty(pts.shape[0])
        for blo in range(0, pts.shape[0], self._chunk):
            blk = pts[blo : blo + self._chunk]
            m = blk.shape[0]
            vhat, glog, lamlog = np.ones((m, 1)), np.zeros(m), np.zeros(m)
            lj = np.zeros(m) if want_jacobian else None
            for k in range(self.dim):
                xk = blk[:, k]
                p, e, a, b, cm = self._cell_state(k, vhat, glog, lamlog)
                denom = np.sum(cm, axis=1)
                if np.any(denom <= 0.0):
                    raise ZeroDivisionError("conditional normalization vanished (tau = 0)")
                idx, s = locate_cells(self.bases[k], xk)
                cum = np.cumsum(cm, axis=1)
                before = np.where(
                    idx > 0,
                    np.take_along_axis(cum, np.maximum(idx - 1, 0)[:, None], 1)[:, 0],
                    0.0,
                )
                mass = before + self._partial_mass(k, p, e, a, b, idx, s, xk)
                u = np.clip(mass / denom, 0.0, 1.0)
                out[blo : blo + self._chunk, k] = self.references[k].inverse_cdf(u)
                if want_jacobian:
                    dens = self._cond_density(k, p, e, a, b, idx, s, xk, denom)
                    uref = self.references[k].pdf(out[blo : blo + self._chunk, k])
                    lj += np.log(np.maximum(dens, 1e-300)) - np.log(np.maximum(uref, 1e-300))
                vhat, glog, lamlog = self._advance(k, vhat, glog, lamlog, xk)
            logdens[blo : blo + self._chunk] = self._chain_log_density(glog, lamlog)
            if want_jacobian:
                logjac[blo : blo + self._chunk] = lj
        return out, logjac, logdens

    def _irt_full(self, pts, want_jacobian: bool):
        """Inverse Rosenblatt pass: (x, log |grad irt|, log p at the output)."""
        out = np.empty_like(pts)
        logjac = np.zeros(pts.shape[0]) if want_jacobian else None
        logdens = np.empty(pts.shape[0])
        for blo in range(0, pts.shape[0], self._chunk):
            blk = pts[blo : blo + self._chunk]
            m = blk.shape[0]
            vhat, glog, lamlog = np.ones((m, 1)), np.zeros(m), np.zeros(m)
            lj = np.zeros(m) if want_jacobian else None
            for k in range(self.dim):
                uk = blk[:, k]
                xi = self.references[k].cdf(uk)
                xk, dens = self._invert_dim(k, vhat, glog, lamlog, xi)
                out[blo : blo + self._chunk, k] = xk
                if want_jacobian:
                    uref = self.references[k].pdf(uk)
                    lj += np.log(np.maximum(uref, 1e-300)) - np.log(np.maximum(dens, 1e-300))
                vhat, glog, lamlog = self._advance(k, vhat, glog, lamlog, xk)
            logdens[blo : blo + self._chunk] = self._chain_log_density(glog, lamlog)
            if want_jacobian:
                logjac[blo : blo + self._chunk] = lj
        return out, logjac, logdens

    def rt(self, x, with_log_jacobian: bool = False):
        """Rosenblatt transport x -> u (target to reference coordinates).

        With ``with_log_jacobian`` also returns log |grad rt(x)|, the log
        Jacobian determinant of the map x -> u.
        """
        pts = self._check_points(x, self.dim)
        out, logjac, _ = self._rt_full(pts, with_log_jacobian)
        return (out, logjac) if with_log_jacobian else out

    def irt(self, u, with_log_jacobian: bool = False):
        """Inverse Rosenblatt transport u -> x; samples the density from the
        reference. With ``with_log_jacobian`` also returns log |grad irt(u)|."""
        pts = self._check_points(u, self.dim)
        out, logjac, _ = self._irt_full(pts, with_log_jacobian)
        return (out, logjac) if with_log_jacobian else out

    def log_density(self, x) -> np.ndarray:
        """log p(x) with p = (g^2 + tau lambda) / zeta, computed in log scale."""
        pts = self._check_points(x, self.dim)
        out = np.empty(pts.shape[0])
        for blo in range(0, pts.shape[0], self._chunk):
            blk = pts[blo : blo + self._chunk]
            m = blk.shape[0]
            vhat, glog, lamlog = np.ones((m, 1)), np.zeros(m), np.zeros(m)
            for k in range(self.dim):
                vhat, glog, lamlog = self._advance(k, vhat, glog, lamlog, blk[:, k])
            out[blo : blo + self._chunk] = self._chain_log_density(glog, lamlog)
        return out

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def sample(self, rng: np.random.Generator, n: int):
        """n independent draws via the inverse Rosenblatt transport."""
        u = np.column_stack(
            [ref.sample(rng, n) for ref in self.references]
        )
        return self.irt(u)


def build_sirt(
    tt: FunctionalTT,
    references: list[ReferenceDensity1D],
    tau: float | None = None,
    residual: float | None = None,
    tau_floor: float = 1e-14,
) -> SIRT:
    """Run the backward marginalization recursion and assemble a SIRT.

    Parameters
    ----------
    tt : FunctionalTT
        Approximation g of the square root of the unnormalized target.
    references : list of ReferenceDensity1D
        Per-dimension reference densities; domains must match the bases.
    tau : float, optional
        Regularization weight. When omitted it defaults to
        ``max(residual**2 * integral(g^2), tau_floor)``, following the
        epsilon-squared prescription for the defensive term.
    residual : float, optional
        Relative approximation error estimate of g, used by the default tau
        rule (required if tau is None).
    """
    d = tt.dim
    if len(references) != d:
        raise ValueError("need one reference density per dimension")
    for basis, ref in zip(tt.bases, references):
        if abs(basis.lower - ref.lower) > 1e-9 or abs(basis.upper - ref.upper) > 1e-9:
            raise DomainError(
                f"reference domain [{ref.lower}, {ref.upper}] must match basis "
                f"domain [{basis.lower}, {basis.upper}]"
            )
    factors: list[np.ndarray] = [None] * (d + 1)
    factors[d] = np.ones((1, 1))
    mass_mats = [mass_matrix(b) for b in tt.bases]
    for j in range(d - 1, -1, -1):
        b = np.einsum("anb,bc->anc", tt.cores[j], factors[j + 1])
        diag = np.diag(mass_mats[j]).copy()
        off = np.diag(mass_mats[j], 1).copy()
        mb = _tridiagonal_apply(diag, off, b)
        m_ge = np.einsum("aib,cib->ac", b, mb)
        factors[j] = _factor_psd(m_ge)
    mass = float(factors[0][0, 0] ** 2)
    if tau is None:
        if residual is None:
            raise ValueError("default tau rule needs a residual estimate")
        tau = max(residual * residual * mass, tau_floor)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return SIRT(tt, tau, references, factors, mass)
