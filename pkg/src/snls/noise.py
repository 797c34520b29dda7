"""The noise-coloring kernel operator and Wiener increment sampling.

The driving noise is W = Phi W_c with W_c cylindrical on L2 and Phi a real
kernel operator, Phi u(x) = int K(x,y) u(y) dy. Three kernel forms are
supported:

* convolution:  K(x,y) = kappa(x-y) with a real profile kappa, applied by FFT;
* explicit:     a dense real matrix of kernel samples (size limited);
* rank_r:       K(x,y) = sum_i phi_i(x) psi_i(y) from a few field pairs.

The discrete operator acting on grid values is B = K * dV so that it converges
to the integral operator under refinement. White increments are assembled on
the orthonormal grid basis e_j = delta_j / sqrt(dV), which ties the discrete
process to the continuum cylindrical one: E <dWc,f><dWc,g> = <f,g>_{L2} dt.

A kernel operator also carries the machinery the control problems need: its
Hilbert-Schmidt norms into H^s, the correction field F_Phi(x) = sum_j
(Phi e_j(x))^2, the spatial correlation c(x,z), and a regularized pseudo-inverse
restricted to the orthogonal complement of its null space.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, norm_values

__all__ = [
    "KernelOperator", "NoiseIncrement", "gaussian_kernel", "explicit_kernel",
    "rank_r_kernel", "apply", "hs_norm", "f_phi", "correlation",
    "sample_increment",
]

EXPLICIT_MAX_SIZE = 4096


@dataclass
class NoiseIncrement:
    """One Wiener increment: colored field dW = Phi(dWc) sqrt(dt).

    dWc_coords holds the raw standard-normal coordinates of the white field in
    the grid basis; they are retained for Girsanov reweighting.
    """

    dW: Field
    dWc_coords: np.ndarray
    dt: float


class KernelOperator:
    """Noise-coloring operator Phi on a Grid; immutable after construction.

    The configured s must satisfy s > d/4 + 1 (standing square-integrability
    hypothesis of the colored-noise model); construction fails otherwise.
    """

    def __init__(self, grid, s, form, *, kappa=None, matrix=None, pairs=None):
        if s <= grid.d / 4.0 + 1.0:
            raise ValueError(
                f"s={s} violates s > d/4 + 1 = {grid.d / 4.0 + 1.0} for d={grid.d}"
            )
        self.grid = grid
        self.s = float(s)
        self.form = form
        self._svd = None
        self._dense = None
        self._hs_cache = {}

        if form == "convolution":
            kappa = np.asarray(kappa, dtype=float)
            if kappa.shape != grid.shape:
                raise ValueError("convolution profile must be sampled on the grid")
            self.kappa = kappa
            self.kappa_hat = grid.fft(kappa)
        elif form == "explicit":
            matrix = np.asarray(matrix, dtype=float)
            if grid.size > EXPLICIT_MAX_SIZE:
                raise ValueError(
                    f"explicit kernels limited to n^d <= {EXPLICIT_MAX_SIZE}"
                )
            if matrix.shape != (grid.size, grid.size):
                raise ValueError("explicit kernel must be an n^d x n^d matrix")
            self.matrix = matrix
        elif form == "rank_r":
            self.pairs = [
                (np.asarray(p, dtype=float).reshape(grid.shape),
                 np.asarray(q, dtype=float).reshape(grid.shape))
                for p, q in pairs
            ]
        else:
            raise ValueError(f"unknown kernel form {form!r}")

        self.f_phi_values = self._compute_f_phi()
        if (self.f_phi_values < -1e-14).any():
            raise ValueError("F_Phi must be pointwise nonnegative")
        self.f_phi_values = np.maximum(self.f_phi_values, 0.0)
        self.hs0 = self.hs_norm(0.0)
        self.hs_s = self.hs_norm(self.s)

    # -- application ---------------------------------------------------------

    def apply_values(self, values):
        """Apply Phi to real grid values; supports leading batch axes."""
        g = self.grid
        vals = np.asarray(values, dtype=float)
        if self.form == "convolution":
            out = g.ifft(g.fft(vals) * self.kappa_hat).real * g.dV
        elif self.form == "explicit":
            flat = vals.reshape(vals.shape[: -g.d] + (g.size,))
            out = (flat @ self.matrix.T * g.dV).reshape(vals.shape)
        else:
            out = np.zeros_like(vals)
            for p, q in self.pairs:
                inner = g.dV * (vals * q).sum(axis=g.axes)
                out = out + np.multiply.outer(inner, p).reshape(vals.shape)
        return out

    # -- cached dense matrix and spectral data --------------------------------

    def dense_matrix(self):
        """B with (Phi v)_i = sum_j B_ij v_j (quadrature weight included)."""
        if self._dense is None:
            g = self.grid
            if g.size > EXPLICIT_MAX_SIZE:
                raise ValueError(
                    f"dense kernel representation limited to n^d <= {EXPLICIT_MAX_SIZE}"
                )
            if self.form == "explicit":
                self._dense = self.matrix * g.dV
            elif self.form == "rank_r":
                B = np.zeros((g.size, g.size))
                for p, q in self.pairs:
                    B += np.outer(p.ravel(), q.ravel()) * g.dV
                self._dense = B
            else:
                eye = np.eye(g.size).reshape((g.size,) + g.shape)
                self._dense = self.apply_values(eye).reshape(g.size, g.size).T
        return self._dense

    def _compute_f_phi(self):
        g = self.grid
        if self.form == "convolution":
            const = g.dV * float((self.kappa**2).sum())
            return np.full(g.shape, const)
        if self.form == "explicit":
            return ((self.matrix**2).sum(axis=1) * g.dV).reshape(g.shape)
        F = np.zeros(g.shape)
        for p1, q1 in self.pairs:
            for p2, q2 in self.pairs:
                F += p1 * p2 * (g.dV * (q1 * q2).sum())
        return F

    def hs_norm(self, s):
        """Hilbert-Schmidt norm of Phi from L2 into H^s on the grid.

        sum over the orthonormal grid basis of ||Phi e_j||^2_{H^s}; closed
        forms are used for the convolution and rank-r factorizations.
        """
        val = self._hs_cache.get(s)
        if val is not None:
            return val
        g = self.grid
        if self.form == "convolution":
            sq = g.L**g.d * float(norm_values(g, self.kappa, ("hs", s)) ** 2)
        elif self.form == "rank_r":
            sq = 0.0
            for p1, q1 in self.pairs:
                for p2, q2 in self.pairs:
                    hp = _hs_inner(g, p1, p2, s)
                    lq = g.dV * float((q1 * q2).sum())
                    sq += hp * lq
        else:
            cols = self.matrix.T.reshape((g.size,) + g.shape) * math.sqrt(g.dV)
            sq = float((norm_values(g, cols, ("hs", s)) ** 2).sum())
        val = math.sqrt(max(sq, 0.0))
        self._hs_cache[s] = val
        return val

    def correlation(self, x, z):
        """Noise correlation c(x,z) = int K(x+z,u) K(x,u) du at grid indices.

        x is a grid point index, z a grid offset index (periodic wrap); both
        may be ints (d=1) or index tuples.
        """
        g = self.grid
        xi = _as_index(x, g)
        zi = _as_index(z, g)
        xz = tuple((a + b) % g.n for a, b in zip(xi, zi))
        if self.form == "convolution":
            # stationary: c(z) = dV * sum_v kappa(v+z) kappa(v)
            shifted = self.kappa
            for ax, sh in enumerate(zi):
                shifted = np.roll(shifted, -sh, axis=ax)
            return g.dV * float((shifted * self.kappa).sum())
        if self.form == "explicit":
            i = np.ravel_multi_index(xi, g.shape)
            j = np.ravel_multi_index(xz, g.shape)
            return g.dV * float(self.matrix[j] @ self.matrix[i])
        c = 0.0
        for p1, q1 in self.pairs:
            for p2, q2 in self.pairs:
                c += p1[xz] * p2[xi] * g.dV * float((q1 * q2).sum())
        return c

    # -- sampling --------------------------------------------------------------

    def sample_coords(self, rng, batch=None):
        """Raw standard-normal white coordinates, shape (batch, size) or (size,)."""
        if batch is None:
            return rng.standard_normal(self.grid.size)
        return rng.standard_normal((batch, self.grid.size))

    def colored_from_coords(self, coords, dt):
        """dW grid values from white coordinates: Phi(sum_j xi_j e_j) sqrt(dt)."""
        g = self.grid
        lead = coords.shape[:-1]
        white = coords.reshape(lead + g.shape) / math.sqrt(g.dV)
        return self.apply_values(white) * math.sqrt(dt)

    # -- pseudo-inverse on (ker Phi)^perp ---------------------------------------

    def pinv_apply(self, gvals, rcond=1e-10):
        """Least-squares solve Phi h = g; returns (h, relative residual).

        The solution is the minimal-L2-norm one, i.e. orthogonal to ker Phi.
        Truncated at singular values below rcond * max singular value.
        """
        g = self.grid
        gvals = np.asarray(gvals, dtype=float)
        if self.form == "convolution":
            lam = self.kappa_hat * g.dV  # operator eigenvalues (circulant)
            mask = np.abs(lam) > rcond * np.abs(lam).max()
            inv = np.zeros_like(lam)
            inv[mask] = 1.0 / lam[mask]
            h = g.ifft(g.fft(gvals) * inv).real
        elif self.form == "rank_r":
            h = self._rank_r_pinv(gvals, rcond)
        else:
            U, S, Vt = self._svd_factors()
            keep = S > rcond * S[0] if S.size else S > 0
            coeff = (U.T[keep] @ gvals.ravel()) / S[keep]
            h = (Vt[keep].T @ coeff).reshape(g.shape)
        resid = self.apply_values(h) - gvals
        gn = float(np.linalg.norm(gvals.ravel()))
        rel = float(np.linalg.norm(resid.ravel())) / gn if gn > 0 else 0.0
        return h, rel

    def range_project(self, hvals, rcond=1e-10):
        """Project grid values onto (ker Phi)^perp (the row space of Phi)."""
        g = self.grid
        hvals = np.asarray(hvals, dtype=float)
        if self.form == "convolution":
            lam = self.kappa_hat * g.dV
            mask = (np.abs(lam) > rcond * np.abs(lam).max()).astype(float)
            return g.ifft(g.fft(hvals) * mask).real
        if self.form == "rank_r":
            # row space is span{psi_i}
            Q = np.stack([q.ravel() for _, q in self.pairs])
            G = Q @ Q.T
            coef = np.linalg.lstsq(G, Q @ hvals.ravel(), rcond=None)[0]
            return (Q.T @ coef).reshape(g.shape)
        U, S, Vt = self._svd_factors()
        keep = S > rcond * S[0] if S.size else S > 0
        Vr = Vt[keep]
        return (Vr.T @ (Vr @ hvals.ravel())).reshape(g.shape)

    def _svd_factors(self):
        if self._svd is None:
            self._svd = np.linalg.svd(self.dense_matrix(), full_matrices=False)
        return self._svd

    def _rank_r_pinv(self, gvals, rcond):
        g = self.grid
        P = np.stack([p.ravel() for p, _ in self.pairs])   # (R, size)
        Q = np.stack([q.ravel() for _, q in self.pairs])
        # Phi h = sum_i p_i (dV q_i . h); least squares in span{p_i}, then the
        # minimal-norm preimage lives in span{q_i}.
        Gp = P @ P.T
        c = np.linalg.lstsq(Gp, P @ gvals.ravel(), rcond=rcond)[0]
        Gq = (Q @ Q.T) * g.dV
        d = np.linalg.lstsq(Gq, c, rcond=rcond)[0]
        return (Q.T @ d).reshape(g.shape)


def _hs_inner(grid, a, b, s):
    ah = grid.fft(a)
    bh = grid.fft(b)
    w = grid.hs_weight(s) if s != 0.0 else 1.0
    return (grid.L**grid.d / grid.size**2) * float((w * (ah * bh.conj()).real).sum())


def _as_index(x, grid):
    if np.isscalar(x):
        x = (x,) * grid.d
    xi = tuple(int(v) % grid.n for v in x)
    if len(xi) != grid.d:
        raise ValueError(f"index {x!r} does not match d={grid.d}")
    return xi


# ----------------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------------

def gaussian_kernel(grid, length_scale=1.0, amplitude=1.0, s=None):
    """Stationary convolution kernel kappa(x) = a exp(-|x|^2 / (2 l^2)).

    The profile is sampled on symmetric box coordinates (single periodic
    image); choose l << L so wrap-around is negligible.
    """
    if s is None:
        s = default_s(grid.d)
    y2 = np.zeros(grid.shape)
    for xj in grid.x:
        yj = np.where(xj > grid.L / 2.0, xj - grid.L, xj)
        y2 = y2 + np.broadcast_to(yj**2, grid.shape)
    kappa = amplitude * np.exp(-y2 / (2.0 * length_scale**2))
    return KernelOperator(grid, s, "convolution", kappa=kappa)


def explicit_kernel(grid, matrix, s=None):
    if s is None:
        s = default_s(grid.d)
    return KernelOperator(grid, s, "explicit", matrix=matrix)


def rank_r_kernel(grid, pairs, s=None):
    if s is None:
        s = default_s(grid.d)
    return KernelOperator(grid, s, "rank_r", pairs=pairs)


def default_s(d):
    """A comfortable default smoothing order above the d/4 + 1 gate."""
    return {1: 2.0, 2: 2.5, 3: 3.0}[d]


# ----------------------------------------------------------------------------
# module-level operation wrappers
# ----------------------------------------------------------------------------

def apply(phi, v):
    """Phi v for a real Field v."""
    if v.grid != phi.grid:
        raise ValueError("grid mismatch between kernel operator and field")
    vals = v.values.real if np.iscomplexobj(v.values) else v.values
    if np.iscomplexobj(v.values) and np.abs(v.values.imag).max() > 0:
        raise ValueError("kernel operator applies to real fields")
    return Field(phi.grid, phi.apply_values(np.asarray(vals, dtype=float)))


def hs_norm(phi, s):
    return phi.hs_norm(s)


def f_phi(phi):
    """The correction field F_Phi(x) = int K(x,y)^2 dy (cached, nonnegative)."""
    return Field(phi.grid, phi.f_phi_values.copy())


def correlation(phi, x, z):
    return phi.correlation(x, z)


def sample_increment(phi, dt, rng):
    """Draw one Wiener increment; retains the white coordinates."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    coords = phi.sample_coords(rng)
    dw = phi.colored_from_coords(coords, dt)
    return NoiseIncrement(Field(phi.grid, dw), coords, float(dt))
