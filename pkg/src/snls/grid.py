"""Periodic spectral grid, discrete Sobolev norms and the free Schrodinger group.

The spatial domain is the periodic box [0, L)^d sampled on n points per
dimension. Wavenumbers follow the usual FFT layout k_m = 2*pi*m/L with
m in {-n/2, ..., n/2-1}, so k_{-m} = -k_m exactly for |m| < n/2.

Sign convention: the free equation is i du/dt = Lap u, whose exact solution
multiplies Fourier mode m by exp(i|k_m|^2 t).

All norm helpers accept arrays with extra leading axes (batches of fields) and
reduce over the trailing d axes; the public operations wrap single fields.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Grid", "Field", "norm", "free_group_apply", "gradient", "momentum",
    "hamiltonian", "admissible_rate", "soliton", "gaussian", "plane_wave",
    "save_field", "load_field",
]


class Grid:
    """Uniform periodic grid on [0, L)^d.

    Parameters
    ----------
    d : spatial dimension (1, 2 or 3)
    n : points per dimension, even, >= 8 (powers of two recommended)
    L : box side length, > 0
    """

    def __init__(self, d, n, L):
        if d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {d}")
        if n < 8 or n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got {n}")
        if not L > 0:
            raise ValueError(f"L must be positive, got {L}")
        self.d = d
        self.n = int(n)
        self.L = float(L)
        self.shape = (self.n,) * d
        self.size = self.n**d
        self.dx = self.L / self.n
        self.dV = self.dx**d
        self.axes = tuple(range(-d, 0))

        k1 = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        # broadcastable wavenumber array per axis, e.g. shapes (n,1), (1,n) in 2-d
        self.k = tuple(
            k1.reshape((1,) * j + (self.n,) + (1,) * (d - 1 - j)) for j in range(d)
        )
        self.k2 = sum(kj**2 for kj in self.k)  # |k|^2, shape (n,)*d by broadcasting
        self.k2 = np.broadcast_to(self.k2, self.shape).copy()
        # first-derivative multipliers ik_j with the Nyquist mode zeroed so that
        # differentiation maps real fields to real fields
        k1_odd = k1.copy()
        k1_odd[self.n // 2] = 0.0
        self.ik = tuple(
            (1j * k1_odd).reshape((1,) * j + (self.n,) + (1,) * (d - 1 - j))
            for j in range(d)
        )
        x1 = self.dx * np.arange(self.n)
        self.x = tuple(
            x1.reshape((1,) * j + (self.n,) + (1,) * (d - 1 - j)) for j in range(d)
        )
        self._hs_weights = {}

    def hs_weight(self, s):
        """(1+|k|^2)^s multiplier, cached per s."""
        w = self._hs_weights.get(s)
        if w is None:
            w = (1.0 + self.k2) ** float(s)
            self._hs_weights[s] = w
        return w

    def coords(self):
        """Dense coordinate arrays, one (n,)*d array per dimension."""
        return [np.broadcast_to(xj, self.shape).copy() for xj in self.x]

    def fft(self, values):
        return np.fft.fftn(values, axes=self.axes)

    def ifft(self, values):
        return np.fft.ifftn(values, axes=self.axes)

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and (self.d, self.n, self.L) == (other.d, other.n, other.L)
        )

    def __hash__(self):
        return hash((self.d, self.n, self.L))

    def __repr__(self):
        return f"Grid(d={self.d}, n={self.n}, L={self.L})"


@dataclass
class Field:
    """A function sampled on a Grid; complex for states, real for noise/controls."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self):
        return Field(self.grid, self.values.copy())

    @property
    def is_finite(self):
        return bool(np.isfinite(self.values).all())


def _require_finite(values, what="field"):
    if not np.isfinite(values).all():
        raise ValueError(f"non-finite {what}")


# ----------------------------------------------------------------------------
# norms (batch-aware internals)
# ----------------------------------------------------------------------------

def parse_norm_kind(kind):
    """Normalize a norm spec to (tag, param).

    Accepts "l2", "h1", "linf", "w1inf", ("hs", s), ("w1p", p), and the
    string forms "hs:<s>" / "w1p:<p>".
    """
    if isinstance(kind, tuple):
        tag, param = kind
        tag = tag.lower()
    else:
        tag, _, param = str(kind).lower().partition(":")
        param = float(param) if param else None
    if tag == "l2":
        return ("hs", 0.0)
    if tag == "h1":
        return ("hs", 1.0)
    if tag == "hs":
        if param is None or param < 0:
            raise ValueError("Hs norm requires s >= 0")
        return ("hs", float(param))
    if tag == "w1p":
        if param is None:
            raise ValueError("W1p norm requires an exponent p")
        p = float(param)
        if math.isinf(p):
            return ("w1inf", None)
        if p < 2:
            raise ValueError("W1p norm requires p >= 2")
        return ("w1p", p)
    if tag == "linf":
        return ("linf", None)
    if tag == "w1inf":
        return ("w1inf", None)
    raise ValueError(f"unknown norm kind {kind!r}")


def _l2_sq(grid, values):
    return grid.dV * np.abs(values).astype(float).__pow__(2).sum(axis=grid.axes)


def _hs_sq(grid, values, s):
    # Parseval: ||u||^2_{H^s} = (L^d / n^{2d}) sum_m (1+|k|^2)^s |u_hat|^2
    hat = grid.fft(values)
    a2 = hat.real**2 + hat.imag**2
    if s != 0.0:
        a2 = a2 * grid.hs_weight(s)
    return (grid.L**grid.d / grid.size**2) * a2.sum(axis=grid.axes)


def _w1p_pow(grid, values, p):
    # ||u||^p_{W^{1,p}} = int |u|^p + sum_j int |d_j u|^p  (grid quadrature)
    total = (np.abs(values) ** p).sum(axis=grid.axes)
    hat = grid.fft(values)
    for ikj in grid.ik:
        dj = grid.ifft(hat * ikj)
        total = total + (np.abs(dj) ** p).sum(axis=grid.axes)
    return grid.dV * total


def _w1inf(grid, values):
    m = np.abs(values).max(axis=grid.axes)
    hat = grid.fft(values)
    for ikj in grid.ik:
        dj = grid.ifft(hat * ikj)
        m = np.maximum(m, np.abs(dj).max(axis=grid.axes))
    return m


def norm_values(grid, values, kind):
    """Norm of grid values (shape (..., n, ..., n)); reduces the field axes."""
    tag, param = parse_norm_kind(kind)
    if tag == "hs":
        if param == 0.0:
            return np.sqrt(_l2_sq(grid, values))
        return np.sqrt(_hs_sq(grid, values, param))
    if tag == "w1p":
        return _w1p_pow(grid, values, param) ** (1.0 / param)
    if tag == "linf":
        return np.abs(values).max(axis=grid.axes)
    return _w1inf(grid, values)


def norm(u, kind="l2"):
    """Discrete norm of a Field: L2/Hs spectrally, W1p by grid quadrature."""
    _require_finite(u.values)
    return float(norm_values(u.grid, u.values, kind))


# ----------------------------------------------------------------------------
# operators
# ----------------------------------------------------------------------------

def free_group_apply(u, t):
    """Exact flow of i du/dt = Lap u for time t (mode m -> exp(i|k_m|^2 t))."""
    _require_finite(u.values)
    hat = u.grid.fft(u.values)
    hat = hat * np.exp(1j * u.grid.k2 * t)
    return Field(u.grid, u.grid.ifft(hat))


def free_group_values(grid, values, t):
    """Array version of free_group_apply (supports batch axes)."""
    return grid.ifft(grid.fft(values) * np.exp(1j * grid.k2 * t))


def gradient(u):
    """Spectral gradient; exact for band-limited fields. Returns d Fields."""
    hat = u.grid.fft(u.values)
    return tuple(Field(u.grid, u.grid.ifft(hat * ikj)) for ikj in u.grid.ik)


def gradient_values(grid, values):
    hat = grid.fft(values)
    return [grid.ifft(hat * ikj) for ikj in grid.ik]


def momentum(u):
    """Conserved momentum M(u) = ||u||_{L2}."""
    return norm(u, "l2")


def hamiltonian(u, lam, sigma):
    """H(u) = 1/2 int |grad u|^2 - lam/(2 sigma + 2) int |u|^(2 sigma + 2)."""
    if sigma < 0.5:
        raise ValueError("sigma must be >= 1/2")
    return float(hamiltonian_values(u.grid, u.values, lam, sigma))


def hamiltonian_values(grid, values, lam, sigma):
    hat = grid.fft(values)
    kin = 0.0
    for ikj in grid.ik:
        dj = grid.ifft(hat * ikj)
        kin = kin + (dj.real**2 + dj.imag**2).sum(axis=grid.axes)
    pot = (np.abs(values) ** (2.0 * sigma + 2.0)).sum(axis=grid.axes)
    return grid.dV * (0.5 * kin - lam / (2.0 * sigma + 2.0) * pot)


def admissible_rate(p, d):
    """Strichartz rate r(p) of the admissible pair, 2/r(p) = d(1/2 - 1/p).

    r(2) is +inf. Raises if p lies outside the admissible range for d:
    p in [2, 2d/(d-2)) for d > 2, [2, inf) for d = 2, [2, inf] for d = 1.
    """
    p = float(p)
    if p < 2:
        raise ValueError(f"p={p} below the admissible range (p >= 2)")
    if d == 1:
        pass  # any p in [2, inf] admissible
    elif d == 2:
        if math.isinf(p):
            raise ValueError("p=inf is not admissible for d=2")
    else:
        if p >= 2 * d / (d - 2):
            raise ValueError(f"p={p} outside [2, {2 * d / (d - 2)}) for d={d}")
    if p == 2:
        return math.inf
    if math.isinf(p):
        return 2.0 / (d * 0.5)
    return 2.0 / (d * (0.5 - 1.0 / p))


# ----------------------------------------------------------------------------
# initial profiles
# ----------------------------------------------------------------------------

def _centered(grid, center):
    if center is None:
        center = (grid.L / 2.0,) * grid.d
    return [xj - cj for xj, cj in zip(grid.x, center)]


def soliton(grid, center=None):
    """sqrt(2) sech(x - c): stationary profile of the d=1 cubic focusing flow."""
    y = _centered(grid, center)
    r = np.sqrt(np.broadcast_to(sum(yj**2 for yj in y), grid.shape))
    return Field(grid, (np.sqrt(2.0) / np.cosh(r)).astype(complex))


def gaussian(grid, amplitude=1.0, width=1.0, center=None):
    """A exp(-|x-c|^2 / (2 w^2)) bump."""
    y = _centered(grid, center)
    r2 = np.broadcast_to(sum(yj**2 for yj in y), grid.shape)
    return Field(grid, (amplitude * np.exp(-r2 / (2.0 * width**2))).astype(complex))


def plane_wave(grid, m=1):
    """exp(i k_m . x) with integer mode index m (same along every axis)."""
    phase = sum(2.0 * np.pi * m / grid.L * xj for xj in grid.x)
    return Field(grid, np.exp(1j * np.broadcast_to(phase, grid.shape)))


# ----------------------------------------------------------------------------
# snapshot format: <path>.bin raw little-endian float64 interleaved re,im
#                  <path>.json sidecar with the grid metadata
# ----------------------------------------------------------------------------

def save_field(u, path, t=0.0):
    """Write a field as raw binary + JSON sidecar; returns (bin_path, json_path)."""
    path = Path(path)
    bin_path = path if path.suffix == ".bin" else path.with_suffix(".bin")
    json_path = bin_path.with_suffix(".json")
    data = np.ascontiguousarray(u.values.astype("<c16"))
    bin_path.write_bytes(data.tobytes())
    meta = {
        "d": u.grid.d,
        "n": u.grid.n,
        "L": u.grid.L,
        "t": float(t),
        "dtype": "f64",
        "layout": "row-major interleaved re,im",
        "endianness": "little",
    }
    json_path.write_text(json.dumps(meta, indent=1) + "\n")
    return bin_path, json_path


def load_field(path, grid=None):
    """Load a snapshot written by save_field; validates sizes bit-exactly.

    Returns (Field, t). If a grid is passed it must match the sidecar.
    """
    path = Path(path)
    bin_path = path if path.suffix == ".bin" else path.with_suffix(".bin")
    json_path = bin_path.with_suffix(".json")
    meta = json.loads(json_path.read_text())
    for key, want in (("dtype", "f64"), ("endianness", "little"),
                      ("layout", "row-major interleaved re,im")):
        if meta.get(key) != want:
            raise ValueError(f"snapshot {key}={meta.get(key)!r}, expected {want!r}")
    g = Grid(meta["d"], meta["n"], meta["L"])
    if grid is not None and grid != g:
        raise ValueError(f"snapshot grid {g} does not match expected {grid}")
    raw = bin_path.read_bytes()
    expect = 16 * g.size  # 2 float64 per point
    if len(raw) != expect:
        raise ValueError(f"snapshot payload is {len(raw)} bytes, expected {expect}")
    values = np.frombuffer(raw, dtype="<c16").reshape(g.shape).astype(np.complex128)
    return Field(g, values), float(meta.get("t", 0.0))
