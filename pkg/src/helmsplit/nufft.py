"""Moment-based non-equispaced FFT between surface densities and Fourier modes.

Space is tiled by cubes ``C_l`` of side ``1/N`` centred at ``x_l = l/N``. A
plane wave restricted to a cube is expanded in tensor Legendre polynomials
(Jacobi-Anger), so

    g_hat(k) = sum_{|a|<=p} K_a(k) * DFT_{2N}[m^a](k),
    K_a(k)   = (-i)^{|a|} (2a+1) j_a(pi k H),     H = 1/(2N),

where ``m^a_l`` are Legendre moments of the density on cube ``l``. The
Galerkin evaluation of a Fourier series is the (Hermitian) adjoint map.
Each transform costs one FFT per multi-index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft
import scipy.sparse as sp

MAX_GRID_N = 512
MAX_BESSEL_ORDER = 64
MAX_BESSEL_ARG = 1.0e4
DEFAULT_EXPANSION_ORDER = 4


class _FFTCounter:
    """Counts 3D FFT invocations (cost audit)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


fft_counter = _FFTCounter()
fft_workers = 1


# --------------------------------------------------------------------------
# Special functions
# --------------------------------------------------------------------------
def legendre_table(p: int, t: np.ndarray) -> np.ndarray:
    """``P_0..P_p`` at ``t`` by the three-term recurrence; shape (p+1, *t.shape)."""
    t = np.asarray(t, dtype=float)
    out = np.empty((p + 1,) + t.shape)
    out[0] = 1.0
    if p >= 1:
        out[1] = t
    for n in range(1, p):
        out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    return out


def _bessel_series(nmax: int, x: np.ndarray) -> np.ndarray:
    out = np.empty((nmax + 1,) + x.shape)
    y = -0.5 * x * x
    lead = np.ones_like(x)
    for n in range(nmax + 1):
        if n > 0:
            lead = lead * x / (2 * n + 1)
        term = lead.copy()
        total = lead.copy()
        for k in range(1, 40):
            term = term * y / (k * (2 * n + 2 * k + 1))
            total += term
            if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
                break
        out[n] = total
    return out


def _bessel_miller(nmax: int, x: np.ndarray) -> np.ndarray:
    xm = float(np.max(x))
    start = int(max(nmax, xm) + 20 + 1.5 * xm ** (1.0 / 3.0) + np.sqrt(40.0 * max(nmax, 1)))
    out = np.zeros((nmax + 1,) + x.shape)
    f_next = np.zeros_like(x)
    f = np.full_like(x, 1e-280)
    for n in range(start, 0, -1):
        # j_{n-1} = (2n+1)/x j_n - j_{n+1}
        f_prev = (2 * n + 1) / x * f - f_next
        f_next, f = f, f_prev
        if n - 1 <= nmax:
            out[n - 1] = f
        big = np.abs(f) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            f = f * scale
            f_next = f_next * scale
            out *= scale
    j0 = np.sin(x) / x
    j1 = np.sin(x) / (x * x) - np.cos(x) / x
    f0 = out[0]
    f1 = f_next if nmax == 0 else out[1]
    use0 = np.abs(j0) >= np.abs(j1)
    norm = np.where(use0, j0 / np.where(use0, f0, 1.0), j1 / np.where(use0, 1.0, f1))
    return out * norm


def _bessel_upward(nmax: int, x: np.ndarray) -> np.ndarray:
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = np.sin(x) / x
    if nmax >= 1:
        out[1] = np.sin(x) / (x * x) - np.cos(x) / x
    for n in range(1, nmax):
        out[n + 1] = (2 * n + 1) / x * out[n] - out[n - 1]
    return out


def spherical_bessel_table(nmax: int, x, max_order: int = MAX_BESSEL_ORDER) -> np.ndarray:
    """``j_0..j_nmax`` at ``x``; shape (nmax+1, *x.shape).

    Ascending series for ``|x| <= 1``, upward recurrence where every order
    is below ``|x|`` (stable there), normalised downward (Miller)
    recurrence otherwise. ``max_order`` relaxes the order guard for
    partial-wave sums.
    """
    if not 0 <= nmax <= max_order:
        raise ValueError(f"order must lie in [0, {max_order}]")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > MAX_BESSEL_ARG):
        raise ValueError(f"|x| must not exceed {MAX_BESSEL_ARG:g}")
    ax = np.abs(x)
    out = np.empty((nmax + 1,) + x.shape)
    small = ax <= 1.0
    if np.any(small):
        out[:, small] = _bessel_series(nmax, ax[small])
    up = ax > max(nmax, 1)
    mid = ~small & ~up
    if np.any(up):
        out[:, up] = _bessel_upward(nmax, ax[up])
    if np.any(mid):
        out[:, mid] = _bessel_miller(nmax, ax[mid])
    odd = np.arange(nmax + 1) % 2 == 1
    if np.any(x < 0):
        out[odd] *= np.where(x < 0, -1.0, 1.0)
    return out


def spherical_bessel(nu: int, x):
    """Spherical Bessel function of the first kind ``j_nu(x)``."""
    out = spherical_bessel_table(nu, x)[nu]
    return float(out) if np.ndim(out) == 0 else out


def spherical_neumann_table(nmax: int, x) -> np.ndarray:
    """``y_0..y_nmax`` by upward recurrence (stable for the second kind)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = -np.cos(x) / x
    if nmax >= 1:
        out[1] = -np.cos(x) / (x * x) - np.sin(x) / x
    for n in range(1, nmax):
        out[n + 1] = (2 * n + 1) / x * out[n] - out[n - 1]
    return out


# --------------------------------------------------------------------------
# Multi-indices and the grid
# --------------------------------------------------------------------------
def multi_indices(p: int) -> np.ndarray:
    """All ``(a1, a2, a3)`` with ``a1 + a2 + a3 <= p``, graded order."""
    out = [
        (a1, a2, n - a1 - a2)
        for n in range(p + 1)
        for a1 in range(n, -1, -1)
        for a2 in range(n - a1, -1, -1)
    ]
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def n_multi_indices(p: int) -> int:
    return (p + 1) * (p + 2) * (p + 3) // 6


@dataclass(frozen=True)
class SpectralGrid:
    """Cube partition with centres ``l/N``, ``l_min <= l_j <= l_max``.

    Fourier modes are ``k in Z^3`` with ``|k|_inf <= N``; DFTs have length
    ``2N`` per axis and the bins for ``k = -N`` and ``k = N`` coincide.
    """

    N: int
    l_min: int = 0
    l_max: int | None = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.N > MAX_GRID_N:
            raise ValueError(f"N={self.N} exceeds the memory guard {MAX_GRID_N}")
        if self.l_max is None:
            object.__setattr__(self, "l_max", self.N)
        if self.l_max - self.l_min > 2 * self.N:
            raise ValueError("cube index range wider than the DFT period")

    @property
    def H(self) -> float:
        return 0.5 / self.N

    @property
    def M(self) -> int:
        """DFT length per axis."""
        return 2 * self.N

    @property
    def n_modes(self) -> int:
        return (2 * self.N + 1) ** 3

    @cached_property
    def modes_1d(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1)

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cube index and local coordinates ``t = (y - x_l)/H`` of points.

        Points on a shared face go to the cube with the larger index.
        """
        points = np.asarray(points, dtype=float)
        l = np.floor(points * self.N + 0.5).astype(np.int64)
        if np.any(l < self.l_min) or np.any(l > self.l_max):
            raise ValueError("point outside the grid domain")
        t = (points - l / self.N) / self.H
        return l, t

    def bin_of(self, l: np.ndarray) -> np.ndarray:
        """DFT bin (flattened C order) of cube index triples."""
        w = np.mod(l, self.M)
        return (w[..., 0] * self.M + w[..., 1]) * self.M + w[..., 2]


def kernel_grid(N: int) -> SpectralGrid:
    """Grid covering ``[-1, 1]^3`` (centres ``-1 .. 1``)."""
    return SpectralGrid(N, -N, N)


@dataclass
class FourierCoeffs:
    """Coefficients on ``|k|_inf <= N``; ``values[k1+N, k2+N, k3+N]``."""

    N: int
    values: np.ndarray

    def __post_init__(self):
        m = 2 * self.N + 1
        if self.values.shape != (m, m, m):
            raise ValueError(f"expected shape {(m, m, m)}, got {self.values.shape}")

    def at(self, k) -> complex:
        k1, k2, k3 = k
        return complex(self.values[k1 + self.N, k2 + self.N, k3 + self.N])

    def reflected(self) -> np.ndarray:
        """Values at ``-k``."""
        return self.values[::-1, ::-1, ::-1]

    @staticmethod
    def mode_grid(N: int) -> np.ndarray:
        k = np.arange(-N, N + 1)
        return np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1)


def fourier_pairing(a: FourierCoeffs | np.ndarray, b: FourierCoeffs | np.ndarray) -> complex:
    """Bilinear pairing ``sum_k a_k b_{-k}`` (equals ``int f g`` for series)."""
    av = a.values if isinstance(a, FourierCoeffs) else a
    bv = b.values if isinstance(b, FourierCoeffs) else b
    return complex(np.sum(av * bv[::-1, ::-1, ::-1]))


# --------------------------------------------------------------------------
# DFT on the (2N)^3 lattice
# --------------------------------------------------------------------------
def dft3(values: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Unnormalised 3D DFT; ``inverse`` is the conjugate transform.

    A leading batch axis is allowed; each slice counts as one transform.
    """
    values = np.asarray(values)
    lattice = values.shape[-3:]
    if values.ndim not in (3, 4) or len(set(lattice)) != 1 or lattice[0] % 2:
        raise ValueError(f"expected a (2N)^3 array, got shape {values.shape}")
    fft_counter.count += 1 if values.ndim == 3 else values.shape[0]
    axes = (-3, -2, -1)
    if direction == "forward":
        return scipy.fft.fftn(values, axes=axes, workers=fft_workers)
    if direction == "inverse":
        return scipy.fft.ifftn(values, axes=axes, norm="forward", workers=fft_workers)
    raise ValueError("direction must be 'forward' or 'inverse'")


def extend_modes(x: np.ndarray, N: int) -> np.ndarray:
    """DFT array (2N)^3 -> values at ``k = -N..N`` (``+-N`` share a bin).

    Acts on the last three axes.
    """
    y = np.fft.fftshift(x, axes=(-3, -2, -1))
    pad = [(0, 0)] * (x.ndim - 3) + [(0, 1)] * 3
    return np.pad(y, pad, mode="wrap")


def dft3_box(box: np.ndarray, M: int) -> np.ndarray:
    """Forward DFT of an (M)^3 lattice whose non-zeros lie in the leading ``box`` corner.

    Skips the 1D transforms of all-zero lines; same result as
    :func:`dft3` on the zero-padded array.
    """
    fft_counter.count += 1 if box.ndim == 3 else box.shape[0]
    out = scipy.fft.fft(box, n=M, axis=-1, workers=fft_workers)
    out = scipy.fft.fft(out, n=M, axis=-2, workers=fft_workers)
    return scipy.fft.fft(out, n=M, axis=-3, workers=fft_workers)


def idft3_box(values: np.ndarray, n: int) -> np.ndarray:
    """Unnormalised inverse DFT restricted to the leading ``n^3`` output corner."""
    fft_counter.count += 1 if values.ndim == 3 else values.shape[0]
    out = scipy.fft.ifft(values, axis=-3, norm="forward", workers=fft_workers)[..., :n, :, :]
    out = scipy.fft.ifft(out, axis=-2, norm="forward", workers=fft_workers)[..., :, :n, :]
    return scipy.fft.ifft(out, axis=-1, norm="forward", workers=fft_workers)[..., :, :, :n]


def _wrap_extend(y: np.ndarray) -> np.ndarray:
    """Centred (2N)^3 array (index ``k+N``) -> (2N+1)^3 with ``k = N`` copied from ``k = -N``."""
    M = y.shape[-1]
    out = np.empty(y.shape[:-3] + (M + 1,) * 3, dtype=y.dtype)
    out[..., :M, :M, :M] = y
    out[..., M, :M, :M] = y[..., 0, :, :]
    out[..., :, M, :M] = out[..., :, 0, :M]
    out[..., :, :, M] = out[..., :, :, 0]
    return out


def _fold_centred(y: np.ndarray) -> np.ndarray:
    out = y[..., :-1, :-1, :-1].copy()
    out[..., 0, :, :] += y[..., -1, :-1, :-1]
    out[..., :, 0, :] += y[..., :-1, -1, :-1]
    out[..., :, :, 0] += y[..., :-1, :-1, -1]
    out[..., 0, 0, :] += y[..., -1, -1, :-1]
    out[..., 0, :, 0] += y[..., -1, :-1, -1]
    out[..., :, 0, 0] += y[..., :-1, -1, -1]
    out[..., 0, 0, 0] += y[..., -1, -1, -1]
    return out


def fold_modes(y: np.ndarray, N: int) -> np.ndarray:
    """Adjoint of :func:`extend_modes`: sum ``k = +-N`` into one bin."""
    return np.fft.ifftshift(_fold_centred(y), axes=(-3, -2, -1))


# --------------------------------------------------------------------------
# Jacobi-Anger factors
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class JADiagonal:
    """Separable factors ``(-i)^{|a|} (2a+1) j_a(pi k H)`` for ``|k|_inf <= N``."""

    N: int
    p: int

    @cached_property
    def alphas(self) -> np.ndarray:
        return multi_indices(self.p)

    @cached_property
    def bessel(self) -> np.ndarray:
        """``j_nu(pi k / (2N))``, shape (p+1, 2N+1)."""
        k = np.arange(-self.N, self.N + 1)
        return spherical_bessel_table(self.p, np.pi * k / (2 * self.N))

    def prefactor(self, alpha, adjoint: bool = False) -> complex:
        a = np.asarray(alpha)
        phase = (1j if adjoint else -1j) ** int(a.sum())
        return phase * float(np.prod(2 * a + 1))

    def real_factor(self, alpha) -> np.ndarray:
        """``prod_d j_{a_d}(pi k_d H)`` on the (2N+1)^3 grid."""
        a1, a2, a3 = (int(v) for v in alpha)
        j = self.bessel
        return (j[a1][:, None] * j[a2][None, :])[:, :, None] * j[a3][None, None, :]

    def factor(self, alpha, adjoint: bool = False) -> np.ndarray:
        """Full (2N+1)^3 diagonal for one multi-index."""
        a1, a2, a3 = (int(v) for v in alpha)
        j = self.bessel
        return self.prefactor(alpha, adjoint) * (
            j[a1][:, None, None] * j[a2][None, :, None] * j[a3][None, None, :]
        )

    def expansion(self, k: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Truncated expansion of ``exp(-i pi H k.t)``; k, t shape (..., 3)."""
        k = np.asarray(k, dtype=float)
        t = np.asarray(t, dtype=float)
        xi = np.pi * self.H_ * k
        jb = spherical_bessel_table(self.p, xi)  # (p+1, ..., 3)
        pl = legendre_table(self.p, t)
        total = np.zeros(np.broadcast_shapes(k.shape, t.shape)[:-1], dtype=complex)
        for a in self.alphas:
            term = self.prefactor(a)
            for d in range(3):
                term = term * jb[a[d], ..., d] * pl[a[d], ..., d]
            total = total + term
        return total

    @property
    def H_(self) -> float:
        return 0.5 / self.N


def ja_error_bound(k, N: int, p: int) -> float:
    """``(pi |k|_1 / (4N))^{p+1} / (p+1)!``: the classical truncation estimate.

    This is not a strict pointwise bound: near ``|t_j| = 1`` the first
    omitted term already exceeds it by up to ``(2p+2)!!/(2p+1)!!``. See
    :func:`ja_error_bound_taylor` for a bound that holds.
    """
    if p < 0:
        raise ValueError("p must be non-negative")
    k1 = float(np.sum(np.abs(np.asarray(k))))
    return (np.pi * k1 / (4.0 * N)) ** (p + 1) / math.factorial(p + 1)


def ja_error_bound_taylor(k, N: int, p: int) -> float:
    """``(pi |k|_1 / (2N))^{p+1} / (p+1)!``, the Taylor remainder at ``|x| <= pi H |k|_1``."""
    if p < 0:
        raise ValueError("p must be non-negative")
    k1 = float(np.sum(np.abs(np.asarray(k))))
    return (np.pi * k1 / (2.0 * N)) ** (p + 1) / math.factorial(p + 1)


# --------------------------------------------------------------------------
# Surface moments and transforms
# --------------------------------------------------------------------------
@dataclass
class MomentTensor:
    """Moments on occupied cubes: ``values[c, a]`` for cube ``cells[c]``."""

    N: int
    p: int
    cells: np.ndarray  # (n_occ, 3) cube indices
    values: np.ndarray  # (n_occ, n_alpha)

    def to_csv(self, path) -> None:
        alphas = multi_indices(self.p)
        with open(path, "w") as fh:
            fh.write("l1,l2,l3,a1,a2,a3,re,im\n")
            for c, l in enumerate(self.cells):
                for j, a in enumerate(alphas):
                    v = self.values[c, j]
                    fh.write(f"{l[0]},{l[1]},{l[2]},{a[0]},{a[1]},{a[2]},{v.real:.17g},{v.imag:.17g}\n")


class SurfaceTransform:
    """Precomputed binning of panel quadrature points into grid cubes.

    Holds the Legendre values ``P_a(t_q)`` per point so that moments, the
    forward transform and its adjoint only cost sparse sums plus FFTs.
    """

    def __init__(self, grid: SpectralGrid, quad, p: int, normals: np.ndarray | None = None):
        self.grid = grid
        self.p = p
        self.quad = quad
        self.ja = JADiagonal(grid.N, p)
        self.alphas = self.ja.alphas
        pts = quad.flat_points
        l, t = grid.locate(pts)
        self.t = t
        cells, point_cell = np.unique(l, axis=0, return_inverse=True)
        self.cells = cells
        self.point_cell = point_cell.ravel()
        self.cell_bins = grid.bin_of(cells)
        self._unique_bins = len(np.unique(self.cell_bins)) == len(cells)
        self._box = grid.l_min == 0
        nb = grid.l_max + 1
        self._box_n = nb
        self._box_bins = (cells[:, 0] * nb + cells[:, 1]) * nb + cells[:, 2] if self._box else None
        # (-1)^(l1+l2+l3) moves the DFT output to centred order
        self._sign = 1.0 - 2.0 * (cells.sum(axis=1) % 2)
        self.weights = quad.flat_weights
        self.point_panel = quad.panel_of_point
        n_pts = len(pts)
        pl = legendre_table(p, t)  # (p+1, npts, 3)
        a = self.alphas
        self.P = pl[a[:, 0], :, 0].T * pl[a[:, 1], :, 1].T * pl[a[:, 2], :, 2].T  # (npts, nalpha)
        self._cell_sum = sp.csr_matrix(
            (np.ones(n_pts), (self.point_cell, np.arange(n_pts))), shape=(len(cells), n_pts)
        )
        self._panel_sum = sp.csr_matrix(
            (self.weights, (self.point_panel, np.arange(n_pts))), shape=(quad.n_panels, n_pts)
        )
        self.normals = normals

    @property
    def n_alpha(self) -> int:
        return len(self.alphas)

    def moments(self, coeffs: np.ndarray, component: int | None = None) -> MomentTensor:
        """Legendre moments of the piecewise-constant density ``coeffs``.

        With ``component`` set, the density is weighted by that component
        of the panel normal.
        """
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (self.quad.n_panels,):
            raise ValueError("density length does not match panel count")
        if component is not None:
            coeffs = coeffs * self.normals[:, component]
        f = self.weights * coeffs[self.point_panel]
        vals = self._cell_sum @ (f[:, None] * self.P)
        return MomentTensor(self.grid.N, self.p, self.cells, np.asarray(vals))

    def _dense(self, columns: np.ndarray) -> np.ndarray:
        """Scatter cube values (n_cells, batch) onto the lattice (or its occupied corner)."""
        if self._box:
            nb = self._box_n
            out = np.zeros((columns.shape[1], nb**3), dtype=complex)
            out[:, self._box_bins] = columns.T
            return out.reshape(-1, nb, nb, nb)
        M = self.grid.M
        out = np.zeros((columns.shape[1], M**3), dtype=complex)
        if self._unique_bins:
            out[:, self.cell_bins] = columns.T
        else:
            for b in range(columns.shape[1]):
                np.add.at(out[b], self.cell_bins, columns[:, b])
        return out.reshape(-1, M, M, M)

    def _spectra(self, values: np.ndarray):
        """Yield ``(alpha index, extended DFTs)`` of moment fields; values (cells, batch, n_alpha)."""
        for j in range(self.n_alpha):
            dense = self._dense(values[:, :, j] * self._sign[:, None])
            x = dft3_box(dense, self.grid.M) if self._box else dft3(dense, "forward")
            yield j, _wrap_extend(x)

    def _inverse_at_cells(self, y: np.ndarray) -> np.ndarray:
        if self._box:
            return idft3_box(y, self._box_n).ravel()[self._box_bins] * self._sign
        return dft3(y, "inverse").ravel()[self.cell_bins] * self._sign

    def forward(self, mom: MomentTensor) -> FourierCoeffs:
        N = self.grid.N
        if mom.N != N or mom.p != self.p or mom.values.shape != (len(self.cells), self.n_alpha):
            raise ValueError("moment tensor does not match the transform")
        out = np.zeros((2 * N + 1,) * 3, dtype=complex)
        for j, x in self._spectra(mom.values[:, None, :]):
            a = self.alphas[j]
            out += self.ja.prefactor(a) * self.ja.real_factor(a) * x[0]
        return FourierCoeffs(N, out)

    def forward_combined(self, coeffs: np.ndarray, eta: float) -> FourierCoeffs:
        """Transform of ``d/dn_y`` minus ``i eta`` times the plain transform, sharing the JA factors."""
        N = self.grid.N
        coeffs = np.asarray(coeffs)
        if coeffs.shape != (self.quad.n_panels,):
            raise ValueError("density length does not match panel count")
        f = self.weights * coeffs[self.point_panel]
        nrm = self.normals[self.point_panel]
        F = np.concatenate([f[:, None], f[:, None] * nrm], axis=1)  # (npts, 4)
        vals = (self._cell_sum @ (F[:, :, None] * self.P[:, None, :]).reshape(len(f), -1))
        vals = np.asarray(vals).reshape(len(self.cells), 4, self.n_alpha)
        k = np.arange(-N, N + 1).astype(float)
        k1, k2, k3 = k[:, None, None], k[None, :, None], k[None, None, :]
        out = np.zeros((2 * N + 1,) * 3, dtype=complex)
        for j, x in self._spectra(vals):
            pref = self.ja.prefactor(self.alphas[j])
            t = k1 * x[1]
            t += k2 * x[2]
            t += k3 * x[3]
            t *= -1j * np.pi * pref
            t += (-1j * eta * pref) * x[0]
            t *= self.ja.real_factor(self.alphas[j])
            out += t
        return FourierCoeffs(N, out)

    def adjoint(self, coeffs: FourierCoeffs) -> np.ndarray:
        """Galerkin functionals ``int phi_i(x) sum_k d_k exp(i pi k.x) dx``."""
        N = self.grid.N
        if coeffs.N != N:
            raise ValueError("Fourier coefficients do not match the grid")
        vals = np.empty((len(self.cells), self.n_alpha), dtype=complex)
        for j, a in enumerate(self.alphas):
            y = _fold_centred(self.ja.prefactor(a, adjoint=True) * self.ja.real_factor(a) * coeffs.values)
            vals[:, j] = self._inverse_at_cells(y)
        per_point = np.einsum("qa,qa->q", self.P, vals[self.point_cell])
        return self._panel_sum @ per_point


def surface_moments(grid: SpectralGrid, quad, coeffs, p: int) -> MomentTensor:
    return SurfaceTransform(grid, quad, p).moments(coeffs)


def surface_moments_normal(grid: SpectralGrid, quad, coeffs, p: int, normals: np.ndarray):
    st = SurfaceTransform(grid, quad, p, normals=normals)
    return tuple(st.moments(coeffs, component=j) for j in range(3))


def nufft_forward(transform: SurfaceTransform, moments: MomentTensor) -> FourierCoeffs:
    return transform.forward(moments)


def nufft_adjoint(transform: SurfaceTransform, coeffs: FourierCoeffs) -> np.ndarray:
    return transform.adjoint(coeffs)


def normal_derivative_coeffs(N: int, parts) -> FourierCoeffs:
    """Combine normal-weighted transforms: ``-i pi k . (g_x, g_y, g_z)``."""
    k = np.arange(-N, N + 1).astype(float)
    vals = (
        k[:, None, None] * parts[0].values
        + k[None, :, None] * parts[1].values
        + k[None, None, :] * parts[2].values
    )
    return FourierCoeffs(N, -1j * np.pi * vals)
