"""Splitting of the Helmholtz kernel into a smooth and a local part.

A rational filter ``H`` with ``H(0) = 1`` multiplies the Fourier transform
of ``G(r) = exp(i kappa r) / (4 pi r)``. Writing ``H(z)/z`` in partial
fractions gives closed forms

    G_delta(r) = delta^{-1/2} g(r / sqrt(delta)),
    g(z)       = [exp(i kt z) + sum_t P_t(z) exp(i wt_t z)] / (4 pi z),
    E(z)       = -sum_t P_t(z) exp(i wt_t z) / (4 pi z),

with ``kt = sqrt(delta) kappa`` and ``wt_t = sqrt(kt^2 - w_t^2)``,
``Im wt_t > 0``, so that ``G = G_delta + delta^{-1/2} E(r / sqrt(delta))``.
For simple poles ``P_t`` is the constant residue ``d_t``; repeated poles
give polynomials of degree ``multiplicity - 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from .nufft import (
    FourierCoeffs,
    JADiagonal,
    SpectralGrid,
    dft3,
    extend_modes,
    fold_modes,
    legendre_table,
    multi_indices,
)

logger = logging.getLogger(__name__)

FILTER_KINDS = ("product", "power")
MAX_FILTER_ORDER = 12
TAYLOR_SWITCH = 1e-6
DERIVATIVE_TAYLOR_SWITCH = 1e-3
GHAT_MAX_N = 512


# --------------------------------------------------------------------------
# Filters
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class FilterSpec:
    """Rational filter ``H`` and the partial fractions of ``H(z)/z``.

    ``H(z)/z = 1/z + sum_k sum_m coeffs[k][m-1] / (z + poles[k])^m``; the
    pole at the origin has residue ``d_0 = 1`` because ``H(0) = 1``.
    """

    kind: str
    q: int
    poles: tuple  # w_k^2, distinct
    coeffs: tuple  # per pole: coefficients for multiplicities 1..m

    @property
    def multiplicities(self) -> tuple:
        return tuple(len(c) for c in self.coeffs)

    @property
    def residues(self) -> np.ndarray:
        """Simple-pole residues ``[d_0, d_1, ...]`` of ``H(z)/z``."""
        return np.array([1.0] + [float(c[0]) for c in self.coeffs])

    @property
    def min_pole_modulus(self) -> float:
        """``min_k |w_k|``."""
        return float(min(np.sqrt(abs(w2)) for w2 in self.poles))

    def H(self, z):
        z = np.asarray(z, dtype=complex)
        if self.kind == "product":
            out = np.ones_like(z)
            for k in range(1, self.q + 1):
                out = out * k / (k + z)
            return out
        return 1.0 / (1.0 + z) ** self.q

    def H_from_fractions(self, z):
        """``H`` rebuilt from the partial fractions (finite at ``z = 0``)."""
        z = np.asarray(z, dtype=complex)
        tail = np.zeros_like(z)
        for w2, cs in zip(self.poles, self.coeffs):
            for m, c in enumerate(cs, start=1):
                tail = tail + float(c) / (z + w2) ** m
        return 1.0 + z * tail

    def with_residue_sign_error(self) -> "FilterSpec":
        """Copy with the sign of the first pole's residue flipped (test hook)."""
        first = tuple(-c for c in self.coeffs[0])
        return replace(self, coeffs=(first,) + self.coeffs[1:])


def make_filter(kind: str, q: int) -> FilterSpec:
    """Filter families ``prod_k k/(k+z)`` and ``(1+z)^{-q}``.

    Residues are exact: ``d_k = (-1)^k binom(q, k)`` for the product filter;
    ``1/(z (1+z)^q) = 1/z - sum_{m=1}^q (1+z)^{-m}`` for the power filter.
    """
    if kind not in FILTER_KINDS:
        raise ValueError(f"filter kind must be one of {FILTER_KINDS}")
    if not 1 <= q <= MAX_FILTER_ORDER:
        raise ValueError(f"filter order must lie in [1, {MAX_FILTER_ORDER}]")
    if kind == "product":
        poles = tuple(float(k) for k in range(1, q + 1))
        coeffs = tuple((Fraction((-1) ** k * math.comb(q, k)),) for k in range(1, q + 1))
    else:
        poles = (1.0,)
        coeffs = (tuple(Fraction(-1) for _ in range(q)),)
    return FilterSpec(kind, q, poles, coeffs)


@lru_cache(maxsize=None)
def _confluent_table(m_max: int) -> tuple:
    """Exact ``gamma[m][j]`` with ``FT^{-1}[(s^2+a^2)^{-m}] = e^{-az}/(4 pi z) sum_j gamma a^{j-2m+2} z^j``."""
    table = [[Fraction(1)]]
    for m in range(1, m_max):
        prev = table[-1]
        nxt = [Fraction(0)] * (m + 1)
        for j, g in enumerate(prev):
            nxt[j + 1] += g / (2 * m)
            nxt[j] += (2 * m - 2 - j) * g / (2 * m)
        table.append(nxt)
    return tuple(tuple(row) for row in table)


# --------------------------------------------------------------------------
# Kernel split
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class KernelSplit:
    """Wavenumber, mollification parameter and filter."""

    kappa: float
    delta: float
    filter: FilterSpec

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if np.sqrt(self.delta) * self.kappa >= self.filter.min_pole_modulus:
            raise ValueError(
                f"sqrt(delta)*kappa = {np.sqrt(self.delta) * self.kappa:.4g} must be below "
                f"min |w_k| = {self.filter.min_pole_modulus:.4g}"
            )

    @property
    def sqrt_delta(self) -> float:
        return float(np.sqrt(self.delta))

    @property
    def kappa_t(self) -> float:
        return self.sqrt_delta * self.kappa

    @cached_property
    def rates(self) -> np.ndarray:
        """``wt_k = sqrt(kt^2 - w_k^2)`` with positive imaginary part."""
        w = np.sqrt(np.asarray(self.kappa_t**2 - np.asarray(self.filter.poles), dtype=complex))
        return np.where(w.imag < 0, -w, w)

    @cached_property
    def terms(self) -> tuple:
        """``(polynomial coefficients in z, ascending; rate)`` per pole."""
        gamma = _confluent_table(max(self.filter.multiplicities))
        out = []
        for rate, cs in zip(self.rates, self.filter.coeffs):
            a = -1j * rate
            poly = np.zeros(len(cs), dtype=complex)
            for m, c in enumerate(cs, start=1):
                for j, g in enumerate(gamma[m - 1]):
                    poly[j] += float(c) * float(g) * a ** (j - 2 * m + 2)
            out.append((poly, complex(rate)))
        return tuple(out)

    def taylor(self, order: int) -> np.ndarray:
        """Coefficients ``b_n`` of the numerator ``4 pi z g(z) = sum b_n z^n``."""
        n = np.arange(order + 1)
        fact = np.array([math.factorial(i) for i in n], dtype=float)
        b = (1j * self.kappa_t) ** n / fact
        for poly, rate in self.terms:
            for j, c in enumerate(poly):
                nn = n[j:]
                b[j:] += c * (1j * rate) ** (nn - j) / fact[nn - j]
        return b

    # -- evaluation in scaled distance z = r / sqrt(delta) ---------------
    def _numerator(self, z: np.ndarray) -> np.ndarray:
        out = np.exp(1j * self.kappa_t * z)
        for poly, rate in self.terms:
            out = out + np.polynomial.polynomial.polyval(z, poly) * np.exp(1j * rate * z)
        return out

    def _local_numerator(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(np.shape(z), dtype=complex)
        for poly, rate in self.terms:
            out = out + np.polynomial.polynomial.polyval(z, poly) * np.exp(1j * rate * z)
        return out

    def smooth_scaled(self, z) -> np.ndarray:
        """``g(z)``; removable singularity at 0 handled by a 4-term Taylor series."""
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape, dtype=complex)
        small = z < TAYLOR_SWITCH
        big = ~small
        if np.any(big):
            zb = z[big]
            out[big] = self._numerator(zb) / (4 * np.pi * zb)
        if np.any(small):
            b = self.taylor(4)
            out[small] = np.polynomial.polynomial.polyval(z[small], b[1:]) / (4 * np.pi)
        return out

    def smooth_scaled_derivative(self, z) -> np.ndarray:
        """``g'(z)``."""
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape, dtype=complex)
        small = z < DERIVATIVE_TAYLOR_SWITCH
        big = ~small
        if np.any(big):
            zb = z[big]
            num = self._numerator(zb)
            dnum = 1j * self.kappa_t * np.exp(1j * self.kappa_t * zb)
            for poly, rate in self.terms:
                e = np.exp(1j * rate * zb)
                P = np.polynomial.polynomial
                dnum = dnum + (P.polyval(zb, P.polyder(poly)) + 1j * rate * P.polyval(zb, poly)) * e
            out[big] = (dnum * zb - num) / (4 * np.pi * zb * zb)
        if np.any(small):
            b = self.taylor(10)
            n = np.arange(2, 11)
            deriv = (n - 1) * b[2:]
            out[small] = np.polynomial.polynomial.polyval(z[small], deriv) / (4 * np.pi)
        return out

    def G_delta_radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.smooth_scaled(r / self.sqrt_delta) / self.sqrt_delta

    def G_delta_radial_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.smooth_scaled_derivative(r / self.sqrt_delta) / self.delta

    def limit_at_origin(self) -> complex:
        """``G_delta(0) = (i kappa + (i/sqrt(delta)) sum_k d_k wt_k) / (4 pi)`` for simple poles."""
        return complex(self.taylor(1)[1] / (4 * np.pi * self.sqrt_delta))

    def E(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise ValueError("E is singular at z <= 0")
        return -self._local_numerator(z) / (4 * np.pi * z)

    def E_derivative(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        P = np.polynomial.polynomial
        num = np.zeros(z.shape, dtype=complex)
        dnum = np.zeros(z.shape, dtype=complex)
        for poly, rate in self.terms:
            e = np.exp(1j * rate * z)
            num = num + P.polyval(z, poly) * e
            dnum = dnum + (P.polyval(z, P.polyder(poly)) + 1j * rate * P.polyval(z, poly)) * e
        return -(dnum * z - num) / (4 * np.pi * z * z)

    @property
    def min_decay_rate(self) -> float:
        return float(np.min(self.rates.imag))


def eval_G(kappa: float, r) -> np.ndarray:
    """Free-space Helmholtz kernel ``exp(i kappa |r|) / (4 pi |r|)``."""
    rn = np.linalg.norm(np.asarray(r, dtype=float), axis=-1)
    if np.any(rn == 0):
        raise ValueError("G is singular at r = 0")
    out = np.exp(1j * kappa * rn) / (4 * np.pi * rn)
    return complex(out) if np.ndim(out) == 0 else out


def eval_G_delta(split: KernelSplit, r) -> np.ndarray:
    out = split.G_delta_radial(np.linalg.norm(np.asarray(r, dtype=float), axis=-1))
    return complex(out) if np.ndim(out) == 0 else out


def eval_E(split: KernelSplit, z) -> np.ndarray:
    out = split.E(z)
    return complex(out) if np.ndim(out) == 0 else out


def local_coefficients(split: KernelSplit) -> tuple[complex, complex]:
    """Leading coefficients of the local single and double layer.

    ``Phi0 = int_{R^2} E(|t|) d^2t = -(1/2) sum_t sum_j p_tj j! / a_t^{j+1}``
    with ``a_t = -i wt_t``; for simple poles this is ``-(i/2) sum_k d_k / wt_k``.
    The double-layer coefficient per unit mean curvature is
    ``pi int_0^inf E'(u) u^2 du = -Phi0`` (integration by parts).
    """
    phi0 = 0j
    for poly, rate in split.terms:
        a = -1j * rate
        for j, c in enumerate(poly):
            phi0 += -0.5 * c * math.factorial(j) / a ** (j + 1)
    return complex(phi0), complex(-phi0)


# --------------------------------------------------------------------------
# Cut-off
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class CutoffFunction:
    """``chi(r) = prod_j psi_edge(r_j)``; 1 on ``[-1+d, 1-d]^3``, 0 outside ``[-1, 1]^3``.

    The transition is the degree-7 polynomial with three vanishing
    derivatives at both ends, so ``chi`` is C^3.
    """

    d: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.d < 1.0:
            raise ValueError("cut-off shell width must lie in (0, 1)")

    @staticmethod
    def profile(s):
        s = np.asarray(s, dtype=float)
        return s**4 * (35.0 - 84.0 * s + 70.0 * s**2 - 20.0 * s**3)

    def edge(self, x) -> np.ndarray:
        ax = np.abs(np.asarray(x, dtype=float))
        s = np.clip((1.0 - ax) / self.d, 0.0, 1.0)
        return np.where(ax <= 1.0 - self.d, 1.0, np.where(ax >= 1.0, 0.0, self.profile(s)))

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return self.edge(r[..., 0]) * self.edge(r[..., 1]) * self.edge(r[..., 2])

    @property
    def breakpoints(self) -> tuple:
        b = 1.0 - self.d
        return (-1.0, -b, b, 1.0)


def eval_cutoff(c: CutoffFunction, r):
    out = c(r)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Fourier coefficients of the smooth kernel
# --------------------------------------------------------------------------
def _gauss_1d(lo: float, hi: float, n: int, cutoff: CutoffFunction):
    """Gauss rule on ``[lo, hi] ∩ [-1, 1]`` split at cut-off breakpoints; weights include the edge profile."""
    x, w = np.polynomial.legendre.leggauss(n)
    cuts = [lo] + [b for b in cutoff.breakpoints if lo < b < hi] + [hi]
    ys, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= -1.0 or a >= 1.0:
            continue
        y = 0.5 * (a + b) + 0.5 * (b - a) * x
        ys.append(y)
        ws.append(0.5 * (b - a) * w * cutoff.edge(y))
    if not ys:
        return np.empty(0), np.empty(0)
    return np.concatenate(ys), np.concatenate(ws)


def _needs_refinement(center: np.ndarray, h: float, scale: float, ratio: float) -> bool:
    dist = np.linalg.norm(np.maximum(np.abs(center) - h, 0.0))
    return 2.0 * h > ratio * max(dist, scale)


def _refined_box_points(center, h, n, cutoff, scale, ratio, depth=0, max_depth=12):
    """Adaptive octree quadrature for a box near the kernel peak."""
    if depth < max_depth and _needs_refinement(center, h, scale, ratio):
        pts, wts = [], []
        for sx in (-0.5, 0.5):
            for sy in (-0.5, 0.5):
                for sz in (-0.5, 0.5):
                    c = center + h * np.array([sx, sy, sz])
                    p, w = _refined_box_points(c, h / 2, n, cutoff, scale, ratio, depth + 1, max_depth)
                    pts.append(p)
                    wts.append(w)
        return np.concatenate(pts), np.concatenate(wts)
    rules = [_gauss_1d(c - h, c + h, n, cutoff) for c in center]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    wgrid = np.einsum("a,b,c->abc", *[r[1] for r in rules])
    return np.stack([g.ravel() for g in grids], axis=1), wgrid.ravel()


@dataclass
class GhatReport:
    """Bookkeeping from :func:`compute_Ghat`."""

    n_refined_cells: int = 0
    n_points: int = 0
    n_ffts: int = 0


def _octant_moments(split, cutoff, N, p, n, ratio, report):
    """Legendre moments of ``G_delta chi`` on cubes ``l in {0..N}^3``."""
    H = 0.5 / N
    pp = p + 1
    mom = np.zeros((pp, pp, pp, N + 1, N + 1, N + 1), dtype=complex)
    centers = np.arange(N + 1) / N
    rules = [_gauss_1d(c - H, c + H, n, cutoff) for c in centers]
    leg = [legendre_table(p, (r[0] - c) / H) * r[1] for r, c in zip(rules, centers)]
    sizes = np.array([len(r[0]) for r in rules])
    sd = split.sqrt_delta

    L = np.stack(np.meshgrid(*(np.arange(N + 1),) * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    near = np.array([_needs_refinement(centers[l], H, sd, ratio) for l in L])
    report.n_refined_cells = int(near.sum())

    far = L[~near & np.all(sizes[L] > 0, axis=1)]
    sig = sizes[far]
    for key in {tuple(s) for s in sig}:
        group = far[np.all(sig == key, axis=1)]
        for start in range(0, len(group), 2048):
            g = group[start : start + 2048]
            y1 = np.stack([rules[i][0] for i in g[:, 0]])
            y2 = np.stack([rules[i][0] for i in g[:, 1]])
            y3 = np.stack([rules[i][0] for i in g[:, 2]])
            r = np.sqrt(y1[:, :, None, None] ** 2 + y2[:, None, :, None] ** 2 + y3[:, None, None, :] ** 2)
            V = split.G_delta_radial(r)
            report.n_points += V.size
            L1 = np.stack([leg[i] for i in g[:, 0]])
            L2 = np.stack([leg[i] for i in g[:, 1]])
            L3 = np.stack([leg[i] for i in g[:, 2]])
            T = np.einsum("cabe,cze->cabz", V, L3)
            T = np.einsum("cabz,cyb->cayz", T, L2)
            T = np.einsum("cayz,cxa->cxyz", T, L1)
            mom[:, :, :, g[:, 0], g[:, 1], g[:, 2]] = np.moveaxis(T, 0, -1)

    for l in L[near]:
        c = centers[l]
        pts, w = _refined_box_points(c, H, n, cutoff, sd, ratio)
        if len(w) == 0:
            continue
        report.n_points += len(w)
        vals = split.G_delta_radial(np.linalg.norm(pts, axis=1)) * w
        t = (pts - c) / H
        P = legendre_table(p, t)  # (pp, npts, 3)
        mom[:, :, :, l[0], l[1], l[2]] = np.einsum("q,xq,yq,zq->xyz", vals, P[:, :, 0], P[:, :, 1], P[:, :, 2])
    return mom


def _unfold_octant(oct_a: np.ndarray, alpha) -> np.ndarray:
    """Extend octant moments to ``l in {-N..N}^3`` by even symmetry of the kernel."""
    out = oct_a
    for axis, a in enumerate(alpha):
        sign = -1.0 if a % 2 else 1.0
        neg = np.flip(np.take(out, np.arange(1, out.shape[axis]), axis=axis), axis=axis) * sign
        out = np.concatenate([neg, out], axis=axis)
    return out


def compute_Ghat(
    split: KernelSplit,
    cutoff: CutoffFunction,
    grid: SpectralGrid,
    p: int = 4,
    cube_quad_order: int = 5,
    refine_ratio: float = 0.5,
    report: GhatReport | None = None,
) -> FourierCoeffs:
    """Fourier coefficients ``(1/8) int exp(-i pi k.r) G_delta chi d^3r`` for ``|k|_inf <= N``.

    Cube moments are integrated by tensor Gauss-Legendre rules (split at
    the cut-off breakpoints); cubes close to the origin, where ``G_delta``
    varies on the scale ``sqrt(delta)``, are refined adaptively until each
    box is at most ``refine_ratio * max(dist, sqrt(delta))`` wide. The cube
    sum is one FFT per multi-index.
    """
    if cube_quad_order < 2:
        raise ValueError("cube quadrature order must be at least 2")
    N = grid.N
    if N > GHAT_MAX_N:
        raise ValueError("N exceeds the memory guard")
    if grid.l_min > -N or grid.l_max < N:
        raise ValueError("kernel grid must cover [-1, 1]^3")
    report = report if report is not None else GhatReport()
    mom = _octant_moments(split, cutoff, N, p, cube_quad_order, refine_ratio, report)
    ja = JADiagonal(N, p)
    out = np.zeros((2 * N + 1,) * 3, dtype=complex)
    for a in multi_indices(p):
        full = _unfold_octant(mom[a[0], a[1], a[2]], a)
        x = dft3(fold_modes(full, N), "forward")
        report.n_ffts += 1
        out += ja.factor(a) * extend_modes(x, N)
    return FourierCoeffs(N, out / 8.0)
