"""Parameter selection, GMRES, farfield evaluation and the Mie reference."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import PanelQuadrature, SurfaceMesh, panel_quadrature
from .kernel import make_filter
from .nufft import legendre_table, spherical_bessel_table, spherical_neumann_table

logger = logging.getLogger(__name__)

# sqrt(delta) * kappa per preset: delta = 1e-4 for the 6.25 wavelength sphere
# (lower) and the 3.13 wavelength sphere (higher) of diameter 0.9
PRESET_BETA = {
    "lower": 0.01 * 2 * np.pi * 6.25 / 0.9,
    "higher": 0.01 * 2 * np.pi * 3.13 / 0.9,
}
N_PER_INV_SQRT_DELTA = 0.16
MIE_MAX_KA = 200.0


@dataclass(frozen=True)
class SolveParams:
    delta: float
    N: int
    p: int = 4
    q: int = 5
    filter_kind: str = "power"
    eta: float = 1.0
    tol: float = 1e-6
    maxit: int = 200
    kappa: float = 0.0

    @property
    def kappa_t(self) -> float:
        return math.sqrt(self.delta) * self.kappa

    @property
    def lam(self) -> float:
        """Truncation diagnostic ``sqrt((1 + kt^2) / (delta N^2))``."""
        return math.sqrt((1.0 + self.kappa_t**2) / (self.delta * self.N**2))


def _next_pow2(x: float) -> int:
    return int(2 ** max(1, math.ceil(math.log2(x) - 1e-9)))


def select_parameters(kappa: float, preset: str = "lower", tol: float = 1e-6, maxit: int = 200) -> SolveParams:
    """``sqrt(delta) = beta/kappa``, ``N`` the next power of two above ``0.16/sqrt(delta)``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if preset not in PRESET_BETA:
        raise ValueError(f"preset must be one of {tuple(PRESET_BETA)}")
    sd = PRESET_BETA[preset] / kappa
    N = _next_pow2(N_PER_INV_SQRT_DELTA / sd)
    params = SolveParams(delta=sd * sd, N=N, eta=kappa / 2, tol=tol, maxit=maxit, kappa=kappa)
    if params.kappa_t >= make_filter(params.filter_kind, params.q).min_pole_modulus:
        raise ValueError("selected delta violates the pole-distance constraint")
    logger.info("selected delta=%.3e N=%d lambda=%.3f", params.delta, N, params.lam)
    return params


# --------------------------------------------------------------------------
# GMRES
# --------------------------------------------------------------------------
@dataclass
class SolveResult:
    density: np.ndarray
    iterations: int
    residuals: list
    converged: bool
    breakdown: bool = False
    time_per_iteration_s: float = 0.0
    total_time_s: float = 0.0
    setup_time_s: float = 0.0
    mem_bytes: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = dict(self.meta)
        out.update(
            iterations=self.iterations,
            residuals=[float(r) for r in self.residuals],
            converged=bool(self.converged),
            breakdown=bool(self.breakdown),
            time_per_iteration_s=self.time_per_iteration_s,
            setup_time_s=self.setup_time_s,
            total_time_s=self.total_time_s,
            mem_bytes=int(self.mem_bytes),
        )
        return out

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def gmres(apply: Callable[[np.ndarray], np.ndarray], b, tol: float = 1e-6, maxit: int = 200,
          x0=None) -> SolveResult:
    """Full GMRES: modified Gram-Schmidt with one reorthogonalization pass, no restart.

    ``residuals[j]`` is the relative residual after ``j`` iterations.
    """
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=complex)
    n = b.size
    x = np.zeros(n, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex).copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return SolveResult(np.zeros(n, dtype=complex), 0, [0.0], True)
    r = b - apply(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    m = min(maxit, n)
    V = np.zeros((m + 1, n), dtype=complex)
    Hs = np.zeros((m + 1, m), dtype=complex)
    cs = np.zeros(m, dtype=complex)
    sn = np.zeros(m, dtype=complex)
    e = np.zeros(m + 1, dtype=complex)
    e[0] = beta
    residuals = [float(beta / bnorm)]
    if residuals[0] <= tol:
        return SolveResult(x, 0, residuals, True)
    V[0] = r / beta
    k = 0
    breakdown = False
    t_iter = time.perf_counter()
    for j in range(m):
        w = apply(V[j])
        for _ in range(2):
            for i in range(j + 1):
                h = np.vdot(V[i], w)
                Hs[i, j] += h
                w = w - h * V[i]
        hn = np.linalg.norm(w)
        Hs[j + 1, j] = hn
        for i in range(j):
            a, c = Hs[i, j], Hs[i + 1, j]
            Hs[i, j] = np.conj(cs[i]) * a + np.conj(sn[i]) * c
            Hs[i + 1, j] = -sn[i] * a + cs[i] * c
        a, c = Hs[j, j], Hs[j + 1, j]
        rho = math.hypot(abs(a), abs(c))
        if rho == 0:
            breakdown = True
            k = j
            break
        cs[j], sn[j] = a / rho, c / rho
        Hs[j, j] = rho
        Hs[j + 1, j] = 0.0
        e[j + 1] = -sn[j] * e[j]
        e[j] = np.conj(cs[j]) * e[j]
        k = j + 1
        residuals.append(float(abs(e[j + 1]) / bnorm))
        logger.debug("gmres it %d residual %.3e", k, residuals[-1])
        if residuals[-1] <= tol:
            break
        if hn <= 1e-14 * beta:
            breakdown = hn == 0
            break
        V[j + 1] = w / hn
    iter_time = time.perf_counter() - t_iter
    if k > 0:
        y = np.linalg.solve(np.triu(Hs[:k, :k]), e[:k]) if not breakdown else np.linalg.lstsq(
            np.triu(Hs[:k, :k]), e[:k], rcond=None)[0]
        x = x + V[:k].T @ y
    converged = bool(residuals[-1] <= tol)
    if not converged:
        logger.warning("gmres stopped after %d iterations at residual %.3e", k, residuals[-1])
    return SolveResult(
        density=x,
        iterations=k,
        residuals=residuals,
        converged=converged,
        breakdown=breakdown,
        time_per_iteration_s=iter_time / max(k, 1),
        total_time_s=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# Farfield
# --------------------------------------------------------------------------
@dataclass
class FarfieldPattern:
    """Amplitudes on a direction set with quadrature weights on the sphere."""

    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    @property
    def directions(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)], axis=-1)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("theta,phi,weight,re,im\n")
            for t, p, w, v in zip(self.theta, self.phi, self.weights, self.values):
                fh.write(f"{t:.17g},{p:.17g},{w:.17g},{v.real:.17g},{v.imag:.17g}\n")


def direction_grid(n_theta: int = 32, n_phi: int = 64) -> FarfieldPattern:
    """Gauss-Legendre in ``cos(theta)`` times uniform azimuth; weights sum to ``4 pi``."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    T, P = np.meshgrid(np.arccos(x), phi, indexing="ij")
    W = np.outer(w, np.full(n_phi, 2 * np.pi / n_phi))
    return FarfieldPattern(T.ravel(), P.ravel(), W.ravel(), np.zeros(T.size, dtype=complex))


def _with_values(dirs: FarfieldPattern, values) -> FarfieldPattern:
    return FarfieldPattern(dirs.theta, dirs.phi, dirs.weights, np.asarray(values, dtype=complex))


def farfield(mesh: SurfaceMesh, density, kappa: float, eta: float, directions: FarfieldPattern,
             quad: PanelQuadrature | None = None) -> FarfieldPattern:
    """``alpha(x) = i int exp(-i kappa x.y) (eta + kappa x.n_y) sigma(y) dS_y``."""
    density = np.asarray(density, dtype=complex)
    quad = quad if quad is not None else panel_quadrature(mesh, 6)
    xh = directions.directions
    pts = quad.flat_points
    ws = quad.flat_weights * density[quad.panel_of_point]
    nrm = mesh.normals[quad.panel_of_point]
    out = np.empty(len(xh), dtype=complex)
    for start in range(0, len(xh), 256):
        d = xh[start : start + 256]
        ph = np.exp(-1j * kappa * (d @ pts.T))
        fac = eta + kappa * (d @ nrm.T)
        out[start : start + 256] = 1j * (ph * fac) @ ws
    return _with_values(directions, out)


def _mie_coefficients(ka: float, nmax: int) -> np.ndarray:
    j = spherical_bessel_table(nmax, np.array([ka]), max_order=nmax)[:, 0]
    y = spherical_neumann_table(nmax, np.array([ka]))[:, 0]
    return j / (j + 1j * y)


def mie_nmax(ka: float) -> int:
    return int(math.ceil(ka + 10 * ka ** (1 / 3) + 10))


def _mie_sum(kappa, radius, cos_theta, nmax):
    coef = _mie_coefficients(kappa * radius, nmax)
    P = legendre_table(nmax, cos_theta)
    n = np.arange(nmax + 1)
    return -(4j * np.pi / kappa) * np.tensordot((2 * n + 1) * coef, P, axes=1)


def mie_farfield(kappa: float, radius: float, directions: FarfieldPattern, incident=(0.0, 0.0, 1.0),
                 center=(0.0, 0.0, 0.0)) -> FarfieldPattern:
    """Sound-soft sphere farfield in the same normalization as :func:`farfield`.

    ``alpha = -(4 pi i / kappa) sum (2n+1) j_n(ka)/h_n(ka) P_n(cos theta)``,
    shifted to ``center`` by ``exp(i kappa (d - x).c)``.
    """
    ka = kappa * radius
    if not 0 < ka <= MIE_MAX_KA:
        raise ValueError(f"kappa*radius must lie in (0, {MIE_MAX_KA}]")
    d = np.asarray(incident, dtype=float)
    d = d / np.linalg.norm(d)
    xh = directions.directions
    ct = np.clip(xh @ d, -1.0, 1.0)
    nmax = mie_nmax(ka)
    a = _mie_sum(kappa, radius, ct, nmax)
    b = _mie_sum(kappa, radius, ct, nmax + 10)
    if np.linalg.norm(a - b) > 1e-10 * np.linalg.norm(b):
        raise RuntimeError("Mie series did not converge")
    shift = np.exp(1j * kappa * ((d[None, :] - xh) @ np.asarray(center, dtype=float)))
    return _with_values(directions, b * shift)


def farfield_error(a: FarfieldPattern, ref: FarfieldPattern) -> float:
    """Relative weighted L2 error, normalized by ``ref``."""
    if a.values.shape != ref.values.shape or not (
        np.allclose(a.theta, ref.theta) and np.allclose(a.phi, ref.phi) and np.allclose(a.weights, ref.weights)
    ):
        raise ValueError("direction sets differ")
    num = np.sum(ref.weights * np.abs(a.values - ref.values) ** 2)
    den = np.sum(ref.weights * np.abs(ref.values) ** 2)
    return float(np.sqrt(num / den))
