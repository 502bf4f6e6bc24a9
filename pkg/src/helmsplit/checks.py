"""Property checks bundled by the ``kernel-check`` command."""

from __future__ import annotations

import logging

import numpy as np

from .geometry import make_icosphere, panel_quadrature, scale_to_unit_box
from .kernel import FILTER_KINDS, KernelSplit, make_filter
from .nufft import (
    FourierCoeffs,
    JADiagonal,
    SpectralGrid,
    SurfaceTransform,
    fourier_pairing,
    ja_error_bound,
    ja_error_bound_taylor,
)

logger = logging.getLogger(__name__)


def split_identity_error(n_samples: int = 1000, seed: int = 0, inject: str | None = None) -> float:
    """Max relative ``|G - G_delta - delta^{-1/2} E(r/sqrt(delta))| / |G|`` over random samples."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    combos = [(kind, q) for kind in FILTER_KINDS for q in (1, 3, 5)]
    for i in range(n_samples):
        kind, q = combos[i % len(combos)]
        flt = make_filter(kind, q)
        if inject == "residue-sign":
            flt = flt.with_residue_sign_error()
        sd = 10 ** rng.uniform(-3, -1)
        kappa = rng.uniform(0, 0.95) * flt.min_pole_modulus / sd
        split = KernelSplit(kappa, sd * sd, flt)
        r = sd * 10 ** rng.uniform(-3, 1.5)
        G = np.exp(1j * kappa * r) / (4 * np.pi * r)
        approx = split.G_delta_radial(np.array([r]))[0] + split.E(np.array([r / sd]))[0] / sd
        worst = max(worst, abs(G - approx) / abs(G))
    return float(worst)


def residue_sum_error(q_max: int = 8, inject: str | None = None) -> float:
    worst = 0.0
    for kind in FILTER_KINDS:
        for q in range(1, q_max + 1):
            flt = make_filter(kind, q)
            if inject == "residue-sign":
                flt = flt.with_residue_sign_error()
            worst = max(worst, abs(flt.residues.sum()))
    return float(worst)


def adjointness_error(Ns=(4, 8, 16), ps=(2, 4, 6), seed: int = 0, subdivisions: int = 2) -> float:
    """Max relative mismatch of the bilinear pairing between forward and adjoint transforms."""
    rng = np.random.default_rng(seed)
    mesh, _ = scale_to_unit_box(make_icosphere(subdivisions))
    quad = panel_quadrature(mesh, 6)
    worst = 0.0
    for N in Ns:
        for p in ps:
            st = SurfaceTransform(SpectralGrid(N), quad, p)
            g = rng.standard_normal(mesh.n_panels) + 1j * rng.standard_normal(mesh.n_panels)
            d = FourierCoeffs(N, rng.standard_normal((2 * N + 1,) * 3) + 1j * rng.standard_normal((2 * N + 1,) * 3))
            lhs = fourier_pairing(st.forward(st.moments(g)), d)
            rhs = complex(np.sum(g * st.adjoint(d)))
            worst = max(worst, abs(lhs - rhs) / abs(lhs))
    return float(worst)


def ja_bound_ratio(n_samples: int = 10_000, Ns=(4, 8, 16), p: int = 4, seed: int = 0,
                   bound=ja_error_bound) -> float:
    """Max of measured truncation error over ``bound`` on random ``(k, t)``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    per = n_samples // len(Ns)
    for N in Ns:
        ja = JADiagonal(N, p)
        k = rng.integers(-N, N + 1, size=(per, 3))
        t = rng.uniform(-1, 1, size=(per, 3))
        exact = np.exp(-1j * np.pi * ja.H_ * np.sum(k * t, axis=-1))
        err = np.abs(exact - ja.expansion(k, t))
        b = np.array([bound(kk, N, p) for kk in k])
        nz = b > 0
        worst = max(worst, float(np.max(err[nz] / b[nz])))
        # k = 0: the expansion is exact up to rounding
        if np.any(err[~nz] > 1e-14):
            worst = np.inf
    return worst


def run_kernel_checks(inject: str | None = None) -> dict:
    """Measured value, limit and verdict for each property."""
    props = {}

    def record(name, measured, limit):
        props[name] = dict(measured=float(measured), limit=float(limit), passed=bool(measured <= limit))
        logger.info("%s: measured %.3e limit %.1e", name, measured, limit)

    record("split_identity", split_identity_error(inject=inject), 1e-12)
    record("residue_sum", residue_sum_error(inject=inject), 1e-12)
    record("nufft_adjointness", adjointness_error(), 1e-12)
    # ratios: a value <= 1 means the bound held at every sample
    record("ja_bound", ja_bound_ratio(), 1.0)
    record("ja_bound_taylor", ja_bound_ratio(bound=ja_error_bound_taylor), 1.0)
    return dict(passed=all(v["passed"] for v in props.values()), inject=inject, properties=props)
