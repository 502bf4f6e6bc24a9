"""Matrix-free Galerkin combined-field operator.

The operator ``(1/2) I + K - i eta V`` acting on piecewise-constant
densities is split into

* the mass term ``area_i / 2``,
* smooth single and double layers with the kernel ``G_delta chi`` applied
  through its truncated Fourier series (moments, FFTs, diagonal product,
  adjoint FFTs),
* a diagonal local correction carrying the exponentially localized
  remainder ``E``.

Dense oracles evaluate the same quantities by explicit summation and
are meant for tests on small meshes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import CURVATURE_MODES, PanelQuadrature, SurfaceMesh, estimate_curvature, panel_quadrature
from .kernel import (
    CutoffFunction,
    FilterSpec,
    GhatReport,
    KernelSplit,
    compute_Ghat,
    local_coefficients,
    make_filter,
)
from .nufft import (
    FourierCoeffs,
    JADiagonal,
    SpectralGrid,
    SurfaceTransform,
    kernel_grid,
    legendre_table,
    normal_derivative_coeffs,
    spherical_bessel_table,
)

logger = logging.getLogger(__name__)

ORACLE_MAX_PANELS = 2000
ORACLE_MAX_N = 16
CACHE_FORMAT = "helmsplit-ghat-v1"


class CacheMismatch(ValueError):
    """Cached kernel coefficients were built for different parameters."""


@dataclass(frozen=True)
class OperatorConfig:
    """Physical and discretization parameters of one operator."""

    kappa: float
    eta: float
    delta: float
    N: int
    p: int = 4
    q: int = 5
    filter_kind: str = "power"
    curvature_mode: str = "quadric"
    quad_order: int = 6
    cube_quad_order: int = 5
    cutoff_d: float = 0.1
    cache_dir: str | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 <= self.p <= 8:
            raise ValueError("p must lie in [0, 8]")
        if self.curvature_mode not in CURVATURE_MODES:
            raise ValueError(f"curvature_mode must be one of {CURVATURE_MODES}")

    def cache_header(self) -> dict:
        return {
            "format": CACHE_FORMAT,
            "kappa": float(self.kappa),
            "delta": float(self.delta),
            "filter": self.filter_kind,
            "q": int(self.q),
            "N": int(self.N),
            "p": int(self.p),
            "d": float(self.cutoff_d),
            "cube_quad_order": int(self.cube_quad_order),
        }


# --------------------------------------------------------------------------
# Kernel coefficient cache
# --------------------------------------------------------------------------
def ghat_cache_path(cache_dir, header: dict) -> Path:
    key = hashlib.sha256(json.dumps(header, sort_keys=True).encode()).hexdigest()[:16]
    return Path(cache_dir) / f"ghat_{key}.npz"


def save_ghat(path, header: dict, ghat: FourierCoeffs) -> None:
    """Header (JSON) plus the ``(2N+1)^3`` values in lexicographic ``k`` order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, header=json.dumps(header, sort_keys=True), values=ghat.values.reshape(-1))
    tmp.replace(path)


def load_ghat(path, header: dict) -> FourierCoeffs:
    with np.load(path) as data:
        stored = json.loads(str(data["header"]))
        if stored != header:
            raise CacheMismatch(f"cache header mismatch in {path}: {stored} != {header}")
        vals = np.array(data["values"])
    N = header["N"]
    return FourierCoeffs(N, vals.reshape((2 * N + 1,) * 3))


# --------------------------------------------------------------------------
# Assembled operator
# --------------------------------------------------------------------------
@dataclass
class AssembledOperator:
    mesh: SurfaceMesh
    cfg: OperatorConfig
    split: KernelSplit
    cutoff: CutoffFunction
    grid: SpectralGrid
    quad: PanelQuadrature
    transform: SurfaceTransform
    ghat: FourierCoeffs
    phi0: complex
    psi0: complex
    mass: np.ndarray
    setup_time_s: float = 0.0
    ghat_from_cache: bool = False
    timings: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.mesh.n_panels

    @property
    def local_diagonal(self) -> np.ndarray:
        """``sqrt(delta) (curv_i Psi0 - i eta Phi0) area_i``."""
        c = self.mesh.curvature
        return self.split.sqrt_delta * (c * self.psi0 - 1j * self.cfg.eta * self.phi0) * self.mesh.areas

    def mem_bytes(self, krylov_vectors: int = 0) -> int:
        """Accounting estimate of the major allocations."""
        N, n_alpha = self.grid.N, self.transform.n_alpha
        ghat = self.ghat.values.nbytes
        moments = 4 * len(self.transform.cells) * n_alpha * 16
        tables = self.transform.P.nbytes + self.transform.t.nbytes
        fft_work = 4 * (2 * N) ** 3 * 16 + 2 * (2 * N + 1) ** 3 * 16
        basis = krylov_vectors * self.n * 16
        return int(ghat + moments + tables + fft_work + basis)


def _check_in_box(mesh: SurfaceMesh, d: float) -> None:
    lo, hi = mesh.bounding_box()
    if np.any(lo < -1e-12) or np.any(hi > 1.0 - d + 1e-12):
        raise ValueError(f"mesh must be scaled into [0, {1 - d}]^3 before assembly")


def assemble(mesh: SurfaceMesh, cfg: OperatorConfig) -> AssembledOperator:
    """Build all operator components for ``mesh`` (already scaled)."""
    t0 = time.perf_counter()
    _check_in_box(mesh, cfg.cutoff_d)
    flt = make_filter(cfg.filter_kind, cfg.q)
    split = KernelSplit(cfg.kappa, cfg.delta, flt)
    cutoff = CutoffFunction(cfg.cutoff_d)
    if cfg.curvature_mode == "analytic" or cfg.curvature_mode == "zero" or not np.any(mesh.curvature):
        mesh = estimate_curvature(mesh, cfg.curvature_mode)

    timings = {}
    t = time.perf_counter()
    header = cfg.cache_header()
    ghat, cached = None, False
    if cfg.cache_dir is not None:
        path = ghat_cache_path(cfg.cache_dir, header)
        if path.exists():
            ghat = load_ghat(path, header)
            cached = True
            logger.info("loaded kernel coefficients from %s", path)
    if ghat is None:
        report = GhatReport()
        ghat = compute_Ghat(split, cutoff, kernel_grid(cfg.N), cfg.p, cfg.cube_quad_order, report=report)
        logger.info(
            "kernel coefficients: N=%d, %d kernel points, %d refined cubes",
            cfg.N, report.n_points, report.n_refined_cells,
        )
        if cfg.cache_dir is not None:
            save_ghat(ghat_cache_path(cfg.cache_dir, header), header, ghat)
    timings["ghat_s"] = time.perf_counter() - t

    t = time.perf_counter()
    grid = SpectralGrid(cfg.N)
    quad = panel_quadrature(mesh, cfg.quad_order)
    transform = SurfaceTransform(grid, quad, cfg.p, normals=mesh.normals)
    timings["transform_s"] = time.perf_counter() - t
    phi0, psi0 = local_coefficients(split)
    op = AssembledOperator(
        mesh=mesh,
        cfg=cfg,
        split=split,
        cutoff=cutoff,
        grid=grid,
        quad=quad,
        transform=transform,
        ghat=ghat,
        phi0=phi0,
        psi0=psi0,
        mass=0.5 * mesh.areas,
        ghat_from_cache=cached,
        timings=timings,
    )
    op.setup_time_s = time.perf_counter() - t0
    return op


def _check_density(op: AssembledOperator, g) -> np.ndarray:
    g = np.asarray(g, dtype=complex)
    if g.shape != (op.n,):
        raise ValueError(f"density must have length {op.n}")
    return g


def _single_coeffs(op: AssembledOperator, g: np.ndarray) -> FourierCoeffs:
    return op.transform.forward(op.transform.moments(g))


def _double_coeffs(op: AssembledOperator, g: np.ndarray) -> FourierCoeffs:
    parts = [op.transform.forward(op.transform.moments(g, component=j)) for j in range(3)]
    return normal_derivative_coeffs(op.grid.N, parts)


def _apply_kernel(op: AssembledOperator, coeffs: FourierCoeffs) -> np.ndarray:
    return op.transform.adjoint(FourierCoeffs(op.grid.N, op.ghat.values * coeffs.values))


def apply_smooth_single(op: AssembledOperator, g) -> np.ndarray:
    """Galerkin image of the smooth single layer."""
    return _apply_kernel(op, _single_coeffs(op, _check_density(op, g)))


def apply_smooth_double(op: AssembledOperator, g) -> np.ndarray:
    """Galerkin image of the smooth double layer."""
    return _apply_kernel(op, _double_coeffs(op, _check_density(op, g)))


def apply_local(op: AssembledOperator, g) -> np.ndarray:
    return op.local_diagonal * _check_density(op, g)


def apply_combined(op: AssembledOperator, g) -> np.ndarray:
    """``(1/2) M g + (K - i eta V) g`` with one adjoint transform for both layers."""
    g = _check_density(op, g)
    both = op.transform.forward_combined(g, op.cfg.eta)
    return op.mass * g + _apply_kernel(op, both) + apply_local(op, g)


def rhs_plane_wave(mesh: SurfaceMesh, kappa: float, direction, quad: PanelQuadrature | None = None) -> np.ndarray:
    """``b_i = -int phi_i exp(i kappa d.y) dS``."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("incident direction must be a unit vector")
    quad = quad if quad is not None else panel_quadrature(mesh, 6)
    phase = np.exp(1j * kappa * (quad.points @ d))
    return -np.sum(quad.weights * phase, axis=1)


# --------------------------------------------------------------------------
# Dense oracles
# --------------------------------------------------------------------------
def _panel_sum_matrix(quad: PanelQuadrature) -> sp.csr_matrix:
    n_pts = quad.n_panels * quad.per_panel
    return sp.csr_matrix(
        (quad.flat_weights, (quad.panel_of_point, np.arange(n_pts))), shape=(quad.n_panels, n_pts)
    )


def dense_oracle_GN(op: AssembledOperator, mesh: SurfaceMesh | None = None, layer: str = "single",
                    max_mode: int | None = None) -> np.ndarray:
    """Dense Galerkin matrix of the truncated-expansion kernel by explicit mode sums.

    Every mode ``k`` with ``|k|_inf <= max_mode`` (default ``N``) contributes
    ``Ghat_k a_i(k) b_j(k)`` where ``b_j`` is the Jacobi-Anger expanded
    panel integral of ``exp(-i pi k.y)`` (times ``-i pi k.n_j`` for the
    double layer) and ``a_i`` the expanded integral of ``exp(i pi k.x)``.
    """
    mesh = mesh if mesh is not None else op.mesh
    if mesh.n_panels > ORACLE_MAX_PANELS or op.grid.N > ORACLE_MAX_N:
        raise ValueError("dense oracle size guard exceeded")
    if layer not in ("single", "double"):
        raise ValueError("layer must be 'single' or 'double'")
    N, p = op.grid.N, op.cfg.p
    kmax = N if max_mode is None else int(max_mode)
    quad = op.quad
    grid = op.grid
    l, t = grid.locate(quad.flat_points)
    S = _panel_sum_matrix(quad)
    normals = mesh.normals[quad.panel_of_point]
    ja = JADiagonal(N, p)
    ks = np.arange(-kmax, kmax + 1)
    xi = np.pi * ks / (2 * N)
    jb = spherical_bessel_table(p, xi)  # (p+1, nk)
    pl = legendre_table(p, t)  # (p+1, nq, 3)
    # per axis: exp(-i pi k x_l) j_a(pi k H) P_a(t), shape (nq, p+1, nk)
    axis_tab = [
        np.exp(-1j * np.pi * np.outer(l[:, d] / N, ks))[:, None, :] * pl[:, :, d].T[:, :, None] * jb[None, :, :]
        for d in range(3)
    ]
    pref_f = np.array([ja.prefactor(a) for a in ja.alphas])
    pref_a = np.array([ja.prefactor(a, adjoint=True) for a in ja.alphas])
    nk = len(ks)
    nq = len(t)
    # sum over (a2, a3) once per a1; the k1 loop then combines p+1 slabs
    wf = np.zeros((p + 1, nq, nk, nk), dtype=complex)
    wa = np.zeros((p + 1, nq, nk, nk), dtype=complex)
    for a, pf, pa in zip(ja.alphas, pref_f, pref_a):
        term = axis_tab[1][:, a[1], :, None] * axis_tab[2][:, a[2], None, :]
        wf[a[0]] += pf * term
        wa[a[0]] += pa * np.conj(term)
    out = np.zeros((mesh.n_panels, mesh.n_panels), dtype=complex)
    for i1, k1 in enumerate(ks):
        c1 = axis_tab[0][:, :, i1]  # (nq, p+1)
        fwd = np.einsum("qa,aqyz->qyz", c1, wf)
        adj = np.einsum("qa,aqyz->qyz", np.conj(c1), wa)
        fwd = fwd.reshape(len(t), -1)
        adj = adj.reshape(len(t), -1)
        if layer == "double":
            kk = np.stack(np.meshgrid([k1], ks, ks, indexing="ij"), axis=-1).reshape(-1, 3)
            fwd = fwd * (-1j * np.pi * (normals @ kk.T))
        g = op.ghat.values[k1 + N, N - kmax : N + kmax + 1, N - kmax : N + kmax + 1].reshape(-1)
        A = S @ adj
        B = S @ fwd
        out += (A * g[None, :]) @ B.T
    return out


def dense_oracle_Gdelta(op: AssembledOperator, mesh: SurfaceMesh | None = None, quad_order: int | None = None,
                        layer: str = "single", cutoff: CutoffFunction | None = None) -> np.ndarray:
    """Dense Galerkin matrix of ``G_delta chi`` by point-pair panel quadrature."""
    mesh = mesh if mesh is not None else op.mesh
    if mesh.n_panels > ORACLE_MAX_PANELS:
        raise ValueError("dense oracle size guard exceeded")
    if layer not in ("single", "double"):
        raise ValueError("layer must be 'single' or 'double'")
    cutoff = cutoff if cutoff is not None else op.cutoff
    quad = op.quad if quad_order is None else panel_quadrature(mesh, quad_order)
    pts = quad.flat_points
    S = _panel_sum_matrix(quad)
    normals = mesh.normals[quad.panel_of_point]
    out = np.zeros((mesh.n_panels, mesh.n_panels), dtype=complex)
    chunk = max(1, 4_000_000 // len(pts))
    for start in range(0, len(pts), chunk):
        x = pts[start : start + chunk]
        r = x[:, None, :] - pts[None, :, :]
        rho = np.linalg.norm(r, axis=-1)
        chi = cutoff(r)
        if layer == "single":
            K = op.split.G_delta_radial(rho) * chi
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                cos = np.where(rho > 0, np.einsum("xyd,yd->xy", r, normals) / rho, 0.0)
            K = -op.split.G_delta_radial_derivative(rho) * cos * chi
        rows = S[:, start : start + chunk]
        out += rows @ (S @ K.T).T
    return out


def sampled_norm_gap(A: np.ndarray, B: np.ndarray, n_samples: int = 10, seed: int = 0) -> float:
    """``max_x |(A - B) x| / |B x|`` over random complex ``x``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        x = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
        worst = max(worst, np.linalg.norm((A - B) @ x) / np.linalg.norm(B @ x))
    return worst
