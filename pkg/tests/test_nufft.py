import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import spherical_jn

from helmsplit.geometry import PanelQuadrature, SurfaceMesh, make_icosphere, panel_quadrature, scale_to_unit_box
from helmsplit.nufft import (
    FourierCoeffs,
    JADiagonal,
    MomentTensor,
    SpectralGrid,
    SurfaceTransform,
    dft3,
    fft_counter,
    fourier_pairing,
    ja_error_bound,
    ja_error_bound_taylor,
    legendre_table,
    multi_indices,
    n_multi_indices,
    nufft_adjoint,
    nufft_forward,
    spherical_bessel,
    spherical_bessel_table,
    spherical_neumann_table,
    surface_moments,
    surface_moments_normal,
)

from conftest import plate_mesh


@pytest.fixture(scope="module")
def sphere_quad():
    mesh, _ = scale_to_unit_box(make_icosphere(2))
    return mesh, panel_quadrature(mesh, 6)


def _naive_dft(x):
    M = x.shape[0]
    idx = np.arange(M)
    F = np.exp(-2j * np.pi * np.outer(idx, idx) / M)
    out = np.zeros_like(x, dtype=complex)
    for a in range(M):
        for b in range(M):
            for c in range(M):
                out[a, b, c] = np.sum(x * F[a][:, None, None] * F[b][None, :, None] * F[c][None, None, :])
    return out


# ---------------------------------------------------------------- dft3
def test_dft3_delta():
    x = np.zeros((8, 8, 8))
    x[0, 0, 0] = 1.0
    np.testing.assert_array_equal(dft3(x), np.ones((8, 8, 8)))


def test_dft3_inversion(rng):
    x = rng.standard_normal((8, 8, 8)) + 1j * rng.standard_normal((8, 8, 8))
    back = dft3(dft3(x), "inverse")
    assert np.max(np.abs(back - 8**3 * x)) <= 1e-12 * 8**3 * np.max(np.abs(x))


@pytest.mark.parametrize("M", [4, 8])
def test_dft3_naive(rng, M):
    x = rng.standard_normal((M,) * 3) + 1j * rng.standard_normal((M,) * 3)
    ref = _naive_dft(x)
    assert np.max(np.abs(dft3(x) - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_dft3_shape_checked():
    with pytest.raises(ValueError):
        dft3(np.zeros((4, 4, 6)))
    with pytest.raises(ValueError):
        dft3(np.zeros((4, 4, 4)), "sideways")


# ---------------------------------------------------------------- special functions
def _j_exact(n, x: Fraction, terms=80) -> float:
    """Ascending series in exact rational arithmetic."""
    total = Fraction(0)
    dfact = Fraction(1)
    for m in range(1, 2 * n + 2, 2):
        dfact *= m
    term = x**n / dfact
    y = -x * x / 2
    for k in range(terms):
        total += term
        term = term * y / ((k + 1) * (2 * n + 2 * k + 3))
    return float(total)


def test_bessel_limits_and_closed_form():
    assert spherical_bessel(0, 0.0) == 1.0
    for nu in (1, 4, 64):
        assert spherical_bessel(nu, 0.0) == 0.0
    assert spherical_bessel(0, 1.7) == pytest.approx(math.sin(1.7) / 1.7, rel=1e-15)


def test_bessel_j3_high_precision():
    assert spherical_bessel(3, 2.0) == pytest.approx(_j_exact(3, Fraction(2)), rel=1e-14)


def test_bessel_against_scipy():
    x = np.concatenate([np.geomspace(1e-6, 1e4, 2000), -np.geomspace(1e-3, 50, 50)])
    table = spherical_bessel_table(64, x)
    for n in range(65):
        ref = spherical_jn(n, x)
        # oscillatory region: compare against the 1/x envelope
        scale = np.where(np.abs(x) > n, 1 / np.abs(x), np.abs(ref))
        err = np.abs(table[n] - ref)
        assert np.all((err <= 1e-12 * scale) | (err <= 1e-300))


def test_bessel_guards():
    with pytest.raises(ValueError):
        spherical_bessel_table(65, 1.0)
    with pytest.raises(ValueError):
        spherical_bessel(2, 2e4)


def test_neumann_wronskian():
    x = np.geomspace(0.5, 200, 300)
    nmax = 60
    j = spherical_bessel_table(nmax + 1, x, max_order=nmax + 1)
    y = spherical_neumann_table(nmax + 1, x)
    n = np.arange(nmax + 1)[:, None]
    # j_n' = j_{n-1} - (n+1)/x j_n, and the same for y_n; use j_{-1} = cos/x, y_{-1} = sin/x
    jm = np.vstack([np.cos(x) / x, j[:-2]])
    ym = np.vstack([np.sin(x) / x, y[:-2]])
    dj = jm - (n + 1) / x * j[:-1]
    dy = ym - (n + 1) / x * y[:-1]
    w = j[:-1] * dy - dj * y[:-1]
    # only orders with |y_n| finite are used by the partial-wave sums
    ok = np.abs(y[:-1]) < 1e200
    assert np.max(np.abs(w * x * x - 1)[ok]) <= 1e-10


def test_legendre_table():
    t = np.linspace(-1, 1, 7)
    P = legendre_table(4, t)
    np.testing.assert_allclose(P[2], (3 * t**2 - 1) / 2, atol=1e-15)
    np.testing.assert_allclose(P[4], (35 * t**4 - 30 * t**2 + 3) / 8, atol=1e-15)


@pytest.mark.parametrize("p", range(0, 9))
def test_multi_index_count(p):
    a = multi_indices(p)
    assert len(a) == n_multi_indices(p) == (p + 1) * (p + 2) * (p + 3) // 6
    assert np.all(a.sum(axis=1) <= p) and len({tuple(r) for r in a}) == len(a)


# ---------------------------------------------------------------- grid and JA factors
def test_grid_geometry():
    g = SpectralGrid(8)
    assert g.H * 2 * g.N == 1.0
    pts = np.random.default_rng(0).uniform(0, 0.9, (500, 3))
    l, t = g.locate(pts)
    assert np.all(np.abs(t) <= 1 + 1e-12)
    np.testing.assert_allclose(l / g.N + t * g.H, pts, atol=1e-15)
    with pytest.raises(ValueError):
        g.locate(np.array([[1.2, 0.1, 0.1]]))


def test_grid_face_tie_goes_up():
    g = SpectralGrid(4)
    l, t = g.locate(np.array([[0.125, 0.0, 0.0]]))  # face between cubes 0 and 1
    assert l[0, 0] == 1 and t[0, 0] == -1.0


def test_ja_factors():
    ja = JADiagonal(8, 4)
    f0 = ja.factor((0, 0, 0))
    assert f0[8, 8, 8] == 1.0
    for a in ja.alphas:
        np.testing.assert_allclose(ja.factor(a, adjoint=True), np.conj(ja.factor(a)), atol=0)


def test_ja_bound_values():
    assert ja_error_bound((0, 0, 0), 8, 4) == 0.0
    assert ja_error_bound((3, -2, 3), 8, 4) == pytest.approx((np.pi / 4) ** 5 / 120, rel=1e-14)
    assert (np.pi / 4) ** 5 / 120 == pytest.approx(2.49e-3, abs=1e-5)
    assert ja_error_bound_taylor((3, -2, 3), 8, 4) == pytest.approx(32 * ja_error_bound((3, -2, 3), 8, 4))
    with pytest.raises(ValueError):
        ja_error_bound((1, 0, 0), 8, -1)


@settings(max_examples=300, deadline=None)
@given(
    st.sampled_from([4, 8, 16]),
    st.lists(st.integers(-16, 16), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
)
def test_ja_taylor_bound_holds(N, k, t):
    k = np.clip(k, -N, N)
    ja = JADiagonal(N, 4)
    exact = np.exp(-1j * np.pi * ja.H_ * np.dot(k, t))
    err = abs(exact - ja.expansion(np.array(k), np.array(t)))
    assert err <= ja_error_bound_taylor(k, N, 4) + 1e-14


# ---------------------------------------------------------------- moments
def _single_point_quad(y, w=1.0):
    return PanelQuadrature(np.array([[y]], dtype=float), np.array([[w]]), 1)


def test_moment_flat_panel_area():
    mesh = plate_mesh(1, lo=0.24, hi=0.26, z=0.25)  # inside cube l = (2, 2, 2) for N = 8
    q = panel_quadrature(mesh, 6)
    mom = surface_moments(SpectralGrid(8), q, np.ones(2), 4)
    assert len(mom.cells) == 1 and tuple(mom.cells[0]) == (2, 2, 2)
    assert mom.values[0, 0] == pytest.approx(mesh.total_area, rel=1e-14)
    assert mom.values.shape[1] == 35


def test_moment_odd_alpha_vanishes_on_centred_square():
    mesh = plate_mesh(2, lo=0.24, hi=0.26, z=0.25)
    q = panel_quadrature(mesh, 6)
    st_ = SurfaceTransform(SpectralGrid(8), q, 4)
    mom = st_.moments(np.ones(mesh.n_panels))
    j = [tuple(a) for a in st_.alphas].index((1, 0, 0))
    assert abs(mom.values[0, j]) <= 1e-14 * mom.values[0, 0].real


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_moments_quadrature_convergence(seed):
    # one random panel inside cube (3, 3, 3) of the N = 8 grid; P_a(t) has
    # degree <= 4 on the flat panel, which the order-6 rule integrates exactly
    rng = np.random.default_rng(seed)
    corners = 3 / 8 + rng.uniform(-1 / 16, 1 / 16, (3, 3)) * 0.99
    mesh = SurfaceMesh(corners, np.array([[0, 1, 2]]))
    g = np.array([rng.standard_normal() + 1j * rng.standard_normal()])
    for p in (2, 4):
        a = surface_moments(SpectralGrid(8), panel_quadrature(mesh, 6), g, p)
        b = surface_moments(SpectralGrid(8), panel_quadrature(mesh, 12), g, p)
        assert np.max(np.abs(a.values - b.values)) <= 1e-10 * np.max(np.abs(b.values))


def test_moment_point_outside_grid():
    with pytest.raises(ValueError):
        surface_moments(SpectralGrid(4), _single_point_quad([1.3, 0.2, 0.2]), np.ones(1), 2)


def test_normal_moments_flat_panel():
    mesh = plate_mesh(2, lo=0.3, hi=0.6, z=0.45)
    q = panel_quadrature(mesh, 6)
    mx, my, mz = surface_moments_normal(SpectralGrid(8), q, np.ones(mesh.n_panels), 4, mesh.normals)
    assert np.all(mx.values == 0) and np.all(my.values == 0)
    plain = surface_moments(SpectralGrid(8), q, np.ones(mesh.n_panels), 4)
    np.testing.assert_allclose(mz.values, plain.values, rtol=1e-15)


def test_normal_derivative_relation(sphere_quad, rng):
    mesh, q = sphere_quad
    st_ = SurfaceTransform(SpectralGrid(8), q, 4, normals=mesh.normals)
    g = rng.standard_normal(mesh.n_panels) + 1j * rng.standard_normal(mesh.n_panels)
    parts = [st_.forward(st_.moments(g, component=j)) for j in range(3)]
    plain = st_.forward(st_.moments(g))
    combined = st_.forward_combined(g, eta=0.7)
    k = FourierCoeffs.mode_grid(8).astype(float)
    expected = -1j * np.pi * sum(k[..., j] * parts[j].values for j in range(3)) - 0.7j * plain.values
    assert np.max(np.abs(combined.values - expected)) <= 1e-12 * np.max(np.abs(expected))
    assert abs(combined.at((0, 0, 0)) + 0.7j * plain.at((0, 0, 0))) <= 1e-14 * abs(plain.at((0, 0, 0)))


def test_moment_csv(tmp_path, sphere_quad):
    _, q = sphere_quad
    mom = surface_moments(SpectralGrid(4), q, np.ones(q.n_panels), 1)
    mom.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "l1,l2,l3,a1,a2,a3,re,im"
    assert len(lines) == 1 + len(mom.cells) * 4


# ---------------------------------------------------------------- transforms
def test_forward_zero(sphere_quad):
    _, q = sphere_quad
    st_ = SurfaceTransform(SpectralGrid(8), q, 4)
    assert np.all(st_.forward(st_.moments(np.zeros(q.n_panels))).values == 0)


def test_forward_point_mass_at_cube_centre():
    N, p = 8, 4
    y = np.array([3, 5, 2]) / N
    st_ = SurfaceTransform(SpectralGrid(N), _single_point_quad(y), p)
    mom = st_.moments(np.ones(1))
    P0 = legendre_table(p, np.zeros(1))[:, 0]
    expected = np.array([P0[a[0]] * P0[a[1]] * P0[a[2]] for a in st_.alphas])
    np.testing.assert_allclose(mom.values[0], expected, atol=1e-15)
    got = nufft_forward(st_, mom)
    k = FourierCoeffs.mode_grid(N)
    exact = np.exp(-1j * np.pi * (k @ y))
    bound = np.array([[[ja_error_bound(kk, N, p) for kk in row] for row in plane] for plane in k])
    assert np.all(np.abs(got.values - exact) <= bound + 1e-14)


def test_forward_matches_direct_sum(sphere_quad, rng):
    mesh, q = sphere_quad
    N, p = 8, 4
    g = rng.standard_normal(mesh.n_panels) + 1j * rng.standard_normal(mesh.n_panels)
    st_ = SurfaceTransform(SpectralGrid(N), q, p)
    got = st_.forward(st_.moments(g)).values.reshape(-1)
    k = FourierCoeffs.mode_grid(N).reshape(-1, 3)
    direct = np.exp(-1j * np.pi * k @ q.flat_points.T) @ (q.flat_weights * g[q.panel_of_point])
    l1 = np.sum(q.flat_weights * np.abs(g[q.panel_of_point]))
    bound = np.array([ja_error_bound(kk, N, p) for kk in k]) * l1
    assert np.all(np.abs(got - direct) <= bound + 1e-13)


def test_forward_error_decays_factorially(sphere_quad, rng):
    # error / ((pi |k|_1 / 4N)^{p+1} / (p+1)!) stays bounded as p grows
    mesh, q = sphere_quad
    N = 8
    g = rng.standard_normal(mesh.n_panels) + 1j * rng.standard_normal(mesh.n_panels)
    k = FourierCoeffs.mode_grid(N).reshape(-1, 3)
    k1 = np.abs(k).sum(axis=1)
    sel = (k1 > 0) & (k1 <= N)
    direct = np.exp(-1j * np.pi * k[sel] @ q.flat_points.T) @ (q.flat_weights * g[q.panel_of_point])
    l1 = np.sum(q.flat_weights * np.abs(g[q.panel_of_point]))
    for p in range(0, 8):
        st_ = SurfaceTransform(SpectralGrid(N), q, p)
        err = np.abs(st_.forward(st_.moments(g)).values.reshape(-1)[sel] - direct)
        scale = (np.pi * k1[sel] / (4 * N)) ** (p + 1) / math.factorial(p + 1) * l1
        assert np.max(err / scale) <= 1.0


@pytest.mark.parametrize("N", [4, 8, 16])
@pytest.mark.parametrize("p", [2, 4, 6])
def test_adjointness(sphere_quad, N, p):
    mesh, q = sphere_quad
    rng = np.random.default_rng(N * 10 + p)
    st_ = SurfaceTransform(SpectralGrid(N), q, p)
    g = rng.standard_normal(mesh.n_panels) + 1j * rng.standard_normal(mesh.n_panels)
    d = FourierCoeffs(N, rng.standard_normal((2 * N + 1,) * 3) + 1j * rng.standard_normal((2 * N + 1,) * 3))
    lhs = fourier_pairing(st_.forward(st_.moments(g)), d)
    rhs = np.sum(g * nufft_adjoint(st_, d))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_adjoint_constant_mode(sphere_quad):
    mesh, q = sphere_quad
    N = 8
    st_ = SurfaceTransform(SpectralGrid(N), q, 4)
    vals = np.zeros((2 * N + 1,) * 3, dtype=complex)
    vals[N, N, N] = 2.5 - 1j
    np.testing.assert_allclose(st_.adjoint(FourierCoeffs(N, vals)), (2.5 - 1j) * mesh.areas, rtol=1e-13)


def test_adjoint_matches_direct_galerkin(sphere_quad, rng):
    mesh, q = sphere_quad
    N, p = 8, 4
    st_ = SurfaceTransform(SpectralGrid(N), q, p)
    shape = (2 * N + 1,) * 3
    d = FourierCoeffs(N, rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    k = FourierCoeffs.mode_grid(N).reshape(-1, 3)
    field = np.exp(1j * np.pi * q.flat_points @ k.T) @ d.values.reshape(-1)
    direct = np.bincount(q.panel_of_point, q.flat_weights * field.real) + 1j * np.bincount(
        q.panel_of_point, q.flat_weights * field.imag
    )
    tol = np.sum(np.abs(d.values.reshape(-1)) * np.array([ja_error_bound(kk, N, p) for kk in k]))
    assert np.all(np.abs(st_.adjoint(d) - direct) <= tol * mesh.areas + 1e-13)


@pytest.mark.parametrize("p", [0, 2, 4])
def test_fft_count(sphere_quad, p):
    mesh, q = sphere_quad
    st_ = SurfaceTransform(SpectralGrid(8), q, p)
    g = np.ones(mesh.n_panels)
    mom = st_.moments(g)
    fft_counter.reset()
    st_.forward(mom)
    assert fft_counter.count == n_multi_indices(p)
    fft_counter.reset()
    st_.adjoint(FourierCoeffs(8, np.ones((17, 17, 17), dtype=complex)))
    assert fft_counter.count == n_multi_indices(p)
    assert n_multi_indices(4) == 35


def test_transform_shape_checks(sphere_quad):
    mesh, q = sphere_quad
    st_ = SurfaceTransform(SpectralGrid(8), q, 4)
    with pytest.raises(ValueError):
        st_.moments(np.ones(3))
    with pytest.raises(ValueError):
        st_.forward(MomentTensor(8, 3, st_.cells, np.zeros((len(st_.cells), 20))))
    with pytest.raises(ValueError):
        st_.adjoint(FourierCoeffs(4, np.zeros((9, 9, 9))))
