from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmsplit.geometry import (
    MeshError,
    SurfaceMesh,
    estimate_curvature,
    load_mesh,
    make_icosphere,
    panel_quadrature,
    scale_to_unit_box,
    write_mesh,
)

from conftest import plate_mesh


def _write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_single_triangle(tmp_path):
    mesh = load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert mesh.n_panels == 1
    assert mesh.areas[0] == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(mesh.normals[0], [0, 0, 1], atol=1e-15)
    assert np.all(mesh.curvature == 0)


_TET_VERTS = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n"


@pytest.mark.parametrize("faces", ["f 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n", "f 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n"])
def test_tetrahedron_outward(tmp_path, faces):
    mesh = load_mesh(_write(tmp_path, _TET_VERTS + faces))
    assert mesh.n_panels == 4
    assert mesh.signed_volume() == pytest.approx(1 / 6, rel=1e-12)
    centre = mesh.vertices.mean(axis=0)
    assert np.all(np.einsum("ij,ij->i", mesh.centroids - centre, mesh.normals) > 0)
    np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-12)


def test_quad_face_rejected(tmp_path):
    p = _write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshError, match="non-triangle face at line 5"):
        load_mesh(p)


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n", "out-of-range vertex index at line 4"),
        ("v 0 0 0\nv 1 0 x\nv 0 1 0\nf 1 2 3\n", "parse error at line 2"),
        ("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 5 5 5\nf 1 2 3\n", "unreferenced"),
        ("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", "degenerate"),
    ],
)
def test_load_errors(tmp_path, text, pattern):
    with pytest.raises(MeshError, match=pattern):
        load_mesh(_write(tmp_path, text))


def test_missing_file_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nothere.obj"):
        load_mesh(tmp_path / "nothere.obj")


def test_write_read_roundtrip(tmp_path):
    mesh, _ = scale_to_unit_box(make_icosphere(2))
    write_mesh(tmp_path / "s.obj", mesh)
    back = load_mesh(tmp_path / "s.obj")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.panels, mesh.panels)


@pytest.mark.parametrize("s, n", [(0, 20), (1, 80), (4, 5120), (5, 20480)])
def test_icosphere_panel_counts(s, n):
    mesh = make_icosphere(s, radius=2.0, center=(1, -1, 0.5))
    assert mesh.n_panels == n
    r = np.linalg.norm(mesh.vertices - [1, -1, 0.5], axis=1)
    assert np.max(np.abs(r - 2.0)) <= 1e-12
    assert np.all(mesh.curvature == 0.5)
    assert mesh.is_closed() and mesh.signed_volume() > 0


def test_icosphere_guard():
    with pytest.raises(ValueError):
        make_icosphere(8)


def test_area_converges_at_second_order():
    errs = [abs(make_icosphere(s).total_area - 4 * np.pi) for s in (2, 3, 4)]
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


def test_divergence_theorem_volume():
    mesh = make_icosphere(4)
    assert mesh.signed_volume() == pytest.approx(4 * np.pi / 3, rel=5e-3)


def test_scale_unit_sphere():
    mesh, rec = scale_to_unit_box(make_icosphere(3), d=0.1)
    center, radius = mesh.sphere
    np.testing.assert_allclose(center, [0.45] * 3, atol=1e-14)
    assert radius == pytest.approx(0.45, abs=1e-14)
    assert mesh.vertices.min() >= -1e-15 and mesh.vertices.max() <= 0.9 + 1e-15
    np.testing.assert_allclose(mesh.curvature, 1 / 0.45, rtol=1e-13)
    np.testing.assert_allclose(rec.invert(mesh.vertices), make_icosphere(3).vertices, atol=1e-12)
    assert rec.to_scaled_wavenumber(1.0) == pytest.approx(1 / 0.45)


def test_scale_identity_when_fitting():
    mesh = plate_mesh(3, lo=0.0, hi=0.9, z=0.3)
    scaled, rec = scale_to_unit_box(mesh, d=0.1)
    assert rec.scale == 1.0
    np.testing.assert_array_equal(rec.translation, [0.0, 0.0, -0.3])
    np.testing.assert_allclose(scaled.vertices[:, :2], mesh.vertices[:, :2], atol=0)


def test_scale_rejects_bad_margin():
    with pytest.raises(ValueError):
        scale_to_unit_box(plate_mesh(1), d=0.6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(0.01, 100))
def test_scale_roundtrip_property(shift, radius):
    mesh = make_icosphere(1, radius=radius, center=shift)
    scaled, rec = scale_to_unit_box(mesh)
    np.testing.assert_allclose(rec.invert(scaled.vertices), mesh.vertices, atol=1e-12 * max(1, radius + 50))
    np.testing.assert_allclose(rec.apply(mesh.vertices), scaled.vertices, atol=1e-12)


def test_quadrature_order1_is_centroid():
    mesh = make_icosphere(1)
    q = panel_quadrature(mesh, 1)
    np.testing.assert_allclose(q.points[:, 0], mesh.centroids, atol=1e-15)
    np.testing.assert_allclose(q.weights[:, 0], mesh.areas, rtol=1e-15)


def test_quadrature_order3_linear_exact():
    tri = SurfaceMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    q = panel_quadrature(tri, 3)
    val = np.sum(q.weights[0] * (q.points[0, :, 0] + q.points[0, :, 1]))
    assert val == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("order, degree", [(1, 1), (3, 2), (6, 4), (12, 6)])
def test_quadrature_polynomial_degree(order, degree):
    tri = SurfaceMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
    q = panel_quadrature(tri, order)
    x, y = q.points[0, :, 0], q.points[0, :, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert np.sum(q.weights[0] * x**a * y**b) == pytest.approx(exact, rel=1e-11, abs=1e-15)


def test_quadrature_weights_and_planarity():
    mesh, _ = scale_to_unit_box(make_icosphere(3))
    for order in (1, 3, 6, 12):
        q = panel_quadrature(mesh, order)
        np.testing.assert_allclose(q.weights.sum(axis=1), mesh.areas, rtol=1e-12)
        assert q.weights.sum() == pytest.approx(mesh.total_area, rel=1e-12)
        off = np.einsum("nqd,nd->nq", q.points - mesh.corners[:, :1], mesh.normals)
        assert np.max(np.abs(off)) <= 1e-12
    with pytest.raises(ValueError):
        panel_quadrature(mesh, 5)


def test_curvature_sphere_fit():
    mesh = estimate_curvature(make_icosphere(4, radius=2.0), "quadric")
    assert mesh.curvature_fallbacks == 0
    np.testing.assert_allclose(mesh.curvature, 0.5, rtol=0.1)


def test_curvature_flat_plate():
    mesh = estimate_curvature(plate_mesh(8), "quadric")
    interior = mesh.curvature_fallbacks < mesh.n_panels
    assert interior
    assert np.max(np.abs(mesh.curvature)) <= 1e-8


def test_curvature_modes():
    sphere = make_icosphere(2, radius=4.0)
    assert np.all(estimate_curvature(sphere, "zero").curvature == 0.0)
    np.testing.assert_array_equal(estimate_curvature(sphere, "analytic").curvature, 0.25)
    with pytest.raises(ValueError):
        estimate_curvature(plate_mesh(2), "analytic")
    with pytest.raises(ValueError):
        estimate_curvature(sphere, "bogus")


def test_curvature_underdetermined_falls_back(tmp_path):
    mesh = load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    out = estimate_curvature(mesh)
    assert out.curvature_fallbacks == 1 and out.curvature[0] == 0.0
