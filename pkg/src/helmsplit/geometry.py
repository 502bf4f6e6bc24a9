"""Triangulated scatterer surfaces.

Piecewise-constant Galerkin elements only: every panel carries a centroid,
unit outward normal, area and a curvature scalar (mean curvature, positive
for convex surfaces with outward normals) used by the local double-layer
correction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAX_ICOSPHERE_SUBDIVISIONS = 7
DEFAULT_BOX_MARGIN = 0.1

CURVATURE_MODES = ("quadric", "zero", "analytic")


class MeshError(ValueError):
    """Raised for malformed mesh input."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangle mesh with per-panel geometric data.

    Attributes
    ----------
    vertices : ndarray, shape (nv, 3)
    panels : ndarray of int, shape (n, 3)
        Zero-based vertex indices, counter-clockwise seen from outside.
    curvature : ndarray, shape (n,)
        Mean curvature per panel (``h02 + h20`` of the local graph).
    sphere : tuple (center, radius) or None
        Set for analytic spheres so that curvature can be restored exactly.
    curvature_fallbacks : int
        Panels whose curvature fit was underdetermined and set to zero.
    """

    vertices: np.ndarray
    panels: np.ndarray
    curvature: np.ndarray = None
    sphere: tuple | None = None
    curvature_fallbacks: int = 0

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        p = np.ascontiguousarray(self.panels, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (nv, 3), got {v.shape}")
        if p.ndim != 2 or p.shape[1] != 3:
            raise MeshError(f"panels must have shape (n, 3), got {p.shape}")
        if p.size and (p.min() < 0 or p.max() >= len(v)):
            raise MeshError("panel references a vertex index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "panels", p)
        if self.curvature is None:
            object.__setattr__(self, "curvature", np.zeros(len(p)))
        else:
            c = np.asarray(self.curvature, dtype=float)
            if c.shape != (len(p),):
                raise MeshError("curvature must have one entry per panel")
            object.__setattr__(self, "curvature", c)
        if len(p) and np.any(self.areas <= 0.0):
            bad = int(np.argmin(self.areas))
            raise MeshError(f"degenerate panel {bad} (zero area)")

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    @cached_property
    def corners(self) -> np.ndarray:
        """Panel corner coordinates, shape (n, 3, 3)."""
        return self.vertices[self.panels]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.corners.mean(axis=1)

    @cached_property
    def _cross(self) -> np.ndarray:
        c = self.corners
        return np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross, axis=1)

    @cached_property
    def normals(self) -> np.ndarray:
        return self._cross / (2.0 * self.areas[:, None])

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def signed_volume(self) -> float:
        """Enclosed volume by the divergence theorem (positive if outward)."""
        return float(np.sum(self.areas * np.einsum("ij,ij->i", self.centroids, self.normals)) / 3.0)

    def is_closed(self) -> bool:
        edges = np.sort(self.panels[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diameter(self) -> float:
        """Longest bounding-box extent."""
        lo, hi = self.bounding_box()
        return float(np.max(hi - lo))


# --------------------------------------------------------------------------
# OBJ subset I/O
# --------------------------------------------------------------------------
_IGNORED_OBJ_TAGS = {"o", "g", "s", "vn", "vt", "mtllib", "usemtl"}


def load_mesh(path, format: str = "obj") -> SurfaceMesh:
    """Read a triangle mesh from an OBJ file (``v`` and ``f`` records).

    Closed meshes with inward orientation are flipped so that normals point
    outward. Curvature is initialised to zero.
    """
    if format != "obj":
        raise MeshError(f"unsupported mesh format {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    verts, faces = [], []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshError(f"parse error at line {lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in rest[:3]])
                except ValueError as exc:
                    raise MeshError(f"parse error at line {lineno}: {exc}") from None
            elif tag == "f":
                if len(rest) != 3:
                    raise MeshError(f"non-triangle face at line {lineno}")
                try:
                    idx = [int(tok.split("/")[0]) for tok in rest]
                except ValueError as exc:
                    raise MeshError(f"parse error at line {lineno}: {exc}") from None
                if any(i < 1 for i in idx):
                    raise MeshError(f"invalid vertex index at line {lineno} (indices are 1-based)")
                faces.append((lineno, [i - 1 for i in idx]))
            elif tag in _IGNORED_OBJ_TAGS:
                continue
            else:
                raise MeshError(f"parse error at line {lineno}: unsupported record {tag!r}")
    if not faces:
        raise MeshError(f"no faces in {path}")
    for lineno, f in faces:
        if max(f) >= len(verts):
            raise MeshError(f"out-of-range vertex index at line {lineno}")
    panels = np.array([f for _, f in faces], dtype=np.int64)
    used = np.zeros(len(verts), dtype=bool)
    used[panels.ravel()] = True
    if not used.all():
        raise MeshError(f"{int((~used).sum())} unreferenced vertices in {path}")
    mesh = SurfaceMesh(np.array(verts, dtype=float), panels)
    if mesh.is_closed() and mesh.signed_volume() < 0:
        logger.info("flipping inward-oriented mesh %s", path)
        mesh = SurfaceMesh(mesh.vertices, mesh.panels[:, ::-1].copy())
    return mesh


def write_mesh(path, mesh: SurfaceMesh) -> None:
    """Write the OBJ subset read by :func:`load_mesh`."""
    with Path(path).open("w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.panels + 1:
            fh.write(f"f {a} {b} {c}\n")


# --------------------------------------------------------------------------
# Icospheres
# --------------------------------------------------------------------------
def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _subdivide(v: np.ndarray, f: np.ndarray):
    edges = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    mids = v[uniq[:, 0]] + v[uniq[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    m = inverse.reshape(-1, 3) + len(v)
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
    nf = np.concatenate(
        [np.stack(t, axis=1) for t in ((a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca))]
    )
    return np.vstack([v, mids]), nf


def make_icosphere(subdivisions: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Geodesic sphere with ``20 * 4**subdivisions`` panels.

    Vertices lie exactly on the sphere; curvature is set to ``1/radius``.
    """
    if not 0 <= subdivisions <= MAX_ICOSPHERE_SUBDIVISIONS:
        raise ValueError(f"subdivisions must be in [0, {MAX_ICOSPHERE_SUBDIVISIONS}]")
    if radius <= 0:
        raise ValueError("radius must be positive")
    v, f = _icosahedron()
    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
    center = np.asarray(center, dtype=float)
    mesh = SurfaceMesh(radius * v + center, f, sphere=(center, float(radius)))
    return replace(mesh, curvature=np.full(mesh.n_panels, 1.0 / radius))


# --------------------------------------------------------------------------
# Scaling
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ScaleRecord:
    """Affine map ``x -> scale * x + translation`` into the unit box."""

    scale: float
    translation: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(x) + self.translation

    def invert(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.translation) / self.scale

    def to_scaled_wavenumber(self, kappa_physical: float) -> float:
        return kappa_physical / self.scale


def scale_to_unit_box(mesh: SurfaceMesh, d: float = DEFAULT_BOX_MARGIN) -> tuple[SurfaceMesh, ScaleRecord]:
    """Map the mesh into ``[0, 1-d]^3``, longest axis filling the box."""
    if not 0.0 < d < 0.5:
        raise ValueError("d must lie in (0, 0.5)")
    if mesh.n_panels == 0:
        raise MeshError("empty mesh")
    lo, hi = mesh.bounding_box()
    extent = float(np.max(hi - lo))
    if extent <= 0.0:
        raise MeshError("degenerate mesh: zero bounding-box extent")
    s = (1.0 - d) / extent
    if abs(s - 1.0) < 1e-14:
        s = 1.0
    rec = ScaleRecord(s, -s * lo, lo.copy(), hi.copy())
    sphere = None
    if mesh.sphere is not None:
        sphere = (rec.apply(mesh.sphere[0]), mesh.sphere[1] * s)
    scaled = SurfaceMesh(
        rec.apply(mesh.vertices),
        mesh.panels,
        curvature=mesh.curvature / s,
        sphere=sphere,
        curvature_fallbacks=mesh.curvature_fallbacks,
    )
    return scaled, rec


# --------------------------------------------------------------------------
# Panel quadrature
# --------------------------------------------------------------------------
def _perm3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _perm6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric (Dunavant) rules in barycentric coordinates, weights sum to 1."""
    if order == 1:
        bary, w = [(1 / 3, 1 / 3, 1 / 3)], [1.0]
    elif order == 3:
        bary, w = _perm3(1 / 6), [1 / 3] * 3
    elif order == 6:
        bary = _perm3(0.445948490915965) + _perm3(0.091576213509771)
        w = [0.223381589678011] * 3 + [0.109951743655322] * 3
    elif order == 12:
        bary = (
            _perm3(0.249286745170910)
            + _perm3(0.063089014491502)
            + _perm6(0.053145049844817, 0.310352451033784)
        )
        w = [0.116786275726379] * 3 + [0.050844906370207] * 3 + [0.082851075618374] * 6
    else:
        raise ValueError(f"unsupported panel quadrature order {order}; use 1, 3, 6 or 12")
    w = np.asarray(w)
    return np.asarray(bary), w / w.sum()


TRIANGLE_RULE_DEGREE = {1: 1, 3: 2, 6: 4, 12: 6}


@dataclass(frozen=True)
class PanelQuadrature:
    """Quadrature nodes on every panel.

    ``points`` has shape (n, m, 3), ``weights`` shape (n, m); weights on a
    panel sum to its area.
    """

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def n_panels(self) -> int:
        return self.points.shape[0]

    @property
    def per_panel(self) -> int:
        return self.points.shape[1]

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.reshape(-1, 3)

    @property
    def flat_weights(self) -> np.ndarray:
        return self.weights.reshape(-1)

    @property
    def panel_of_point(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_panels), self.per_panel)


def panel_quadrature(mesh: SurfaceMesh, order: int = 6) -> PanelQuadrature:
    bary, w = _triangle_rule(order)
    pts = np.einsum("qk,nkd->nqd", bary, mesh.corners)
    return PanelQuadrature(pts, mesh.areas[:, None] * w[None, :], order)


# --------------------------------------------------------------------------
# Curvature
# --------------------------------------------------------------------------
def _tangent_frames(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.where(np.abs(normals[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(normals, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    return e1, np.cross(normals, e1)


def _panel_neighbourhoods(mesh: SurfaceMesh) -> list[np.ndarray]:
    """Vertices of all panels touching panel i (its 1-ring)."""
    vertex_panels = [[] for _ in range(len(mesh.vertices))]
    for i, tri in enumerate(mesh.panels):
        for v in tri:
            vertex_panels[v].append(i)
    out = []
    for tri in mesh.panels:
        touching = set()
        for v in tri:
            touching.update(vertex_panels[v])
        out.append(np.unique(mesh.panels[sorted(touching)]))
    return out


def estimate_curvature(mesh: SurfaceMesh, mode: str = "quadric") -> SurfaceMesh:
    """Return a copy of ``mesh`` with the curvature scalar set per ``mode``.

    ``quadric`` fits ``h = c0 + c1 t1 + c2 t2 + a t1^2 + b t1 t2 + c t2^2`` to
    the panel's 1-ring vertices in its tangent frame and takes the mean
    curvature of that graph at the origin. Fits with fewer than six points
    fall back to zero. ``zero`` drops the curvature term entirely;
    ``analytic`` restores ``1/R`` on meshes built by :func:`make_icosphere`.
    """
    if mode not in CURVATURE_MODES:
        raise ValueError(f"curvature mode must be one of {CURVATURE_MODES}")
    if mode == "zero":
        return replace(mesh, curvature=np.zeros(mesh.n_panels), curvature_fallbacks=0)
    if mode == "analytic":
        if mesh.sphere is None:
            raise ValueError("analytic curvature is only known for sphere meshes")
        return replace(mesh, curvature=np.full(mesh.n_panels, 1.0 / mesh.sphere[1]), curvature_fallbacks=0)

    n = mesh.normals
    e1, e2 = _tangent_frames(n)
    curv = np.zeros(mesh.n_panels)
    fallbacks = 0
    for i, nbrs in enumerate(_panel_neighbourhoods(mesh)):
        if len(nbrs) < 6:
            fallbacks += 1
            continue
        rel = mesh.vertices[nbrs] - mesh.centroids[i]
        t1, t2, h = rel @ e1[i], rel @ e2[i], rel @ n[i]
        design = np.stack([np.ones_like(t1), t1, t2, t1 * t1, t1 * t2, t2 * t2], axis=1)
        coef, *_ = np.linalg.lstsq(design, h, rcond=None)
        _, fx, fy, a, b, c = coef
        fxx, fxy, fyy = 2 * a, b, 2 * c
        g = 1.0 + fx * fx + fy * fy
        mean = ((1 + fy * fy) * fxx - 2 * fx * fy * fxy + (1 + fx * fx) * fyy) / (2 * g**1.5)
        # outward normal: convex surfaces bend away from n, so flip the sign
        curv[i] = -mean
    if fallbacks:
        logger.warning("curvature fit underdetermined on %d panels; set to zero", fallbacks)
    return replace(mesh, curvature=curv, curvature_fallbacks=fallbacks)
