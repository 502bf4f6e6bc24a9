import numpy as np
import pytest

from helmsplit.geometry import SurfaceMesh, make_icosphere, scale_to_unit_box
from helmsplit.operators import OperatorConfig, assemble

# criterion label -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def plate_mesh(m: int, lo=0.2, hi=0.7, z=0.45) -> SurfaceMesh:
    """Square plate in the plane ``x3 = z`` split into ``2 m^2`` triangles."""
    s = np.linspace(lo, hi, m + 1)
    X, Y = np.meshgrid(s, s, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], axis=1)
    idx = np.arange((m + 1) ** 2).reshape(m + 1, m + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    panels = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return SurfaceMesh(verts, panels)


@pytest.fixture(scope="session")
def sphere320():
    mesh, _ = scale_to_unit_box(make_icosphere(2))
    return mesh


@pytest.fixture(scope="session")
def op8(sphere320):
    """Small operator: 320 panels, N = 8, kappa = 5, delta = 4e-3."""
    cfg = OperatorConfig(kappa=5.0, eta=2.5, delta=4e-3, N=8, curvature_mode="analytic")
    return assemble(sphere320, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0])):
        passed, detail = ACCEPTANCE_RESULTS[label]
        terminalreporter.write_line(f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail})")
