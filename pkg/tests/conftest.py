import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[dict]()

from fiberkit.geometry import generate_idealized_biventricle
from fiberkit.ldrbm import solve_coordinates


@pytest.fixture(scope="session")
def biv():
    """Coarse idealized biventricle shared by the fiber tests (0.5 mm grid)."""
    return generate_idealized_biventricle(target_edge_length=0.5e-3)


@pytest.fixture(scope="session")
def biv_coords(biv):
    return solve_coordinates(biv)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotations(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, 3, 3)))
    Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    det = np.linalg.det(Q)
    Q[det < 0, :, 0] *= -1
    return Q


@pytest.fixture(scope="session")
def biv_fine():
    """Biventricle at the 0.25 mm working resolution."""
    return generate_idealized_biventricle(target_edge_length=0.25e-3)


def vertex_normals(mesh, labels):
    """Area-weighted outward normals at the nodes of the labeled facets.

    The voxel-based surfaces are staircases, so single facet normals can be
    far from the smooth surface normal; averaging over the incident facets
    recovers it.
    """
    sel = np.isin(mesh.facet_labels, [int(v) for v in labels])
    f = mesh.facets[sel]
    acc = np.zeros((mesh.n_nodes, 3))
    for k in range(3):
        np.add.at(acc, f[:, k], mesh.facet_normals[sel] * mesh.facet_areas[sel][:, None])
    nodes = np.unique(f)
    return nodes, acc[nodes] / np.linalg.norm(acc[nodes], axis=1, keepdims=True)


@pytest.fixture
def acceptance(request):
    """Recorder for one acceptance criterion.

    ``acceptance(number, title, checks)`` takes ``checks`` as a list of
    ``(description, passed)`` pairs, stores a one-line verdict for the
    terminal summary and fails the test if any check failed.
    """
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, title, checks):
        ok = all(bool(passed) for _, passed in checks)
        failed = [d for d, passed in checks if not passed]
        detail = "; ".join(d for d, _ in checks)
        results[number] = f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}"
        assert ok, "failed: " + "; ".join(failed)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
