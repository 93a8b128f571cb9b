import numpy as np
import pytest

from fiberkit.exceptions import DegeneracyError
from fiberkit.frames import (
    angles_to_fibers,
    build_frame,
    canonicalize,
    fibers_to_angles,
    frame_field,
    wrap_half_pi,
    wrap_pi,
)
from fiberkit.geometry import BoxFace, SurfaceLabel, box_mesh
from fiberkit.laplace import solve_laplace
from fiberkit.ldrbm import solve_coordinates

from conftest import random_rotations, vertex_normals


def unit_frame():
    return build_frame([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])


def random_frames(rng, n):
    R = random_rotations(rng, n)
    return build_frame(R[..., 0], R[..., 1] + 0.3 * R[..., 0])


def test_build_frame_examples():
    fr = unit_frame()
    assert np.allclose(fr.e_t, [1, 0, 0]) and np.allclose(fr.e_n, [0, 0, 1])
    assert np.allclose(fr.e_l, [0, 1, 0])
    fr2 = build_frame([2.0, 0.0, 0.0], [0.0, 0.0, 5.0])
    for a, b in ((fr.e_l, fr2.e_l), (fr.e_t, fr2.e_t), (fr.e_n, fr2.e_n)):
        assert np.array_equal(a, b)
    fr3 = build_frame([1.0, 0.0, 0.0], np.array([1.0, 0.0, 1.0]) / np.sqrt(2))
    assert np.allclose(fr3.e_t, [1, 0, 0], atol=1e-15) and np.allclose(fr3.e_n, [0, 0, 1], atol=1e-15)


def test_build_frame_degenerate():
    with pytest.raises(DegeneracyError) as exc:
        build_frame([[1.0, 0, 0], [0, 0, 0]], [[0, 0, 1.0], [0, 0, 1.0]])
    assert exc.value.indices == [1]
    with pytest.raises(DegeneracyError):
        build_frame([1.0, 0, 0], [3.0, 0, 0])


def test_frame_orthonormal_right_handed(rng):
    fr = random_frames(rng, 1000)
    M = fr.as_matrix()
    assert np.abs(np.swapaxes(M, 1, 2) @ M - np.eye(3)).max() < 1e-12
    assert np.allclose(np.cross(fr.e_n, fr.e_t), fr.e_l, atol=1e-15)
    # (e_l, e_n, e_t) is the right-handed ordering of e_l = e_n x e_t
    assert np.abs(np.linalg.det(np.stack([fr.e_l, fr.e_n, fr.e_t], -1)) - 1).max() < 1e-10


def test_fibers_to_angles_examples():
    fr = unit_frame()
    a, g, b = fibers_to_angles(fr.e_l, fr)
    assert (a, g) == (0.0, 0.0)
    a, g, _ = fibers_to_angles(fr.e_n, fr)
    assert a == pytest.approx(np.pi / 2) and g == pytest.approx(0.0)
    f = np.cos(np.radians(60)) * fr.e_l + np.sin(np.radians(60)) * fr.e_n
    a, g, _ = fibers_to_angles(f, fr)
    assert a == pytest.approx(np.radians(60), abs=1e-15) and abs(g) < 1e-15
    with pytest.raises(DegeneracyError):
        fibers_to_angles(fr.e_t, fr)


def test_angles_to_fibers_examples():
    fr = unit_frame()
    tr = angles_to_fibers(0.0, 0.0, 0.0, fr)
    assert np.allclose(tr.f, fr.e_l) and np.allclose(tr.s, fr.e_t) and np.allclose(tr.n, fr.e_n)
    tr = angles_to_fibers(np.pi / 2, 0.0, 0.0, fr)
    assert np.allclose(tr.f, fr.e_n) and np.allclose(tr.s, fr.e_t)
    ref = angles_to_fibers(0.0, 0.0, 0.0, fr)
    tr = angles_to_fibers(0.0, 0.0, np.pi / 2, fr)
    # s = e_n', n = -e_t'
    assert np.allclose(tr.s, ref.n, atol=1e-15) and np.allclose(tr.n, -ref.s, atol=1e-15)
    with pytest.raises(DegeneracyError):
        angles_to_fibers(0.0, np.pi / 2, 0.0, fr)


def test_beta_zero_for_unrotated_sheet():
    fr = unit_frame()
    tr = angles_to_fibers(0.4, 0.3, 0.0, fr)
    assert fibers_to_angles(tr, fr)[2] == pytest.approx(0.0, abs=1e-15)


def test_round_trip_random(rng):
    n = 20000
    fr = random_frames(rng, n)
    a = rng.uniform(-np.pi, np.pi, n)
    g = np.radians(rng.uniform(-80, 80, n))
    b = rng.uniform(-np.pi, np.pi, n)
    tr = angles_to_fibers(a, g, b, fr)
    M = tr.as_matrix()
    assert np.abs(np.swapaxes(M, 1, 2) @ M - np.eye(3)).max() < 1e-12
    a2, g2, b2 = fibers_to_angles(tr, fr)
    assert np.abs(wrap_pi(a2 - a)).max() < 1e-9
    assert np.abs(g2 - g).max() < 1e-9
    assert np.abs(wrap_pi(b2 - b)).max() < 1e-9


def test_direction_equivalence(rng):
    fr = random_frames(rng, 500)
    a = rng.uniform(-np.pi, np.pi, 500)
    g = np.radians(rng.uniform(-80, 80, 500))
    f1 = angles_to_fibers(a, g, 0.0, fr).f
    f2 = angles_to_fibers(a + np.pi, -g, 0.0, fr).f
    assert np.abs(f1 + f2).max() < 1e-12
    ca, cg = canonicalize(a, g)
    assert np.all(np.abs(ca) <= np.pi / 2)
    f3 = angles_to_fibers(ca, cg, 0.0, fr).f
    assert np.abs(np.abs(np.einsum("ij,ij->i", f1, f3)) - 1).max() < 1e-12
    # unwrapped input (alpha + pi may exceed pi) gives the same representative
    ca2, cg2 = canonicalize(a + np.pi, -g)
    assert np.abs(wrap_pi(ca2 - ca)).max() < 1e-12 and np.abs(cg2 - cg).max() < 1e-12


def test_wraps():
    assert wrap_pi(np.pi) == pytest.approx(np.pi)
    assert wrap_pi(-np.pi) == pytest.approx(np.pi)
    assert wrap_half_pi(-np.pi / 2) == pytest.approx(np.pi / 2)
    assert wrap_half_pi(np.radians(100)) == pytest.approx(np.radians(-80))


def test_frame_field_slab_constant():
    m = box_mesh((3, 3, 2), (1.0, 1.0, 0.5))
    phi = solve_laplace(m, {BoxFace.XMIN: 0.0, BoxFace.XMAX: 1.0})
    psi = solve_laplace(m, {BoxFace.ZMIN: 0.0, BoxFace.ZMAX: 1.0})
    fr = frame_field(m, phi, psi)
    assert fr.n_repaired == 0
    assert np.allclose(fr.e_t, [1, 0, 0], atol=1e-10)
    assert np.allclose(fr.e_n, [0, 0, 1], atol=1e-10)
    assert np.allclose(fr.e_l, [0, 1, 0], atol=1e-10)


def test_frame_field_biventricle_orientation(biv_fine):
    phi, psi = solve_coordinates(biv_fine)
    fr = frame_field(biv_fine, phi, psi)
    # staircase walls contain tets with all four nodes on one Dirichlet
    # surface; their nodes get a zero gradient and are repaired
    assert 0 < fr.n_repaired < 0.2 * biv_fine.n_nodes
    M = fr.as_matrix()
    assert np.abs(np.swapaxes(M, 1, 2) @ M - np.eye(3)).max() < 1e-10
    nodes, normals = vertex_normals(biv_fine, (SurfaceLabel.EPI, SurfaceLabel.APEX))
    d = np.einsum("ij,ij->i", fr.e_t[nodes], normals)
    x = biv_fine.nodes[nodes, 0]
    # phi rises from 0 (epi) to 2 (LV endo): e_t points into the LV wall
    assert np.mean(d[x > 0] < 0) >= 0.99
    # phi falls from 0 (epi) to -1 (RV endo): e_t points out of the RV free wall
    assert np.mean(d[x < -3.2e-3] > 0) >= 0.99


def test_frame_field_rejects_large_degenerate_patch():
    m = box_mesh((3, 3, 3))
    phi = m.nodes[:, 0].copy()
    with pytest.raises(DegeneracyError):
        frame_field(m, phi, phi)
