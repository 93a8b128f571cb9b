import numpy as np
import pytest

from fiberkit.eikonal import uniform_triad
from fiberkit.exceptions import DataError, ValidationError
from fiberkit.frames import Triad
from fiberkit.tissue import (
    UsykParams,
    active_piola,
    active_tension,
    green_lagrange,
    green_lagrange_invariants,
    normalize_sf,
    passive_piola,
    piola_stress,
    usyk_energy,
)

from conftest import random_rotations

EYE = uniform_triad(1).as_matrix()[0]


def random_F(rng, n, jmin=0.8, jmax=1.2):
    out = []
    while len(out) < n:
        F = np.eye(3) + 0.15 * rng.standard_normal((3, 3))
        if jmin <= np.linalg.det(F) <= jmax:
            out.append(F)
    return np.array(out)


def random_triads(rng, n):
    R = random_rotations(rng, n)
    return Triad(R[:, :, 0], R[:, :, 1], R[:, :, 2])


def test_energy_zero_at_identity_and_rotations(rng):
    assert usyk_energy(np.eye(3), EYE) == 0.0
    R = random_rotations(rng, 20)
    assert np.abs(usyk_energy(R, EYE)).max() < 1e-9


def test_default_parameter_example():
    W = usyk_energy(np.diag([1.1, 1.0, 1.0]), EYE)
    iso = 0.5 * 2e3 * np.expm1(5.0 * 0.105**2)
    vol = 0.5 * 5e4 * 0.1 * np.log(1.1)
    assert iso == pytest.approx(56.7, abs=0.05) and vol == pytest.approx(238.3, abs=0.05)
    assert W == pytest.approx(iso + vol, rel=1e-14)
    assert W == pytest.approx(295.0, abs=0.1)


def test_frame_indifference(rng):
    F = random_F(rng, 50)
    tri = random_triads(rng, 50)
    R = random_rotations(rng, 50)
    W = usyk_energy(F, tri)
    assert np.all(W >= 0)
    assert np.allclose(usyk_energy(R @ F, tri), W, rtol=1e-10, atol=0)


def test_inversion_error():
    with pytest.raises(DataError):
        usyk_energy(np.diag([-1.0, 1.0, 1.0]), EYE)
    with pytest.raises(DataError):
        green_lagrange_invariants(np.diag([-2.0, 0.0, 0.0]))


def test_params_positive():
    with pytest.raises(ValidationError):
        UsykParams(c=0.0)
    B = UsykParams().B
    assert np.array_equal(B, B.T) and B[0, 0] == 5.0


def test_reference_is_stress_free():
    assert np.abs(piola_stress(np.eye(3), EYE)).max() < 1e-12 * 2e3


def test_passive_stress_matches_finite_differences(rng):
    h = 1e-6
    F = random_F(rng, 100)
    tri = random_triads(rng, 100)
    P = passive_piola(F, tri)
    fd = np.empty_like(P)
    for i in range(3):
        for j in range(3):
            dF = np.zeros((3, 3))
            dF[i, j] = h
            fd[:, i, j] = (usyk_energy(F + dF, tri) - usyk_energy(F - dF, tri)) / (2 * h)
    rel = np.linalg.norm(P - fd, axis=(1, 2)) / np.linalg.norm(P, axis=(1, 2))
    assert rel.max() < 1e-5


def test_active_part_at_identity(rng):
    tri = random_triads(rng, 10)
    T = 1.3e4
    P = active_piola(np.broadcast_to(np.eye(3), (10, 3, 3)), tri, np.full(10, T))
    assert np.allclose(P, T * np.einsum("ni,nj->nij", tri.f, tri.f), atol=1e-12 * T, rtol=0)
    sf = (0.97, 0.17, 0.17)
    P = active_piola(np.eye(3), EYE, T, sf)
    assert np.allclose(P, P.T)
    assert np.allclose(np.linalg.eigvalsh(P), np.sort(T * np.array(sf)))
    with pytest.raises(ValidationError):
        active_piola(np.eye(3), EYE, -1.0)


def test_active_terms_use_unsquared_norm():
    F = np.diag([1.2, 1.0, 1.0])
    P = active_piola(F, EYE, 1.0)
    assert P[0, 0] == pytest.approx(1.0)  # (F f ⊗ f) / |F f| with |F f| = 1.2


def test_active_tension_linear():
    assert active_tension(0.0) == 0.0
    G = np.array([0.1, 0.4])
    assert np.allclose(active_tension(G, 23e6), 23e6 * G)
    assert np.allclose(active_tension(G, 11.5e6), 0.5 * active_tension(G, 23e6))
    with pytest.raises(ValidationError):
        active_tension(-0.1)


def test_normalize_sf_examples():
    sf, norm = normalize_sf([1.0, 0.0, 0.0])
    assert sf.tolist() == [1.0, 0.0, 0.0] and norm == 1.0
    sf, norm = normalize_sf([0.97, 0.17, 0.17])
    assert norm == pytest.approx(np.sqrt(0.9987))
    assert np.allclose(sf, [0.9706, 0.1701, 0.1701], atol=1e-4)
    sf, norm = normalize_sf([0.89, 0.18, 0.19], passthrough=True)
    assert sf.tolist() == [0.89, 0.18, 0.19]
    assert norm == pytest.approx(0.9277, abs=5e-5)
    with pytest.raises(ValidationError):
        normalize_sf([0.0, 0.0, 0.0])
    with pytest.raises(ValidationError):
        normalize_sf([1.0, -0.1, 0.0])


def test_invariant_examples(rng):
    assert np.allclose(green_lagrange_invariants(np.zeros((3, 3))), (0.0, 0.0, 1.0))
    R = random_rotations(rng, 5)
    I1, I2, I3 = green_lagrange_invariants(R - np.eye(3))
    assert np.abs(I1).max() < 1e-14 and np.abs(I2).max() < 1e-14 and np.abs(I3 - 1).max() < 1e-14
    I1, I2, I3 = green_lagrange_invariants(np.diag([0.1, 0.0, 0.0]))
    assert np.allclose(green_lagrange(np.diag([1.1, 1, 1])), np.diag([0.105, 0, 0]))
    assert (I1, I2, I3) == pytest.approx((0.105, 0.0, 1.21), abs=1e-14)


def test_invariants_properties(rng):
    F = random_F(rng, 200, 0.5, 1.5)
    I1, I2, I3 = green_lagrange_invariants(F - np.eye(3))
    J = np.linalg.det(F)
    assert np.abs(I3 / J**2 - 1).max() < 1e-12
    # rotating F on both sides (R F Rᵀ) rotates E, invariants unchanged
    R = random_rotations(rng, 200)
    G = R @ F @ np.swapaxes(R, 1, 2)
    out = green_lagrange_invariants(G - np.eye(3))
    assert np.allclose(out, (I1, I2, I3), rtol=1e-10, atol=1e-13)
