import numpy as np
import pytest

from fiberkit.exceptions import DegeneracyError, ValidationError
from fiberkit.fiberfield import (
    HelmholtzOperator,
    angle_histogram,
    angle_statistics,
    calibrate_projection,
    circular_mean,
    circular_std,
    decompose,
    embed,
    expected_projection,
    helmholtz_filter,
    kappa_for_std,
    projection_components,
    projection_stats,
    resultant_length,
    synthesize_disarray,
    unembed,
)
from fiberkit.frames import Frame, angles_to_fibers, wrap_half_pi
from fiberkit.geometry import box_mesh


@pytest.fixture(scope="module")
def box():
    return box_mesh((8, 6, 4), (2e-3, 1.5e-3, 1e-3))


def slab_frame(n):
    ex, ey, ez = np.eye(3)
    return Frame(np.tile(ex, (n, 1)), np.tile(ez, (n, 1)), np.tile(ey, (n, 1)), 0)


def test_embed_examples():
    assert np.allclose(embed(np.pi / 4), [1.0, 0.0], atol=1e-15)
    assert np.allclose(embed(np.pi / 2), embed(-np.pi / 2))
    th = np.radians([-89.0, -30.0, 0.0, 45.0, 90.0])
    assert np.allclose(unembed(embed(th)), wrap_half_pi(th), atol=1e-14)
    with pytest.raises(DegeneracyError):
        unembed(np.zeros((3, 2)))


def test_filter_constants_and_identity(box):
    c = np.full(box.n_nodes, 0.37)
    assert np.abs(helmholtz_filter(c, 3e-4, box) - 0.37).max() < 1e-10
    v = np.random.default_rng(1).random(box.n_nodes)
    assert np.array_equal(helmholtz_filter(v, 0.0, box), v)
    with pytest.raises(ValidationError):
        HelmholtzOperator(box, -1.0)
    with pytest.raises(ValidationError):
        helmholtz_filter(v[:-1], 1e-4, box)


def test_filter_linearity_and_maximum_principle(box):
    rng = np.random.default_rng(2)
    op = HelmholtzOperator(box, 2e-4)
    a, b = rng.random(box.n_nodes), rng.random(box.n_nodes)
    assert np.allclose(op(2 * a - 3 * b), 2 * op(a) - 3 * op(b), atol=1e-10)
    out = op(a)
    assert out.min() >= a.min() - 1e-10 and out.max() <= a.max() + 1e-10
    # multi-column input is filtered column-wise
    both = op(np.stack([a, b], axis=1))
    assert np.allclose(both[:, 0], out, atol=1e-12)


def test_filter_attenuates_cosine_on_a_bar():
    L, ell = 1e-2, 5e-4
    mesh = box_mesh((200, 1, 1), (L, 2.5e-4, 2.5e-4))
    k = 4 * np.pi / L
    x = mesh.nodes[:, 0]
    out = helmholtz_filter(np.cos(k * x), ell, mesh)
    ratio = out @ np.cos(k * x) / (np.cos(k * x) @ np.cos(k * x))
    assert ratio == pytest.approx(1.0 / (1.0 + (ell * k) ** 2), rel=1e-2)


def test_seam_at_ninety_degrees(box):
    # half the nodes at +89 deg, half at -89: the mean direction is 90, not 0
    alpha = np.where(np.arange(box.n_nodes) % 2 == 0, np.radians(89.0), np.radians(-89.0))
    (a_s, _), _ = decompose(alpha, np.zeros(box.n_nodes), 3e-4, box)
    assert np.degrees(np.abs(a_s)).min() > 85.0


def test_decompose_identities(box):
    rng = np.random.default_rng(3)
    alpha = rng.uniform(-1.2, 1.2, box.n_nodes)
    gamma = rng.uniform(-0.3, 0.3, box.n_nodes)
    (a_s, g_s), (ea, eg) = decompose(alpha, gamma, 2e-4, box)
    assert np.abs(wrap_half_pi(a_s + ea) - wrap_half_pi(alpha)).max() < 1e-12
    assert np.abs(wrap_half_pi(g_s + eg) - wrap_half_pi(gamma)).max() < 1e-12
    assert np.abs(ea).max() <= np.pi / 2 and np.abs(eg).max() <= np.pi / 2
    (a0, _), (e0, _) = decompose(alpha, gamma, 0.0, box)
    assert np.allclose(a0, alpha) and not np.any(e0)
    # a uniform field is reproduced with zero residual
    (a_u, _), (e_u, _) = decompose(np.full(box.n_nodes, 0.4), np.zeros(box.n_nodes), 2e-4, box)
    assert np.abs(a_u - 0.4).max() < 1e-9 and np.abs(e_u).max() < 1e-9


def test_circular_statistics_examples():
    th = np.radians([0.0, 10.0, 20.0])
    assert np.degrees(circular_mean(th)) == pytest.approx(10.0)
    assert circular_std(np.full(5, 0.3)) == pytest.approx(0.0, abs=1e-7)
    uniform = np.linspace(-np.pi / 2, np.pi / 2, 360, endpoint=False)
    assert resultant_length(uniform) < 1e-12
    assert circular_std(uniform) > 1.0
    # opposite fiber directions are the same direction
    assert resultant_length(np.array([np.pi / 2, -np.pi / 2])) == pytest.approx(1.0)
    with pytest.warns(UserWarning, match="uniformly"):
        angle_statistics(uniform)


def test_angle_histogram():
    c, n = angle_histogram(np.radians([0.0, 1.0, 89.0, -89.0]), 5.0)
    assert len(c) == 36 and n.sum() == 4
    assert n[c == 0.0][0] == 2 and n[c == 90.0][0] == 2
    with pytest.raises(ValidationError):
        angle_histogram([0.0], 7.0)


def test_angle_statistics_regions():
    th = np.radians([10.0, 10.0, -40.0, -40.0])
    st = angle_statistics(th, regions=np.array([1, 1, 2, 2]))
    assert np.degrees(st[1]["mean"]) == pytest.approx(10.0)
    assert np.degrees(st[2]["mean"]) == pytest.approx(-40.0)
    assert st["all"]["count"] == 4


def test_kappa_for_std_round_trip(rng):
    k = kappa_for_std(np.radians(20.0))
    x = 0.5 * rng.vonmises(0.0, k, 400_000)
    assert np.degrees(circular_std(x)) == pytest.approx(20.0, rel=1e-2)
    assert kappa_for_std(0.0) == np.inf


def test_synthesize_no_noise_and_seed():
    n = 500
    frame = slab_frame(n)
    alpha = np.linspace(-1.0, 1.0, n)
    tri = angles_to_fibers(alpha, np.zeros(n), np.zeros(n), frame)
    same = synthesize_disarray(tri, frame, np.inf, np.inf, seed=4)
    assert np.abs(np.abs(np.sum(same.f * tri.f, axis=1)) - 1).max() < 1e-12
    a = synthesize_disarray(tri, frame, 10.0, 20.0, seed=7)
    b = synthesize_disarray(tri, frame, 10.0, 20.0, seed=7)
    c = synthesize_disarray(tri, frame, 10.0, 20.0, seed=8)
    assert np.array_equal(a.f, b.f) and not np.array_equal(a.f, c.f)
    with pytest.raises(ValidationError):
        synthesize_disarray(tri, frame, 10.0, 10.0, outlier_fraction=1.5)


def test_projection_examples():
    n = 10
    frame = slab_frame(n)
    tri = angles_to_fibers(np.zeros(n), np.zeros(n), np.zeros(n), frame)
    st = projection_stats(tri, tri)
    assert st.as_tuple() == pytest.approx((1.0, 0.0, 0.0))
    st = projection_stats(tri.s, tri)
    assert st.as_tuple() == pytest.approx((0.0, 1.0, 0.0))
    assert st.norm == pytest.approx(1.0)


def test_projection_components_unit_rows(rng):
    n = 2000
    frame = slab_frame(n)
    tri = angles_to_fibers(rng.uniform(-1, 1, n), rng.uniform(-0.3, 0.3, n), rng.uniform(-1, 1, n), frame)
    v = rng.normal(size=(n, 3))
    comp = projection_components(v, tri)
    assert np.abs(np.sum(comp**2, axis=1) - 1).max() < 1e-12
    st = projection_stats(v, tri, regions=np.arange(n) % 2)
    assert set(st.per_region) == {0, 1}


def test_expected_projection_matches_sampling():
    n = 200_000
    frame = slab_frame(n)
    tri = angles_to_fibers(np.zeros(n), np.zeros(n), np.zeros(n), frame)
    ka, kg, p = 12.0, 30.0, 0.1
    pert = synthesize_disarray(tri, frame, ka, kg, seed=11, outlier_fraction=p)
    got = np.array(projection_stats(pert, tri).as_tuple())
    assert np.abs(got - expected_projection(ka, kg, p)).max() < 5e-3
    assert np.allclose(expected_projection(np.inf, np.inf), [1.0, 0.0, 0.0])


def test_calibrate_projection_reaches_target():
    ka, kg, p = calibrate_projection((0.89, 0.18, 0.19))
    assert np.allclose(expected_projection(ka, kg, p), [0.89, 0.18, 0.19], atol=1e-8)
    assert 0 < p < 1
