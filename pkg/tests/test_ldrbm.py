import numpy as np
import pytest

from fiberkit.exceptions import DataError, ValidationError
from fiberkit.frames import fibers_to_angles, wrap_pi
from fiberkit.geometry import Layer, RegionLabel, SurfaceLabel
from fiberkit.ldrbm import (
    PrescribedAngles,
    ldrbm_angles,
    ldrbm_fibers,
    layers_from_phi,
    modal_angle,
    regional_modal_angles,
    transmural_coordinate,
    ventricle_side,
)

LV, RV = int(RegionLabel.LV), int(RegionLabel.RV)


def test_transmural_coordinate_examples():
    w = transmural_coordinate(np.array([-1.0, 2.0, 1.0, 0.0, -0.5]))
    assert w.tolist() == [1.0, 1.0, 0.5, 0.0, 0.5]
    with pytest.raises(DataError):
        transmural_coordinate(np.array([0.0, 2.5]))


def test_ldrbm_angles_examples():
    p = PrescribedAngles.from_degrees(alpha_endo_lv=-60.0, alpha_epi_lv=60.0)
    side = np.full(3, LV)
    a, g, b = ldrbm_angles(np.array([1.0, 0.0, 0.5]), side, p)
    assert a[0] == p.alpha_endo_lv and a[1] == p.alpha_epi_lv
    assert a[2] == pytest.approx(0.0, abs=1e-15)
    assert np.all(b == 0) and np.all(g == 0)


def test_default_midwall_value():
    p = PrescribedAngles()
    a, _, _ = ldrbm_angles(np.array([0.5]), np.array([LV]), p)
    assert np.degrees(a[0]) == pytest.approx(-27.0)


def test_prescribed_validation():
    with pytest.raises(ValidationError):
        PrescribedAngles.from_degrees(gamma_endo_lv=95.0)
    with pytest.raises(ValidationError):
        PrescribedAngles(alpha_epi_rv=4.0)
    assert PrescribedAngles().to_degrees()["alpha_endo_lv"] == pytest.approx(-76.0)


def test_endpoint_exactness_and_linearity(biv, biv_coords):
    phi, psi = biv_coords
    p = PrescribedAngles()
    triad, (alpha, gamma, beta), frame = ldrbm_fibers(biv, phi, psi, p)
    regions = biv.node_regions()
    side = ventricle_side(phi, regions)
    w = transmural_coordinate(phi, regions)
    lv_endo = biv.nodes_on(SurfaceLabel.ENDO_LV)
    rv_endo = biv.nodes_on(SurfaceLabel.ENDO_RV)
    # rim nodes shared by the epicardium and an endocardium take the endo value
    epi = np.setdiff1d(biv.nodes_on(SurfaceLabel.EPI), np.union1d(lv_endo, rv_endo))
    assert np.abs(alpha[lv_endo] - p.alpha_endo_lv).max() < 1e-8
    assert np.abs(alpha[rv_endo] - p.alpha_endo_rv).max() < 1e-8
    epi_lv = epi[side[epi] == LV]
    epi_rv = epi[side[epi] == RV]
    assert np.abs(alpha[epi_lv] - p.alpha_epi_lv).max() < 1e-8
    assert np.abs(alpha[epi_rv] - p.alpha_epi_rv).max() < 1e-8
    lv = side == LV
    lin = p.alpha_endo_lv * w[lv] + p.alpha_epi_lv * (1 - w[lv])
    assert np.abs(alpha[lv] - lin).max() < 1e-6
    # composition: the triads give the assigned angles back
    a2, g2, b2 = fibers_to_angles(triad, frame)
    assert np.abs(wrap_pi(a2 - alpha)).max() < 1e-6
    assert np.abs(g2 - gamma).max() < 1e-6


def test_monotone_between_endpoints(biv, biv_coords):
    phi, _ = biv_coords
    regions = biv.node_regions()
    p = PrescribedAngles()
    a, _, _ = ldrbm_angles(transmural_coordinate(phi, regions), ventricle_side(phi, regions), p)
    lv = ventricle_side(phi, regions) == LV
    assert a[lv].min() >= p.alpha_endo_lv - 1e-12 and a[lv].max() <= p.alpha_epi_lv + 1e-12


def test_zero_angles_give_circumferential_fibers(biv, biv_coords):
    phi, psi = biv_coords
    zero = PrescribedAngles(0.0, 0.0, 0.0, 0.0)
    triad, _, frame = ldrbm_fibers(biv, phi, psi, zero)
    assert np.abs(triad.f - frame.e_l).max() < 1e-12


def test_modal_angle_examples():
    assert modal_angle(np.radians([30.0, 30.0, 30.0])) == 30.0
    assert modal_angle(np.radians([10.0, 10.0, 20.0])) == 10.0
    # tie: smaller center wins
    assert modal_angle(np.radians([10.0, 20.0])) == 10.0
    # direction data folds across +-90
    assert modal_angle(np.radians([89.0, -89.0, 91.0])) == 90.0
    with pytest.raises(ValidationError):
        modal_angle([])
    with pytest.raises(ValidationError):
        modal_angle([0.1], bin_width_deg=7.0)


def test_regional_modes_recovered(rng):
    n = 4000
    side = np.repeat([LV, LV, RV, RV], n)
    layers = np.tile(np.repeat([Layer.ENDO, Layer.EPI], n), 2)
    truth = {"alpha_endo_lv": -76.0, "alpha_epi_lv": 22.0, "alpha_endo_rv": 5.0, "alpha_epi_rv": 14.0}
    centers = np.radians(np.repeat(list(truth.values()), n))
    alpha = centers + 0.5 * rng.vonmises(0.0, 8.0, 4 * n)
    gamma = 0.5 * rng.vonmises(0.0, 20.0, 4 * n)
    p = regional_modal_angles(alpha, gamma, side, layers).to_degrees()
    for k, v in truth.items():
        assert abs(p[k] - v) <= 5.0


def test_regional_modes_empty_region():
    with pytest.raises(ValidationError, match="RV/endo"):
        regional_modal_angles(np.zeros(2), np.zeros(2), np.array([LV, LV]),
                              np.array([Layer.ENDO, Layer.EPI]))


def test_layers_partition(biv, biv_coords):
    side, layers = layers_from_phi(biv, biv_coords[0])
    assert set(np.unique(layers)) == {Layer.ENDO, Layer.MID, Layer.EPI}
    for s in (LV, RV):
        assert set(np.unique(layers[side == s])) == {Layer.ENDO, Layer.MID, Layer.EPI}
