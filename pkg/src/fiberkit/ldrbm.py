"""Laplace-Dirichlet rule-based fibers.

Endocardial and epicardial helix/intrusion angles are prescribed per
ventricle and interpolated linearly in a normalized transmural coordinate
``w`` (1 at the endocardium, 0 at the epicardium) obtained from the
transmural potential ``phi`` solved with ``phi = 0`` on the epicardium,
``-1`` on the RV endocardium and ``2`` on the LV endocardium.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import DataError, ValidationError
from .frames import angles_to_fibers, frame_field
from .geometry import Layer, RegionLabel, layer_labels
from .laplace import solve_laplace

TRANSMURAL_BCS = (("EPI", 0.0), ("ENDO_RV", -1.0), ("ENDO_LV", 2.0))
APICOBASAL_BCS = (("APEX", 0.0), ("BASE", 1.0))


@dataclass(frozen=True)
class PrescribedAngles:
    """Endocardial/epicardial angles per ventricle, in radians."""

    alpha_endo_lv: float = np.radians(-76.0)
    alpha_epi_lv: float = np.radians(22.0)
    alpha_endo_rv: float = np.radians(5.0)
    alpha_epi_rv: float = np.radians(14.0)
    gamma_endo_lv: float = 0.0
    gamma_epi_lv: float = 0.0
    gamma_endo_rv: float = 0.0
    gamma_epi_rv: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v) or not (-np.pi < v <= np.pi):
                raise ValidationError(f"{f.name} = {v} outside (-pi, pi]")
            if f.name.startswith("gamma") and not (-np.pi / 2 < v <= np.pi / 2):
                raise ValidationError(f"{f.name} = {v} outside (-pi/2, pi/2]")

    @classmethod
    def from_degrees(cls, **kwargs):
        return cls(**{k: np.radians(float(v)) for k, v in kwargs.items()})

    def to_degrees(self):
        return {k: float(np.degrees(v)) for k, v in asdict(self).items()}


def ventricle_side(phi, node_regions=None):
    """Per-node ventricle used for the angle rules.

    Nodes with ``phi < 0`` lie between the epicardium and the RV endocardium;
    nodes belonging exclusively to RV tets are also assigned to the RV.
    """
    phi = np.asarray(phi, dtype=float)
    side = np.where(phi < 0, int(RegionLabel.RV), int(RegionLabel.LV))
    if node_regions is not None:
        side[np.asarray(node_regions) == RegionLabel.RV] = RegionLabel.RV
    return side


def transmural_coordinate(phi, node_regions=None, tol=1e-8):
    """Normalized transmural coordinate ``w`` in [0, 1].

    ``w = -phi`` on the RV side and ``w = phi / 2`` on the LV side.

    Raises
    ------
    DataError
        ``phi`` outside ``[-1 - tol, 2 + tol]``.
    """
    phi = np.asarray(phi, dtype=float)
    out = (phi < -1.0 - tol) | (phi > 2.0 + tol) | ~np.isfinite(phi)
    if np.any(out):
        i = int(np.flatnonzero(out)[0])
        raise DataError(f"transmural potential outside [-1, 2] at node {i} (value {phi[i]!r})")
    side = ventricle_side(phi, node_regions)
    w = np.where(side == RegionLabel.RV, -phi, 0.5 * phi)
    return np.clip(w, 0.0, 1.0)


def ldrbm_angles(w, side, prescribed):
    """Helix/intrusion angles linear in ``w`` per ventricle.

    ``angle = angle_endo * w + angle_epi * (1 - w)``; ``beta`` is zero.

    Returns
    -------
    alpha, gamma, beta : ndarray
    """
    w = np.asarray(w, dtype=float)
    rv = np.asarray(side) == RegionLabel.RV
    p = prescribed

    def mix(endo_lv, epi_lv, endo_rv, epi_rv):
        endo = np.where(rv, endo_rv, endo_lv)
        epi = np.where(rv, epi_rv, epi_lv)
        return endo * w + epi * (1.0 - w)

    alpha = mix(p.alpha_endo_lv, p.alpha_epi_lv, p.alpha_endo_rv, p.alpha_epi_rv)
    gamma = mix(p.gamma_endo_lv, p.gamma_epi_lv, p.gamma_endo_rv, p.gamma_epi_rv)
    return alpha, gamma, np.zeros_like(w)


def solve_coordinates(mesh):
    """Transmural ``phi`` and apico-basal ``psi`` potentials on a biventricle."""
    phi = solve_laplace(mesh, TRANSMURAL_BCS)
    psi = solve_laplace(mesh, APICOBASAL_BCS)
    return phi, psi


def ldrbm_fibers(mesh, phi, psi, prescribed=None, frame=None):
    """Rule-based fiber triads.

    Returns
    -------
    triad : Triad
    angles : tuple of ndarray
        ``(alpha, gamma, beta)`` assigned per node.
    frame : Frame
    """
    prescribed = PrescribedAngles() if prescribed is None else prescribed
    if frame is None:
        frame = frame_field(mesh, phi, psi)
    regions = mesh.node_regions()
    w = transmural_coordinate(phi, regions)
    side = ventricle_side(phi, regions)
    alpha, gamma, beta = ldrbm_angles(w, side, prescribed)
    return angles_to_fibers(alpha, gamma, beta, frame), (alpha, gamma, beta), frame


def modal_angle(values, bin_width_deg=5.0):
    """Mode of direction data (period 180°) in degrees.

    Bins have width ``bin_width_deg`` and are centered on its multiples in
    (-90°, 90°]; ties go to the smaller center.
    """
    nbins = 180.0 / bin_width_deg
    if bin_width_deg <= 0 or abs(nbins - round(nbins)) > 1e-9:
        raise ValidationError("bin width must divide 180 degrees")
    nbins = int(round(nbins))
    deg = np.degrees(np.asarray(values, dtype=float)).ravel()
    if deg.size == 0:
        raise ValidationError("cannot take the mode of an empty set")
    k = np.floor(deg / bin_width_deg + 0.5).astype(np.int64) % nbins
    centers = np.arange(nbins) * bin_width_deg
    centers = np.where(centers > 90.0, centers - 180.0, centers)
    counts = np.bincount(k, minlength=nbins)
    best = np.flatnonzero(counts == counts.max())
    return float(centers[best].min())


def regional_modal_angles(alpha, gamma, side, layers, bin_width_deg=5.0):
    """Prescription from modal values in the endo/epi layer of each ventricle.

    Parameters
    ----------
    alpha, gamma : array_like
        Per-node angles in radians.
    side : array_like
        Per-node :class:`RegionLabel`.
    layers : array_like
        Per-node :class:`Layer` (see :func:`fiberkit.geometry.layer_labels`).
    """
    alpha, gamma = np.asarray(alpha), np.asarray(gamma)
    side, layers = np.asarray(side), np.asarray(layers)
    empty = []
    out = {}
    for vname, vlab in (("lv", RegionLabel.LV), ("rv", RegionLabel.RV)):
        for lname, llab in (("endo", Layer.ENDO), ("epi", Layer.EPI)):
            sel = (side == vlab) & (layers == llab)
            if not sel.any():
                empty.append(f"{vname.upper()}/{lname}")
                continue
            out[f"alpha_{lname}_{vname}"] = modal_angle(alpha[sel], bin_width_deg)
            out[f"gamma_{lname}_{vname}"] = modal_angle(gamma[sel], bin_width_deg)
    if empty:
        raise ValidationError(f"empty sub-region(s): {', '.join(empty)}")
    return PrescribedAngles.from_degrees(**out)


def layers_from_phi(mesh, phi, endo_threshold=2.0 / 3.0, epi_threshold=1.0 / 3.0):
    """Per-node ventricle and transmural layer labels."""
    regions = mesh.node_regions()
    w = transmural_coordinate(phi, regions)
    return ventricle_side(phi, regions), layer_labels(w, endo_threshold, epi_threshold)
