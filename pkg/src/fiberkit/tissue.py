"""Pointwise constitutive evaluation: orthotropic exponential (Usyk-type)
strain energy, first Piola-Kirchhoff stress with directional active tension,
and Green-Lagrange strain invariants.

All functions broadcast over leading dimensions of ``(..., 3, 3)`` tensors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import DataError, ValidationError
from .frames import Triad


@dataclass(frozen=True)
class UsykParams:
    """Exponential orthotropic law; ``c`` and ``bulk`` in Pa."""

    b_f: float = 5.0
    b_s: float = 3.7
    b_n: float = 3.7
    b_fs: float = 2.6
    b_fn: float = 3.7
    b_sn: float = 3.7
    c: float = 2.0e3
    bulk: float = 5.0e4

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"{f.name} must be positive, got {v}")

    @property
    def B(self):
        """Symmetric coefficient matrix in the (f, s, n) basis."""
        return np.array([[self.b_f, self.b_fs, self.b_fn],
                         [self.b_fs, self.b_s, self.b_sn],
                         [self.b_fn, self.b_sn, self.b_n]])

    def as_dict(self):
        return asdict(self)


def _basis(triad):
    """Columns (f, s, n) as a ``(..., 3, 3)`` array."""
    if isinstance(triad, Triad):
        return triad.as_matrix()
    return np.asarray(triad, dtype=float)


def _det(F):
    J = np.linalg.det(F)
    if np.any(~(J > 0)):
        raise DataError("deformation gradient with J <= 0 (inverted element)")
    return J


def green_lagrange(F):
    F = np.asarray(F, dtype=float)
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - np.eye(3))


def _local_strain(F, Q):
    E = green_lagrange(F)
    return np.swapaxes(Q, -1, -2) @ E @ Q


def usyk_energy(F, triad, params=None):
    """Strain energy density ``W`` (Pa).

    ``W = c/2 (exp(Q) - 1) + bulk/2 (J - 1) ln J`` with
    ``Q = Σ_ij B_ij E_ij²`` over the Green-Lagrange strain in the fiber basis.

    Parameters
    ----------
    F : array_like, shape (..., 3, 3)
    triad : Triad or array_like, shape (..., 3, 3)
        Columns are ``f, s, n``.
    params : UsykParams, optional
    """
    p = UsykParams() if params is None else params
    F = np.asarray(F, dtype=float)
    J = _det(F)
    El = _local_strain(F, _basis(triad))
    Q = np.einsum("ij,...ij->...", p.B, El * El)
    return 0.5 * p.c * np.expm1(Q) + 0.5 * p.bulk * (J - 1.0) * np.log(J)


def passive_piola(F, triad, params=None):
    """Exact derivative ``∂W/∂F`` of :func:`usyk_energy`."""
    p = UsykParams() if params is None else params
    F = np.asarray(F, dtype=float)
    J = _det(F)
    Qm = _basis(triad)
    El = _local_strain(F, Qm)
    Q = np.einsum("ij,...ij->...", p.B, El * El)
    S_local = p.c * np.exp(Q)[..., None, None] * (p.B * El)
    S = Qm @ S_local @ np.swapaxes(Qm, -1, -2)
    Finv_T = np.swapaxes(np.linalg.inv(F), -1, -2)
    dvol = 0.5 * p.bulk * (J * np.log(J) + J - 1.0)
    return F @ S + dvol[..., None, None] * Finv_T


def active_piola(F, triad, Ta, sf=(1.0, 0.0, 0.0)):
    """``Ta Σ_i m_i (F a_i ⊗ a_i) / |F a_i|`` over ``a_i ∈ {f, s, n}``."""
    F = np.asarray(F, dtype=float)
    Ta = np.asarray(Ta, dtype=float)
    if np.any(Ta < 0):
        raise ValidationError("active tension must be >= 0")
    Qm = _basis(triad)
    P = np.zeros(np.broadcast_shapes(F.shape, Qm.shape))
    for i, m in enumerate(sf):
        if m == 0:
            continue
        a = Qm[..., :, i]
        Fa = np.einsum("...ij,...j->...i", F, a)
        P = P + m * np.einsum("...i,...j->...ij", Fa, a) / np.linalg.norm(Fa, axis=-1)[..., None, None]
    return Ta[..., None, None] * P


def piola_stress(F, triad, Ta=0.0, sf=(1.0, 0.0, 0.0), params=None):
    """First Piola-Kirchhoff stress: passive part plus directional active tension."""
    return passive_piola(F, triad, params) + active_piola(F, triad, Ta, sf)


def active_tension(G, a_xb=23.0e6):
    """``Ta = a_XB * G`` for a dimensionless drive ``G`` (Pa)."""
    G = np.asarray(G, dtype=float)
    if np.any(G < 0) or a_xb < 0:
        raise ValidationError("drive and crossbridge stiffness must be >= 0")
    return a_xb * G


def normalize_sf(raw, passthrough=False):
    """Stress factors scaled to unit Euclidean norm.

    With ``passthrough`` the values are returned unchanged (projection-derived
    factors whose norm is intentionally below one).

    Returns
    -------
    sf : ndarray, shape (3,)
    norm : float
        Norm of the input.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (3,) or np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValidationError("stress factors must be three non-negative numbers")
    norm = float(np.linalg.norm(raw))
    if norm == 0:
        raise ValidationError("stress factors cannot all be zero")
    return (raw.copy() if passthrough else raw / norm), norm


def green_lagrange_invariants(grad_d):
    """``(I1, I2, I3)`` of the Green-Lagrange strain for ``F = I + grad_d``.

    ``I1 = tr E``, ``I2 = ½((tr E)² - tr(E²))`` and ``I3 = det(FᵀF)``.
    """
    F = np.eye(3) + np.asarray(grad_d, dtype=float)
    _det(F)
    C = np.swapaxes(F, -1, -2) @ F
    E = 0.5 * (C - np.eye(3))
    trE = np.trace(E, axis1=-2, axis2=-1)
    trE2 = np.einsum("...ij,...ji->...", E, E)
    return trE, 0.5 * (trE**2 - trE2), np.linalg.det(C)
