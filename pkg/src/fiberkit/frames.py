"""Myocardial reference frames and the fiber <-> rotation-angle maps.

Conventions
-----------
The local frame is built from the gradients of the transmural (``phi``) and
apico-basal (``psi``) coordinates::

    e_t = ∇phi / |∇phi|
    e_n = Gram-Schmidt of ∇psi/|∇psi| against e_t
    e_l = e_n × e_t

so ``(e_l, e_n, e_t)`` is right-handed (``det[e_l e_t e_n] = -1``).

A fiber direction is parametrized as::

    f = cos(a)cos(g) e_l + sin(a)cos(g) e_n + sin(g) e_t

with helix angle ``a`` and intrusion angle ``g``. The sheet/normal pair is
obtained from ``e_t' = normalize(e_t - sin(g) f)`` and ``e_n' = e_t' × f`` by a
rotation of angle ``b`` about ``f``::

    s = cos(b) e_t' + sin(b) e_n'
    n = -sin(b) e_t' + cos(b) e_n'

:func:`fibers_to_angles` is the exact inverse of :func:`angles_to_fibers` on
``a ∈ (-π, π]``, ``|g| < π/2``, ``b ∈ (-π, π]``. Because a fiber is a line,
``(a, g, b)`` and ``(a ± π, -g, -b)`` describe the same triad up to the sign of
``f`` and ``n``; :func:`canonicalize` maps onto the representative with
``|a| <= π/2``.

All functions broadcast over leading dimensions of ``(..., 3)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .exceptions import DegeneracyError
from .laplace import recover_gradient

EPS_DEG = 1e-8


@dataclass(frozen=True)
class Frame:
    """Local orthonormal frame; each field has shape ``(..., 3)``."""

    e_l: np.ndarray
    e_t: np.ndarray
    e_n: np.ndarray
    n_repaired: int = 0

    def as_matrix(self):
        """Columns ``(e_l, e_t, e_n)`` stacked into ``(..., 3, 3)``."""
        return np.stack([self.e_l, self.e_t, self.e_n], axis=-1)


@dataclass(frozen=True)
class Triad:
    """Fiber, sheet and sheet-normal directions; each of shape ``(..., 3)``."""

    f: np.ndarray
    s: np.ndarray
    n: np.ndarray

    def as_matrix(self):
        return np.stack([self.f, self.s, self.n], axis=-1)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _norm(a):
    return np.linalg.norm(a, axis=-1)


def _bad_indices(mask):
    return np.flatnonzero(np.ravel(mask)).tolist()


def build_frame(grad_phi, grad_psi, eps=EPS_DEG):
    """Orthonormal frame from the transmural and apico-basal gradients.

    Parameters
    ----------
    grad_phi, grad_psi : array_like, shape (..., 3)
    eps : float
        Degeneracy threshold on ``|∇phi|`` and on the part of the normalized
        ``∇psi`` orthogonal to ``e_t``.

    Returns
    -------
    Frame

    Raises
    ------
    DegeneracyError
        Vanishing ``∇phi`` or ``∇psi`` (anti)parallel to it; carries the
        flat indices of the offending entries.
    """
    gphi = np.asarray(grad_phi, dtype=float)
    gpsi = np.asarray(grad_psi, dtype=float)
    nphi = _norm(gphi)
    npsi = _norm(gpsi)
    bad = (nphi <= eps) | (npsi <= eps)
    safe_phi = np.where(bad, 1.0, nphi)[..., None]
    safe_psi = np.where(bad, 1.0, npsi)[..., None]
    e_t = gphi / safe_phi
    u = gpsi / safe_psi
    w = u - _dot(u, e_t)[..., None] * e_t
    nw = _norm(w)
    bad = bad | (nw <= eps)
    if np.any(bad):
        raise DegeneracyError("degenerate frame: vanishing or parallel gradients", _bad_indices(bad))
    e_n = w / nw[..., None]
    e_l = np.cross(e_n, e_t)
    return Frame(e_l, e_t, e_n)


def angles_to_fibers(alpha, gamma, beta, frame, eps=EPS_DEG):
    """Fiber triad from rotation angles in the local frame.

    Parameters
    ----------
    alpha, gamma, beta : array_like
        Radians, broadcast against the frame's leading shape.
    frame : Frame

    Returns
    -------
    Triad
    """
    alpha = np.asarray(alpha, dtype=float)[..., None]
    gamma = np.asarray(gamma, dtype=float)[..., None]
    beta = np.asarray(beta, dtype=float)[..., None]
    cg = np.cos(gamma)
    f = np.cos(alpha) * cg * frame.e_l + np.sin(alpha) * cg * frame.e_n + np.sin(gamma) * frame.e_t
    f = f / _norm(f)[..., None]
    w = frame.e_t - np.sin(gamma) * f
    nw = _norm(w)
    bad = nw <= eps
    if np.any(bad):
        raise DegeneracyError("intrusion angle at ±90°: sheet direction undefined", _bad_indices(bad))
    et_p = w / nw[..., None]
    en_p = np.cross(et_p, f)
    cb, sb = np.cos(beta), np.sin(beta)
    s = cb * et_p + sb * en_p
    n = -sb * et_p + cb * en_p
    return Triad(f, s, n)


def fibers_to_angles(triad, frame, eps=EPS_DEG):
    """Rotation angles ``(alpha, gamma, beta)`` of a triad in a frame.

    Accepts a :class:`Triad` or a bare fiber array (``beta`` is then zero).

    Raises
    ------
    DegeneracyError
        Fiber parallel to ``e_t`` (helix angle undefined).
    """
    if isinstance(triad, Triad):
        f, s = np.asarray(triad.f, float), np.asarray(triad.s, float)
    else:
        f, s = np.asarray(triad, float), None
    f = f / _norm(f)[..., None]
    e_l, e_t, e_n = frame.e_l, frame.e_t, frame.e_n
    ft = _dot(f, e_t)
    f_ln = f - ft[..., None] * e_t
    nln = _norm(f_ln)
    bad = nln <= eps
    if np.any(bad):
        raise DegeneracyError("fiber parallel to the transmural direction: helix angle undefined",
                              _bad_indices(bad))
    f_hat = f_ln / nln[..., None]
    alpha = np.arctan2(_dot(e_n, f_hat), _dot(e_l, f_hat))
    gamma = np.arctan2(ft, _dot(f, f_hat))
    if s is None:
        beta = np.zeros_like(alpha)
    else:
        w = e_t - ft[..., None] * f
        et_p = w / _norm(w)[..., None]
        en_p = np.cross(et_p, f)
        beta = np.arctan2(_dot(s, en_p), _dot(s, et_p))
    return wrap_pi(alpha), gamma, wrap_pi(beta)


def wrap_pi(a):
    """Wrap to ``(-π, π]``."""
    a = np.asarray(a, dtype=float)
    out = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return out


def wrap_half_pi(a):
    """Wrap direction angles (period π) to ``(-π/2, π/2]``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * np.pi - np.mod(0.5 * np.pi - a, np.pi)


def canonicalize(alpha, gamma, beta=None):
    """Representative of the fiber line with ``|alpha| <= π/2``.

    ``(alpha, gamma, beta) -> (alpha ∓ π, -gamma, -beta)`` where
    ``|alpha| > π/2``; this is the sign inversion of the intrusion angle used
    when angles are reported for the flipped fiber orientation.
    """
    alpha = wrap_pi(np.asarray(alpha, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    flip = np.abs(alpha) > 0.5 * np.pi
    a = np.where(flip, wrap_half_pi(alpha), alpha)
    g = np.where(flip, -gamma, gamma)
    if beta is None:
        return a, g
    beta = np.asarray(beta, dtype=float)
    return a, g, np.where(flip, wrap_pi(-beta), beta)


def frame_field(mesh, phi, psi, max_degenerate_fraction=0.01, eps=EPS_DEG):
    """Per-node frames from nodal ``phi`` and ``psi``.

    Nodes where :func:`build_frame` is degenerate are filled with the
    volume-weighted mean of neighboring valid frames (repeated outward for
    patches), then re-orthonormalized.

    Returns
    -------
    Frame
        With ``n_repaired`` set to the number of filled nodes.

    Raises
    ------
    DegeneracyError
        A connected degenerate patch larger than
        ``max_degenerate_fraction * n_nodes`` nodes.
    """
    gphi = recover_gradient(mesh, phi)
    gpsi = recover_gradient(mesh, psi)
    try:
        return build_frame(gphi, gpsi, eps)
    except DegeneracyError as exc:
        bad_idx = np.asarray(exc.indices)
    bad = np.zeros(mesh.n_nodes, dtype=bool)
    bad[bad_idx] = True
    adj = mesh.node_adjacency
    sub = adj[bad][:, bad]
    _, comp = connected_components(sub, directed=False)
    largest = np.bincount(comp).max()
    if largest > max_degenerate_fraction * mesh.n_nodes:
        raise DegeneracyError(
            f"degenerate patch of {largest} nodes exceeds {max_degenerate_fraction:.1%} of the mesh "
            f"({max_degenerate_fraction * mesh.n_nodes:.0f} of {mesh.n_nodes} nodes); refine the mesh",
            bad_idx)
    e_t = np.zeros((mesh.n_nodes, 3))
    e_n = np.zeros((mesh.n_nodes, 3))
    good = ~bad
    fr = build_frame(gphi[good], gpsi[good], eps)
    e_t[good], e_n[good] = fr.e_t, fr.e_n
    vol = mesh.node_volumes
    while bad.any():
        weights = adj[bad][:, good] @ sp.diags(vol[good])
        wsum = np.asarray(weights.sum(axis=1)).ravel()
        ready = wsum > 0
        if not ready.any():
            raise DegeneracyError("degenerate nodes not connected to any valid frame",
                                  np.flatnonzero(bad))
        idx = np.flatnonzero(bad)[ready]
        wr = weights[ready]
        t = wr @ e_t[good]
        n = wr @ e_n[good]
        t /= _norm(t)[:, None]
        n = n - _dot(n, t)[:, None] * t
        n /= _norm(n)[:, None]
        e_t[idx], e_n[idx] = t, n
        bad[idx] = False
        good[idx] = True
    return Frame(np.cross(e_n, e_t), e_t, e_n, n_repaired=len(bad_idx))
