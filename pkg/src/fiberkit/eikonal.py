"""Anisotropic eikonal activation on tetrahedral meshes.

The activation time ``T`` solves ``c0 * sqrt(∇T · D ∇T) = 1`` with ``T`` fixed
at stimulated nodes, i.e. travel time is measured in the Riemannian metric
``M = D^{-1} / c0²``. The discrete solution is computed with a vectorized
fast-iterative (label-correcting) scheme: every tet provides a local update
of each vertex from the opposite face by exact minimization of

    T(p) + sqrt((x - p)ᵀ M (x - p))

over points ``p`` of that face (interior, edges and vertices), with ``T``
linear on the face. Nodes are relaxed until no value decreases by more than
the tolerance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, SolverError, ValidationError
from .frames import Triad

_OPPOSITE = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


# ------------------------------------------------------------- tensors

def _rank1(v, F=None):
    v = np.asarray(v, dtype=float)
    if F is not None:
        v = np.einsum("...ij,...j->...i", F, v)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return np.einsum("...i,...j->...ij", v, v)


def conductivity_tensors(triad, sigma_f, sigma_s, sigma_n, F=None):
    """``D = σ_f Ff⊗Ff/|Ff|² + σ_s Fs⊗Fs/|Fs|² + σ_n Fn⊗Fn/|Fn|²`` pointwise."""
    for name, v in (("sigma_f", sigma_f), ("sigma_s", sigma_s), ("sigma_n", sigma_n)):
        if not (np.isfinite(v) and v > 0):
            raise ValidationError(f"{name} must be positive, got {v}")
    return sigma_f * _rank1(triad.f, F) + sigma_s * _rank1(triad.s, F) + sigma_n * _rank1(triad.n, F)


def build_conductivity(triad, sigma_f, sigma_s, sigma_n, mesh=None, F=None):
    """Per-cell conductivity tensors ``(m, 3, 3)`` in m²/s.

    Parameters
    ----------
    triad : Triad
        Node-attached (length ``n_nodes``, requires ``mesh``) or
        cell-attached (length ``n_tets``) fiber triads.
    F : array_like, optional
        Deformation gradient(s) broadcastable to the triad's leading shape.

    Node-attached tensors are averaged over the four vertices of each cell;
    averaging tensors instead of vectors makes the result independent of
    fiber sign.
    """
    D = conductivity_tensors(triad, sigma_f, sigma_s, sigma_n, F)
    if mesh is not None and len(D) == mesh.n_nodes and len(D) != mesh.n_tets:
        D = D[mesh.tets].mean(axis=1)
    elif mesh is not None and len(D) != mesh.n_tets:
        raise ValidationError("triad length matches neither the node nor the cell count")
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    lam = np.linalg.eigvalsh(D)
    if np.any(lam[..., 0] <= 0) or not np.all(np.isfinite(lam)):
        bad = np.flatnonzero(np.ravel(lam[..., 0] <= 0))
        raise ValidationError(f"conductivity tensor not SPD in {len(bad)} cell(s)")
    return D


def uniform_triad(n, f=(1.0, 0.0, 0.0), s=(0.0, 1.0, 0.0), nvec=(0.0, 0.0, 1.0)):
    """``n`` copies of a fixed orthonormal triad."""
    one = np.ones((n, 1))
    return Triad(one * np.asarray(f, float), one * np.asarray(s, float), one * np.asarray(nvec, float))


# ---------------------------------------------------------- stimulation

@dataclass(frozen=True)
class Stimulus:
    """Stimulation site: explicit nodes, or a sphere ``(center, radius)``.

    A sphere of radius 0 selects the node nearest to the center.
    """

    onset: float = 0.0
    center: tuple | None = None
    radius: float = 0.0
    nodes: tuple | None = None

    def __post_init__(self):
        if not (np.isfinite(self.onset) and self.onset >= 0):
            raise ValidationError("stimulus onset must be >= 0")
        if (self.center is None) == (self.nodes is None):
            raise ValidationError("give exactly one of center or nodes")
        if self.radius < 0:
            raise ValidationError("stimulus radius must be >= 0")

    @classmethod
    def parse(cls, text):
        """``"x,y,z,r,t"`` (meters, seconds)."""
        try:
            x, y, z, r, t = (float(v) for v in text.split(","))
        except ValueError:
            raise ValidationError(f"stimulus must be 'x,y,z,r,t', got {text!r}") from None
        return cls(onset=t, center=(x, y, z), radius=r)

    def resolve(self, mesh):
        if self.nodes is not None:
            idx = np.unique(np.asarray(self.nodes, dtype=np.int64))
            if idx.size == 0 or idx.min() < 0 or idx.max() >= mesh.n_nodes:
                raise ValidationError("stimulus node set empty or out of range")
            return idx
        d = np.linalg.norm(mesh.nodes - np.asarray(self.center, float), axis=1)
        idx = np.flatnonzero(d <= self.radius)
        if idx.size == 0:
            if self.radius > 0:
                raise ValidationError(f"stimulus sphere at {self.center} (r={self.radius}) contains no node")
            idx = np.array([int(np.argmin(d))])
        return idx


@dataclass
class ActivationMap:
    times: np.ndarray
    stimuli: list
    iterations: int = 0
    n_obtuse: int = 0
    residual: float = 0.0
    per_stimulus: list = field(default_factory=list, repr=False)


# ------------------------------------------------------------ local solver

def _segment_min(T0, T1, a, e, M):
    """min over μ∈[0,1] of T0 + μ(T1-T0) + |a - μ e|_M (vectorized)."""
    Me = np.einsum("kij,kj->ki", M, e)
    A = np.einsum("ki,ki->k", e, Me)
    b = np.einsum("ki,ki->k", a, Me)
    c = np.einsum("ki,kij,kj->k", a, M, a)
    d = T1 - T0
    q = 1.0 - d * d / A
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.sqrt(np.maximum(c - b * b / A, 0.0) / q)
        mu = (b - s * d) / A
    mu = np.where(q > 0, np.clip(mu, 0.0, 1.0), np.where(d > 0, 0.0, 1.0))
    r = a - mu[:, None] * e
    return T0 + mu * d + np.sqrt(np.maximum(np.einsum("ki,kij,kj->k", r, M, r), 0.0))


def _face_min(Tf, X, xv, M):
    """Exact minimum over the triangle face with vertex times ``Tf`` (k, 3)."""
    x0 = X[:, 0]
    e1 = X[:, 1] - x0
    e2 = X[:, 2] - x0
    a = xv - x0
    Me1 = np.einsum("kij,kj->ki", M, e1)
    Me2 = np.einsum("kij,kj->ki", M, e2)
    A11 = np.einsum("ki,ki->k", e1, Me1)
    A12 = np.einsum("ki,ki->k", e2, Me1)
    A22 = np.einsum("ki,ki->k", e2, Me2)
    b1 = np.einsum("ki,ki->k", a, Me1)
    b2 = np.einsum("ki,ki->k", a, Me2)
    c = np.einsum("ki,kij,kj->k", a, M, a)
    det = A11 * A22 - A12 * A12
    d1 = Tf[:, 1] - Tf[:, 0]
    d2 = Tf[:, 2] - Tf[:, 0]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        # A^{-1} applied to (d1, d2) and (b1, b2)
        id1 = (A22 * d1 - A12 * d2) / det
        id2 = (-A12 * d1 + A11 * d2) / det
        ib1 = (A22 * b1 - A12 * b2) / det
        ib2 = (-A12 * b1 + A11 * b2) / det
        q = 1.0 - (d1 * id1 + d2 * id2)
        s = np.sqrt(np.maximum(c - (b1 * ib1 + b2 * ib2), 0.0) / q)
        l1 = ib1 - s * id1
        l2 = ib2 - s * id2
        inside = (q > 0) & np.isfinite(s) & (l1 >= 0) & (l2 >= 0) & (l1 + l2 <= 1)
        interior = Tf[:, 0] + l1 * d1 + l2 * d2 + s
    best = np.where(inside, interior, np.inf)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        best = np.minimum(best, _segment_min(Tf[:, i], Tf[:, j], xv - X[:, i], X[:, j] - X[:, i], M))
    return best


def _local_updates(T, nodes, tets, M, tet_idx):
    """Candidate times for all four vertices of the selected tets."""
    k = len(tet_idx)
    tt = tets[tet_idx]  # (k, 4)
    vert = tt.reshape(-1)
    face = tt[:, _OPPOSITE].reshape(-1, 3)  # (4k, 3)
    Mk = np.repeat(M[tet_idx], 4, axis=0)
    Tf = T[face]
    usable = np.isfinite(Tf).any(axis=1)
    cand = np.full(4 * k, np.inf)
    if usable.any():
        sel = np.flatnonzero(usable)
        Tsel = Tf[sel]
        full = np.all(np.isfinite(Tsel), axis=1)
        res = np.full(len(sel), np.inf)
        if full.any():
            f = np.flatnonzero(full)
            res[f] = _face_min(Tsel[f], nodes[face[sel[f]]], nodes[vert[sel[f]]], Mk[sel[f]])
        part = np.flatnonzero(~full)
        if part.size:
            res[part] = _partial_face_min(Tsel[part], nodes[face[sel[part]]], nodes[vert[sel[part]]], Mk[sel[part]])
        cand[sel] = res
    return vert, cand


def _partial_face_min(Tf, X, xv, M):
    """Face minimum when some vertex times are still infinite."""
    best = np.full(len(Tf), np.inf)
    for i, j in ((0, 1), (0, 2), (1, 2)):
        both = np.isfinite(Tf[:, i]) & np.isfinite(Tf[:, j])
        if both.any():
            sel = np.flatnonzero(both)
            best[sel] = np.minimum(best[sel], _segment_min(Tf[sel, i], Tf[sel, j], xv[sel] - X[sel, i],
                                                           X[sel, j] - X[sel, i], M[sel]))
    for i in range(3):
        ok = np.isfinite(Tf[:, i])
        if ok.any():
            sel = np.flatnonzero(ok)
            r = xv[sel] - X[sel, i]
            best[sel] = np.minimum(best[sel], Tf[sel, i] + np.sqrt(np.einsum("ki,kij,kj->k", r, M[sel], r)))
    return best


def count_obtuse(mesh, M):
    """Number of tets with an obtuse dihedral angle in the metric ``M``."""
    L = np.linalg.cholesky(M)  # M = L Lᵀ, metric length |Lᵀ d|
    p = np.einsum("kji,kaj->kai", L, mesh.nodes[mesh.tets])
    normals = []
    for f in ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1)):
        nvec = np.cross(p[:, f[1]] - p[:, f[0]], p[:, f[2]] - p[:, f[0]])
        normals.append(nvec / np.linalg.norm(nvec, axis=1, keepdims=True))
    obtuse = np.zeros(mesh.n_tets, dtype=bool)
    for i in range(4):
        for j in range(i + 1, 4):
            # interior dihedral angle > 90°  <=>  outward normals at acute angle
            obtuse |= np.einsum("ki,ki->k", normals[i], normals[j]) > 1e-12
    return int(obtuse.sum())


def _point_source_init(mesh, M, seed, onset, radius):
    """Exact times ``onset + |x - x_s|_M`` near a point source.

    Piecewise-linear interpolation cannot represent the conical arrival-time
    field near a point source; seeding a small ball with the exact solution
    of the locally homogeneous problem removes that first-step error.
    """
    d = mesh.nodes - mesh.nodes[seed]
    near = np.flatnonzero(np.linalg.norm(d, axis=1) <= radius)
    cells = mesh.node_to_tets[seed].indices
    Ms = M[cells].mean(axis=0)
    return near, onset + np.sqrt(np.einsum("ki,ij,kj->k", d[near], Ms, d[near]))


def _solve_single(mesh, M, seeds, onset, tol, max_iter, init_radius=0.0):
    T = np.full(mesh.n_nodes, np.inf)
    changed = np.zeros(mesh.n_nodes, dtype=bool)
    if len(seeds) == 1 and init_radius > 0:
        near, vals = _point_source_init(mesh, M, seeds[0], onset, init_radius)
        T[near] = vals
        changed[near] = True
    T[seeds] = onset
    fixed = np.zeros(mesh.n_nodes, dtype=bool)
    fixed[seeds] = True
    n2t = mesh.node_to_tets
    changed[seeds] = True
    it, update = 0, np.inf
    while changed.any():
        it += 1
        if it > max_iter:
            raise SolverError(f"eikonal solver did not converge in {max_iter} sweeps "
                              f"({int(np.sum(changed))} active nodes)", residual=update)
        tet_idx = np.unique(n2t[np.flatnonzero(changed)].indices)
        vert, cand = _local_updates(T, mesh.nodes, mesh.tets, M, tet_idx)
        new = np.full(mesh.n_nodes, np.inf)
        np.minimum.at(new, vert, cand)
        new[fixed] = np.inf
        improved = new < T - tol
        update = float(np.max(T[improved] - new[improved], initial=0.0))
        # accept every decrease, but only propagate those above the tolerance
        T = np.minimum(T, new)
        changed = improved
    return T, it


def solve_eikonal(mesh, D, c0, stimuli, tol=1e-9, max_iter=100000, check_obtuse=True,
                  point_init_layers=10.0):
    """Activation times for one or more stimulation sites.

    Parameters
    ----------
    mesh : TetMesh
    D : ndarray, shape (m, 3, 3)
        Per-cell conductivity (m²/s).
    c0 : float
        Depolarization coefficient (s^-1/2).
    stimuli : sequence of Stimulus
    point_init_layers : float
        Single-node stimuli get exact locally-homogeneous times within this
        many mean edge lengths (0 disables).

    Returns
    -------
    ActivationMap

    Notes
    -----
    Each site is solved independently and the result is the pointwise
    minimum, which is the exact superposition rule of first-arrival times.
    """
    if not (np.isfinite(c0) and c0 > 0):
        raise ValidationError("c0 must be positive")
    stimuli = list(stimuli)
    if not stimuli:
        raise ValidationError("at least one stimulus is required")
    D = np.asarray(D, dtype=float)
    if D.shape != (mesh.n_tets, 3, 3):
        raise ValidationError(f"expected per-cell tensors of shape ({mesh.n_tets}, 3, 3)")
    M = np.linalg.inv(D) / c0**2
    n_obtuse = count_obtuse(mesh, M) if check_obtuse else 0
    init_radius = point_init_layers * mean_edge_length(mesh)
    times, sweeps = [], 0
    for st in stimuli:
        seeds = st.resolve(mesh)
        T, it = _solve_single(mesh, M, seeds, float(st.onset), tol, max_iter, init_radius)
        times.append(T)
        sweeps += it
    Tmin = np.min(times, axis=0)
    if not np.all(np.isfinite(Tmin)):
        raise DataError(f"{int(np.sum(~np.isfinite(Tmin)))} node(s) unreachable: mesh is not connected")
    return ActivationMap(Tmin, stimuli, sweeps, n_obtuse, per_stimulus=times)


def mean_edge_length(mesh):
    adj = mesh.node_adjacency.tocoo()
    return float(np.mean(np.linalg.norm(mesh.nodes[adj.row] - mesh.nodes[adj.col], axis=1)))


def residual_sweep(mesh, D, c0, amap):
    """Largest decrease a full local-update sweep would still produce.

    Zero (up to tolerance) for a converged solution.
    """
    M = np.linalg.inv(D) / c0**2
    worst = 0.0
    for T in amap.per_stimulus:
        vert, cand = _local_updates(T, mesh.nodes, mesh.tets, M, np.arange(mesh.n_tets))
        new = np.full(mesh.n_nodes, np.inf)
        np.minimum.at(new, vert, cand)
        fixed = T == T.min()
        dec = np.where(fixed, 0.0, T - new)
        worst = max(worst, float(np.max(dec)))
    return worst


def isochrones(times, spacing):
    """Isochrone level values covering the range of ``times``."""
    lo = np.floor(np.min(times) / spacing) * spacing
    return np.arange(lo, np.max(times) + 0.5 * spacing, spacing)


# ------------------------------------------------------------- calcium

@dataclass(frozen=True)
class CalciumTransient:
    """Sampled periodic calcium transient ``[Ca](t)``, ``t`` in [0, period)."""

    times: np.ndarray
    values: np.ndarray
    period: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValidationError("transient needs matching 1D time and value arrays")
        if not (self.period > 0):
            raise ValidationError("period must be positive")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("transient times must be strictly increasing")
        if np.any(v < 0):
            raise ValidationError("calcium concentrations must be >= 0")
        if t[0] < 0 or t[-1] > self.period + 1e-12:
            raise ValidationError("transient samples must lie in [0, period]")
        if np.isclose(t[-1], self.period) and np.isclose(t[0], 0.0):
            jump = abs(v[-1] - v[0])
            tolerance = max(np.max(np.abs(np.diff(v))), 1e-12)
            if jump > tolerance:
                raise ValidationError("transient is not continuous across the period seam")
            t, v = t[:-1], v[:-1]
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        return np.interp(np.mod(t, self.period), self.times, self.values, period=self.period)


def shift_calcium(activation_times, transient):
    """Per-node sampler ``Ca(x, t) = transient((t - T(x)) mod T_HB)``."""
    T = np.asarray(activation_times, dtype=float)

    def sample(t):
        return transient(np.mod(t - T, transient.period))

    return sample


def fluorescence_to_calcium(F, Kd=320.0, Fmin=3600.0, Fmax=11110.0):
    """``Kd (F - Fmin) / (Fmax - F)`` (units of ``Kd``)."""
    F = np.asarray(F, dtype=float)
    if not Fmin < Fmax:
        raise ValidationError("Fmin must be smaller than Fmax")
    if np.any(F >= Fmax):
        raise DataError("fluorescence at or above Fmax: dye saturated")
    low = F < Fmin
    if np.any(low):
        warnings.warn(f"{int(np.sum(low))} sample(s) below Fmin clamped to zero calcium", stacklevel=2)
    return Kd * (np.maximum(F, Fmin) - Fmin) / (Fmax - F)
