"""P1 finite elements on tetrahedra: assembly, Laplace-Dirichlet solves and
gradient recovery.

The stiffness and mass matrices assembled here are shared with the
Helmholtz filter in :mod:`fiberkit.fiberfield`.
"""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .exceptions import SolverError, ValidationError, WellPosednessError
from .geometry import parse_label

RTOL = 1e-12


def shape_gradients(mesh):
    """Constant gradients of the four barycentric shape functions per tet.

    Returns
    -------
    grads : ndarray, shape (m, 4, 3)
    """
    p = mesh.nodes[mesh.tets]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)  # rows = edges
    Jinv = np.linalg.inv(J)  # columns are gradients of lambda_1..3
    g123 = np.transpose(Jinv, (0, 2, 1))
    g0 = -g123.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g123], axis=1)


def _scatter(mesh, local):
    rows = np.repeat(mesh.tets, 4, axis=1).ravel()
    cols = np.tile(mesh.tets, (1, 4)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh):
    """Symmetric P1 stiffness matrix ``K_ij = ∫ ∇λ_i·∇λ_j``."""
    g = shape_gradients(mesh)
    local = np.einsum("tia,tja->tij", g, g) * mesh.volumes[:, None, None]
    return _scatter(mesh, local)


def assemble_mass(mesh, lumped=False):
    """Consistent P1 mass matrix, or its row-sum diagonal when ``lumped``."""
    if lumped:
        return sp.diags(mesh.node_volumes).tocsr()
    ref = (np.ones((4, 4)) + np.eye(4)) / 20.0
    return _scatter(mesh, mesh.volumes[:, None, None] * ref[None])


def solve_spd(A, b, x0=None, rtol=RTOL, maxiter=None, what="linear system"):
    """Jacobi-preconditioned conjugate gradients with an explicit residual check."""
    n = A.shape[0]
    if n == 0:
        return np.zeros(0)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError(f"{what}: non-positive diagonal, matrix is not SPD")
    M = LinearOperator((n, n), matvec=lambda r: r / d, dtype=float)
    maxiter = 10 * n if maxiter is None else maxiter
    x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(b - A @ x) / bnorm
    # CG monitors the preconditioned residual; accept small round-off slack
    if info != 0 or not np.isfinite(res) or res > max(100 * rtol, 1e-10):
        raise SolverError(f"{what}: conjugate gradients did not converge", residual=res)
    return x


def _normalize_bcs(bcs):
    if isinstance(bcs, Mapping):
        items = list(bcs.items())
    else:
        items = [tuple(item) for item in bcs]
    if not items:
        raise WellPosednessError("at least one Dirichlet condition is required")
    out, seen = [], set()
    for label, value in items:
        lab = parse_label(label)
        if lab in seen:
            raise ValidationError(f"Dirichlet label {lab.name} given more than once")
        seen.add(lab)
        out.append((lab, value))
    return out


def dirichlet_values(mesh, bcs):
    """Resolve a Dirichlet specification into ``(node indices, values)``.

    ``bcs`` is a mapping or sequence of ``(label, value)``. A value may be a
    constant, a callable of the ``(k, 3)`` coordinates, or an array over all
    mesh nodes. Later entries win on nodes shared by two surfaces.
    """
    vals = np.full(mesh.n_nodes, np.nan)
    for lab, value in _normalize_bcs(bcs):
        idx = mesh.nodes_on(lab)
        if len(idx) == 0:
            raise WellPosednessError(f"surface {lab.name} has no nodes on this mesh")
        if callable(value):
            v = np.asarray(value(mesh.nodes[idx]), dtype=float)
        elif np.ndim(value) == 0:
            v = float(value)
        else:
            v = np.asarray(value, dtype=float)[idx]
        vals[idx] = v
    fixed = np.flatnonzero(np.isfinite(vals))
    return fixed, vals[fixed]


def solve_laplace(mesh, bcs, rtol=RTOL, maxiter=None):
    """Solve ``Δu = 0`` with Dirichlet data on labeled surfaces.

    Unconstrained boundary parts carry homogeneous Neumann conditions.
    Constraints are eliminated from the system, which keeps it SPD.

    Parameters
    ----------
    mesh : TetMesh
    bcs : mapping or sequence of (label, value)
        See :func:`dirichlet_values`.

    Returns
    -------
    u : ndarray, shape (n_nodes,)
    """
    fixed, g = dirichlet_values(mesh, bcs)
    if len(fixed) == 0:
        raise WellPosednessError("Dirichlet set is empty; the Neumann problem is singular")
    K = assemble_stiffness(mesh)
    u = np.zeros(mesh.n_nodes)
    u[fixed] = g
    free = np.ones(mesh.n_nodes, dtype=bool)
    free[fixed] = False
    if free.any():
        Kff = K[free][:, free]
        rhs = -(K[free][:, fixed] @ g)
        u[free] = solve_spd(Kff.tocsr(), rhs, rtol=rtol, maxiter=maxiter, what="Laplace problem")
    return u


def cell_gradients(mesh, u):
    """Per-tet constant gradient of the P1 interpolant of ``u``.

    ``u`` may carry trailing dimensions; the result has shape ``(m, 3)`` or
    ``(m, 3, ...)``.
    """
    g = shape_gradients(mesh)
    u = np.asarray(u, dtype=float)
    return np.einsum("tia,ti...->ta...", g, u[mesh.tets])


def cells_to_nodes(mesh, cell_values):
    """Volume-weighted average of cell values onto the nodes."""
    cell_values = np.asarray(cell_values, dtype=float)
    flat = cell_values.reshape(mesh.n_tets, -1) * mesh.volumes[:, None]
    acc = mesh.node_to_tets.astype(float) @ flat
    wsum = mesh.node_to_tets.astype(float) @ mesh.volumes
    return (acc / wsum[:, None]).reshape((mesh.n_nodes,) + cell_values.shape[1:])


def recover_gradient(mesh, u):
    """Nodal gradient from volume-weighted averaging of cell gradients."""
    return cells_to_nodes(mesh, cell_gradients(mesh, u))
