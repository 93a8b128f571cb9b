"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ValidationError
from .geometry import TetMesh


def check_mesh(mesh):
    if not isinstance(mesh, TetMesh):
        raise ValidationError(f"expected a TetMesh, got {type(mesh).__name__}")
    return mesh


def check_nodal(X, mesh, n_columns=None, name="X"):
    """2-D float array with one row per mesh node."""
    X = check_array(X, dtype=np.float64, ensure_2d=False, input_name=name)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != mesh.n_nodes:
        raise ValidationError(f"{name} has {X.shape[0]} rows, mesh has {mesh.n_nodes} nodes")
    if n_columns is not None and X.shape[1] != n_columns:
        raise ValidationError(f"{name} must have {n_columns} columns, got {X.shape[1]}")
    return X


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be finite and >= 0, got {value}")
    return value
