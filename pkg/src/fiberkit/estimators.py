"""scikit-learn style wrappers around the functional API.

The mesh plays the role of the training data: ``fit`` assembles and factors
whatever depends only on geometry, and ``transform``/``predict`` apply it to
fields. Hyperparameters live in ``__init__`` so ``get_params``/``set_params``
and ``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import circ0d
from ._validation import check_mesh, check_nodal, check_nonnegative
from .fiberfield import HelmholtzOperator, decompose, smooth_angles
from .laplace import RTOL
from .ldrbm import PrescribedAngles, ldrbm_fibers, solve_coordinates


class HelmholtzFilter(TransformerMixin, BaseEstimator):
    """Screened-Poisson smoothing of nodal fields.

    Parameters
    ----------
    ell : float
        Filter length in mesh units (meters); 0 is the identity.
    rtol : float
        Relative residual of the CG solves.

    Examples
    --------
    >>> filt = HelmholtzFilter(ell=2.5e-4).fit(mesh)        # doctest: +SKIP
    >>> smooth = filt.transform(values)                      # doctest: +SKIP
    """

    def __init__(self, ell=2.5e-4, rtol=RTOL):
        self.ell = ell
        self.rtol = rtol

    def fit(self, mesh, y=None):
        check_mesh(mesh)
        self.operator_ = HelmholtzOperator(mesh, check_nonnegative(self.ell, "ell"), self.rtol)
        self.n_features_in_ = mesh.n_nodes
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X = np.asarray(X, dtype=float)
        squeeze = X.ndim == 1
        X = check_nodal(X, self.operator_.mesh)
        out = self.operator_(X)
        return out[:, 0] if squeeze else out

    def fit_transform(self, X, y=None, **fit_params):
        raise TypeError("fit on a mesh, then transform nodal values")


class AngleFieldSmoother(TransformerMixin, BaseEstimator):
    """Helmholtz smoothing of ``(alpha, gamma)`` direction fields.

    ``transform`` takes an ``(n_nodes, 2)`` array of radians and returns the
    smoothed (macroscopic) angles; :meth:`disarray` returns the residuals.
    """

    def __init__(self, ell=2.5e-4, rtol=RTOL):
        self.ell = ell
        self.rtol = rtol

    def fit(self, mesh, y=None):
        check_mesh(mesh)
        self.operator_ = HelmholtzOperator(mesh, check_nonnegative(self.ell, "ell"), self.rtol)
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X = check_nodal(X, self.operator_.mesh, 2)
        a, g, _ = smooth_angles(X[:, 0], X[:, 1], self.ell, self.operator_.mesh, self.operator_)
        return np.column_stack([a, g])

    def disarray(self, X):
        """``(eps_alpha, eps_gamma)`` columns."""
        check_is_fitted(self, "operator_")
        X = check_nodal(X, self.operator_.mesh, 2)
        _, eps = decompose(X[:, 0], X[:, 1], self.ell, self.operator_.mesh, self.operator_)
        return np.column_stack(eps)

    def fit_transform(self, X, y=None, **fit_params):
        raise TypeError("fit on a mesh, then transform nodal angles")


class RuleBasedFibers(TransformerMixin, BaseEstimator):
    """Laplace-Dirichlet rule-based fibers on a labeled biventricle.

    Angles are given in degrees. After ``fit(mesh)`` the attributes
    ``phi_``, ``psi_``, ``frame_``, ``triad_`` and ``angles_`` hold the
    potentials, local frame, fiber triad and per-node ``(alpha, gamma, beta)``.
    ``transform(mesh)`` returns the fitted triad as an ``(n_nodes, 9)`` array
    ``[f s n]``; its argument is only checked for a matching node count.
    """

    def __init__(self, alpha_endo_lv=-76.0, alpha_epi_lv=22.0, alpha_endo_rv=5.0,
                 alpha_epi_rv=14.0, gamma_endo_lv=0.0, gamma_epi_lv=0.0,
                 gamma_endo_rv=0.0, gamma_epi_rv=0.0):
        self.alpha_endo_lv = alpha_endo_lv
        self.alpha_epi_lv = alpha_epi_lv
        self.alpha_endo_rv = alpha_endo_rv
        self.alpha_epi_rv = alpha_epi_rv
        self.gamma_endo_lv = gamma_endo_lv
        self.gamma_epi_lv = gamma_epi_lv
        self.gamma_endo_rv = gamma_endo_rv
        self.gamma_epi_rv = gamma_epi_rv

    def prescribed(self):
        return PrescribedAngles.from_degrees(**self.get_params())

    def fit(self, mesh, y=None):
        check_mesh(mesh)
        self.phi_, self.psi_ = solve_coordinates(mesh)
        self.triad_, self.angles_, self.frame_ = ldrbm_fibers(mesh, self.phi_, self.psi_,
                                                             self.prescribed())
        return self

    def transform(self, X=None):
        check_is_fitted(self, "triad_")
        if X is not None and getattr(X, "n_nodes", len(self.phi_)) != len(self.phi_):
            raise ValueError("mesh differs from the one the estimator was fitted on")
        return np.hstack([self.triad_.f, self.triad_.s, self.triad_.n])

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).transform(X)


class PVLoopEmulator(RegressorMixin, BaseEstimator):
    """Relaxed/contracted PV emulator as a regressor.

    ``X`` has columns ``(t, V)`` and ``y`` is the pressure. ``predict``
    evaluates ``(1 - phi(t)) P_ED(V) + phi(t) P_ES(V)``.
    """

    def __init__(self, period=circ0d.T_HB, sep_tol=1e-6):
        self.period = period
        self.sep_tol = sep_tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 2:
            raise ValueError("X must have the two columns (t, V)")
        self.fit_ = circ0d.emulator_fit(X[:, 0], X[:, 1], y, self.period, sep_tol=self.sep_tol)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        X = check_array(X, dtype=np.float64)
        return circ0d.emulator_pressure(X[:, 1], X[:, 0], self.fit_)
