"""Helmholtz-filter decomposition of angle fields into macroscopic
architecture and microscopic disarray, synthetic disarray and statistics.

Angles are treated as direction data (period π): they are embedded as
``(sin 2θ, cos 2θ)`` before any averaging so that opposite fiber directions
coincide.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import DegeneracyError, SolverError, ValidationError
from .frames import Triad, angles_to_fibers, canonicalize, fibers_to_angles, wrap_half_pi
from .laplace import RTOL, assemble_mass, assemble_stiffness, solve_spd

UNDEFINED_TOL = 1e-12


# ----------------------------------------------------------- embedding

def embed(theta):
    """``(sin 2θ, cos 2θ)`` stacked along the last axis."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.sin(2.0 * theta), np.cos(2.0 * theta)], axis=-1)


def unembed(eta, tol=UNDEFINED_TOL):
    """Inverse of :func:`embed`: ``½ atan2(η_sin, η_cos)`` in (-π/2, π/2].

    Raises
    ------
    DegeneracyError
        Where both components are below ``tol`` in magnitude.
    """
    eta = np.asarray(eta, dtype=float)
    bad = (np.abs(eta[..., 0]) < tol) & (np.abs(eta[..., 1]) < tol)
    if np.any(bad):
        raise DegeneracyError("angle undefined: fully incoherent neighborhood",
                              np.flatnonzero(bad.ravel()).tolist())
    return wrap_half_pi(0.5 * np.arctan2(eta[..., 0], eta[..., 1]))


# -------------------------------------------------------------- filter

class HelmholtzOperator:
    """Reusable P1 solver for ``(M_L + ℓ² K) u = M_L f``.

    ``M_L`` is the row-lumped mass matrix and ``K`` the Laplace stiffness
    matrix with natural (zero-flux) boundary conditions. On meshes whose
    stiffness is an M-matrix the filter is a convex averaging: constants are
    reproduced and the output range lies within the input range.
    """

    def __init__(self, mesh, ell, rtol=RTOL):
        ell = float(ell)
        if not np.isfinite(ell) or ell < 0:
            raise ValidationError(f"regularization radius must be finite and >= 0, got {ell}")
        self.mesh = mesh
        self.ell = ell
        self.rtol = rtol
        self._mass = mesh.node_volumes
        self._A = None
        if ell > 0:
            self._A = (assemble_mass(mesh, lumped=True) + ell**2 * assemble_stiffness(mesh)).tocsr()

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.mesh.n_nodes:
            raise ValidationError(f"expected {self.mesh.n_nodes} nodal values, got {values.shape[0]}")
        if self._A is None:
            return values.copy()
        flat = values.reshape(self.mesh.n_nodes, -1)
        out = np.empty_like(flat)
        for j in range(flat.shape[1]):
            rhs = self._mass * flat[:, j]
            out[:, j] = solve_spd(self._A, rhs, x0=flat[:, j].copy(), rtol=self.rtol,
                                  what=f"Helmholtz filter (ell={self.ell:g})")
        return out.reshape(values.shape)


def helmholtz_filter(values, ell, mesh):
    """Solve ``-ℓ²Δu + u = f`` (zero-flux boundary) for nodal ``f``."""
    return HelmholtzOperator(mesh, ell)(values)


def smooth_angles(alpha, gamma, ell, mesh, operator=None):
    """Smooth helix and intrusion angles through the 2θ embedding.

    The input is first mapped to the representative with ``|alpha| <= π/2``
    (:func:`fiberkit.frames.canonicalize`) so that the intrusion angle has a
    consistent sign for a given fiber line.

    Returns
    -------
    alpha_s, gamma_s, beta_s : ndarray
        Smoothed angles in (-π/2, π/2]; ``beta_s`` is zero.
    """
    op = HelmholtzOperator(mesh, ell) if operator is None else operator
    alpha, gamma = canonicalize(alpha, gamma)
    if op.ell == 0:
        a = wrap_half_pi(alpha)
        return a, wrap_half_pi(gamma), np.zeros_like(a)
    eta = np.concatenate([embed(alpha), embed(gamma)], axis=-1)
    eta_s = op(eta)
    a = unembed(eta_s[:, :2])
    g = unembed(eta_s[:, 2:])
    return a, g, np.zeros_like(a)


def decompose(alpha, gamma, ell, mesh, operator=None):
    """Split angles into the smoothed field and a wrapped disarray residual.

    ``wrap_half_pi(macro + eps)`` equals ``wrap_half_pi`` of the canonical
    input (see :func:`smooth_angles`).

    Returns
    -------
    macro : tuple (alpha_s, gamma_s)
    eps : tuple (eps_alpha, eps_gamma), each in (-π/2, π/2]
    """
    a_s, g_s, _ = smooth_angles(alpha, gamma, ell, mesh, operator)
    alpha, gamma = canonicalize(alpha, gamma)
    eps_a = wrap_half_pi(np.asarray(alpha) - a_s)
    eps_g = wrap_half_pi(np.asarray(gamma) - g_s)
    if ell == 0:
        # identity filter: residuals are zero up to the wrap of the input
        eps_a = np.zeros_like(eps_a)
        eps_g = np.zeros_like(eps_g)
    return (a_s, g_s), (eps_a, eps_g)


# -------------------------------------------------- circular statistics

def resultant_length(theta, weights=None):
    """Mean resultant length of direction data (2θ embedding)."""
    z = np.exp(2j * np.asarray(theta, dtype=float))
    w = None if weights is None else np.asarray(weights, dtype=float)
    return float(np.abs(np.average(z, weights=w)))


def circular_mean(theta, weights=None):
    """Circular mean of direction data in (-π/2, π/2]."""
    z = np.average(np.exp(2j * np.asarray(theta, dtype=float)),
                   weights=None if weights is None else np.asarray(weights, dtype=float))
    return float(wrap_half_pi(0.5 * np.angle(z)))


def circular_std(theta, weights=None):
    """Circular standard deviation ``½ √(-2 ln R)`` of direction data (radians)."""
    R = resultant_length(theta, weights)
    if R <= 0:
        return float("inf")
    return 0.5 * float(np.sqrt(abs(min(2.0 * np.log(min(R, 1.0)), 0.0))))


def vm_resultant(kappa):
    """Mean resultant length ``I1(κ)/I0(κ)`` of a von Mises distribution."""
    kappa = np.asarray(kappa, dtype=float)
    return special.i1e(kappa) / special.i0e(kappa)


def kappa_for_std(std):
    """Concentration κ such that ``ε = X/2``, ``X ~ VM(0, κ)`` has circular std ``std``.

    Parameters
    ----------
    std : float
        Target circular standard deviation of ``ε`` in radians.
    """
    std = float(std)
    if std <= 0:
        return float("inf")
    target = np.exp(-2.0 * std**2)  # resultant of 2ε
    return float(optimize.brentq(lambda k: vm_resultant(k) - target, 1e-10, 1e8, xtol=1e-14, rtol=1e-15))


def _half_vm(rng, kappa, size):
    if not np.isfinite(kappa):
        return np.zeros(size)
    if kappa <= 0:
        raise ValidationError("von Mises concentration must be > 0")
    return 0.5 * rng.vonmises(0.0, kappa, size=size)


def synthesize_disarray(triad, frame, kappa_alpha, kappa_gamma, seed=0, outlier_fraction=0.0):
    """Perturb a fiber field with direction-wise von Mises noise.

    Each node gets ``α + ε_α`` and ``γ + ε_γ`` with ``2ε ~ VM(0, κ)``;
    ``β`` is kept. A fraction ``outlier_fraction`` of nodes instead gets a
    fiber drawn uniformly on the sphere (an isotropic, fully disordered
    population).

    Returns
    -------
    Triad
    """
    if not (0.0 <= outlier_fraction <= 1.0):
        raise ValidationError("outlier_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    alpha, gamma, beta = fibers_to_angles(triad, frame)
    n = alpha.shape
    a = alpha + _half_vm(rng, kappa_alpha, n)
    g = gamma + _half_vm(rng, kappa_gamma, n)
    cg = np.cos(g)[..., None]
    f = np.cos(a)[..., None] * cg * frame.e_l + np.sin(a)[..., None] * cg * frame.e_n \
        + np.sin(g)[..., None] * frame.e_t
    if outlier_fraction > 0:
        pick = rng.random(n) < outlier_fraction
        iso = rng.normal(size=n + (3,))
        iso /= np.linalg.norm(iso, axis=-1, keepdims=True)
        f = np.where(pick[..., None], iso, f)
    a2, g2, _ = fibers_to_angles(f, frame)
    return angles_to_fibers(a2, g2, beta, frame)


# --------------------------------------------------- projection metrics

@dataclass
class ProjectionStats:
    mean_abs_ff: float
    mean_abs_fs: float
    mean_abs_fn: float
    per_region: dict = field(default_factory=dict)

    @property
    def norm(self):
        return float(np.sqrt(self.mean_abs_ff**2 + self.mean_abs_fs**2 + self.mean_abs_fn**2))

    def as_tuple(self):
        return (self.mean_abs_ff, self.mean_abs_fs, self.mean_abs_fn)


def projection_components(measured_f, reference):
    """Per-node ``(|f·f0|, |f·s0|, |f·n0|)`` with shape ``(n, 3)``."""
    f = np.asarray(measured_f, dtype=float)
    f = f / np.linalg.norm(f, axis=-1, keepdims=True)
    return np.abs(np.einsum("ni,nij->nj", f, reference.as_matrix()))


def projection_stats(measured_f, reference, weights=None, regions=None):
    """Weighted means of the fiber projections on a reference triad.

    ``measured_f`` may be a :class:`Triad` (its fiber is used) or an array.
    """
    if isinstance(measured_f, Triad):
        measured_f = measured_f.f
    comp = projection_components(measured_f, reference)
    w = np.ones(len(comp)) if weights is None else np.asarray(weights, dtype=float)
    g = np.average(comp, axis=0, weights=w)
    per = {}
    if regions is not None:
        regions = np.asarray(regions)
        for r in np.unique(regions):
            sel = regions == r
            per[int(r)] = tuple(float(v) for v in np.average(comp[sel], axis=0, weights=w[sel]))
    return ProjectionStats(float(g[0]), float(g[1]), float(g[2]), per)


def _half_vm_abs_moments(kappa):
    """``E|cos ε|`` and ``E|sin ε|`` for ``2ε ~ VM(0, κ)`` by quadrature."""
    if not np.isfinite(kappa):
        return 1.0, 0.0
    norm = 2.0 * np.pi * special.i0e(kappa)

    def pdf(x):  # density of X = 2ε on (-π, π], scaled to avoid overflow
        return np.exp(kappa * (np.cos(x) - 1.0)) / norm

    opts = dict(epsabs=1e-13, epsrel=1e-12, limit=200)
    c = 2.0 * integrate.quad(lambda x: pdf(x) * np.cos(0.5 * x), 0.0, np.pi, **opts)[0]
    s = 2.0 * integrate.quad(lambda x: pdf(x) * np.sin(0.5 * x), 0.0, np.pi, **opts)[0]
    return c, s


def expected_projection(kappa_alpha, kappa_gamma, outlier_fraction=0.0):
    """Expected ``(|f·f0|, |f·s0|, |f·n0|)`` for :func:`synthesize_disarray`
    applied to a field with zero intrusion and cross-fiber angles.

    With ``γ0 = β0 = 0`` the perturbed fiber has components
    ``(cos εα cos εγ, sin εγ, sin εα cos εγ)`` in the reference triad; an
    isotropic fiber contributes ½ to each mean.
    """
    ca, sa = _half_vm_abs_moments(kappa_alpha)
    cgm, sgm = _half_vm_abs_moments(kappa_gamma)
    p = outlier_fraction
    return np.array([(1 - p) * ca * cgm + 0.5 * p,
                     (1 - p) * sgm + 0.5 * p,
                     (1 - p) * sa * cgm + 0.5 * p])


def calibrate_projection(target=(0.89, 0.18, 0.19)):
    """Noise parameters whose expected projections equal ``target``.

    Returns
    -------
    kappa_alpha, kappa_gamma, outlier_fraction : float
    """
    target = np.asarray(target, dtype=float)

    def resid(x):
        ka, kg, p = np.exp(x[0]), np.exp(x[1]), special.expit(x[2])
        return expected_projection(ka, kg, p) - target

    sol = optimize.least_squares(resid, x0=[np.log(10.0), np.log(10.0), -1.5],
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if np.max(np.abs(sol.fun)) > 1e-8:
        raise SolverError("projection targets are not attainable by the noise model",
                          residual=float(np.max(np.abs(sol.fun))))
    return float(np.exp(sol.x[0])), float(np.exp(sol.x[1])), float(special.expit(sol.x[2]))


# ------------------------------------------------------- distributions

def angle_histogram(theta, bin_width_deg=5.0, weights=None):
    """Direction histogram over (-90°, 90°]; bins centered on multiples of the width."""
    nb = 180.0 / bin_width_deg
    if bin_width_deg <= 0 or abs(nb - round(nb)) > 1e-9:
        raise ValidationError("bin width must divide 180 degrees")
    nb = int(round(nb))
    deg = np.degrees(np.asarray(theta, dtype=float)).ravel()
    k = np.floor(deg / bin_width_deg + 0.5).astype(np.int64) % nb
    centers = np.arange(nb) * bin_width_deg
    centers = np.where(centers > 90.0, centers - 180.0, centers)
    counts = np.bincount(k, weights=weights, minlength=nb)
    order = np.argsort(centers)
    return centers[order], counts[order]


def angle_statistics(theta, regions=None, bin_width_deg=5.0, weights=None):
    """Histogram, circular mean and circular std per region.

    Returns
    -------
    dict
        ``{region: {"centers_deg", "counts", "mean", "std", "count"}}`` with
        key ``"all"`` for the whole set; angles in radians.
    """
    theta = np.asarray(theta, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)
    groups = {"all": np.ones(theta.shape, dtype=bool)}
    if regions is not None:
        regions = np.asarray(regions)
        for r in np.unique(regions):
            groups[int(r)] = regions == r
    out = {}
    for key, sel in groups.items():
        if not sel.any():
            raise ValidationError(f"region {key!r} is empty")
        ws = None if w is None else w[sel]
        centers, counts = angle_histogram(theta[sel], bin_width_deg, ws)
        R = resultant_length(theta[sel], ws)
        if R < 1e-12:
            warnings.warn(f"region {key!r}: directions are uniformly spread, mean undefined", stacklevel=2)
        out[key] = {"centers_deg": centers, "counts": counts, "mean": circular_mean(theta[sel], ws),
                    "std": circular_std(theta[sel], ws), "count": int(sel.sum())}
    return out
