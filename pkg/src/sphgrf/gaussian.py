"""Covariance matrices over point sets, Cholesky factors and conditional variances.

Entries close to one lose most of their digits when formed as K - h, so all
factorizations work on the *anchored* form of the matrix: for points
p_0, ..., p_{n-1} the vector (T(p_0), T(p_1) - T(p_0), ..., T(p_{n-1}) - T(p_0))
has covariance

    M_00 = K,   M_0j = -h_0j,   M_ij = h_0i + h_0j - h_ij   (i, j >= 1)

with h the half variogram.  It is a unit lower-triangular transform of the
plain covariance, so its Cholesky factor has the same diagonal (the
conditional standard deviations in the given order) and the same determinant.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, LinAlgError

from .geometry import pairwise_distances, geodesic_distance
from .spectrum import AngularPowerSpectrum, half_variogram_with_error, TruncationPolicy


class DegenerateConfigurationWarning(UserWarning):
    """A conditioning point coincides with the target point."""


class JitterExceeded(LinAlgError):
    """Cholesky failed even with the largest allowed diagonal jitter."""


@dataclass(frozen=True)
class JitterPolicy:
    """Try 0, then start, start*factor, ... up to max_jitter."""

    start: float = 1e-12
    factor: float = 10.0
    max_jitter: float = 1e-6

    def levels(self):
        yield 0.0
        j = self.start
        while j <= self.max_jitter * (1 + 1e-9):
            yield j
            j *= self.factor


def _half_variogram(spec: AngularPowerSpectrum, theta, direct: bool):
    if direct:
        return half_variogram_with_error(spec, theta, TruncationPolicy(tol=1e-10))[0]
    return spec.half_variogram(theta)


def anchored_matrix(hv: np.ndarray, K: float) -> np.ndarray:
    """Anchored covariance from a matrix of pairwise half variograms (anchor = index 0)."""
    n = hv.shape[0]
    h0 = hv[0]
    M = h0[:, None] + h0[None, :] - hv
    M[0, :] = -h0
    M[:, 0] = -h0
    M[0, 0] = K
    return M if n > 1 else np.array([[K]])


def increment_matrix(hv0: np.ndarray, hv: np.ndarray) -> np.ndarray:
    """Covariance of T(p_i) - T(x0) given h(x0, p_i) and the pairwise h(p_i, p_j)."""
    return hv0[:, None] + hv0[None, :] - hv


def factor_with_jitter(M: np.ndarray, policy: JitterPolicy | None = None):
    """Lower Cholesky factor of M + jitter I with the smallest jitter that works."""
    policy = policy or JitterPolicy()
    last = None
    for j in policy.levels():
        try:
            A = M + j * np.eye(len(M)) if j else M
            return cholesky(A, lower=True, check_finite=False), j
        except LinAlgError as e:
            last = e
    raise JitterExceeded(
        f"Cholesky failed with jitter up to {policy.max_jitter:g}; "
        f"points too close or configuration numerically degenerate ({last})")


@dataclass
class CovarianceMatrix:
    """Covariance of T_0 at a point set plus its (anchored) Cholesky factor.

    ``matrix`` is the plain covariance K - h(d(p_i, p_j)); ``factored`` is
    the matrix actually factorized (anchored form for sphere points, the
    matrix itself for user-supplied SPD input) and ``jitter`` the diagonal
    regularizer that was added to it.
    """

    points: np.ndarray | None
    matrix: np.ndarray
    factored: np.ndarray
    chol: np.ndarray
    jitter: float
    anchored: bool = True
    alpha: float | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, a, jitter_policy: JitterPolicy | None = None) -> "CovarianceMatrix":
        """Wrap an arbitrary SPD matrix (no sphere geometry attached)."""
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("expected a square matrix")
        if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise ValueError("matrix is not symmetric")
        L, j = factor_with_jitter(a, jitter_policy)
        return cls(None, a, a, L, j, anchored=False)

    def smallest_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.factored + self.jitter * np.eye(self.n))[0])


def build_covariance(points, spec: AngularPowerSpectrum, jitter_policy: JitterPolicy | None = None,
                     direct: bool = False) -> CovarianceMatrix:
    """Covariance matrix of T_0 over ``points`` (an ``(n, 3)`` array).

    ``direct`` evaluates every entry by the certified series instead of the
    interpolation table (slower, used for validation).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    dist = pairwise_distances(pts)
    hv = _half_variogram(spec, dist, direct)
    hv = 0.5 * (hv + hv.T)
    np.fill_diagonal(hv, 0.0)
    K = spec.total_variance
    M = anchored_matrix(hv, K)
    L, j = factor_with_jitter(M, jitter_policy)
    return CovarianceMatrix(pts, K - hv, M, L, j, anchored=True, alpha=spec.alpha)


@dataclass
class ConditionalVarianceReport:
    """v_j = Var(X_j | X_1..X_{j-1}) in the given order, and SLND references.

    ``slnd_reference[j]`` is min_{k<j} rho_alpha^2(d(x_j, x_k)) (NaN for
    j = 0 or without geometry).
    """

    order: np.ndarray
    variances: np.ndarray
    determinant: float
    log_determinant: float
    jitter: float
    slnd_reference: np.ndarray = field(repr=False)

    @property
    def ratios(self) -> np.ndarray:
        return self.variances / self.slnd_reference


def conditional_variances(m: CovarianceMatrix) -> ConditionalVarianceReport:
    """Squared Cholesky diagonal; their product is det of the factored matrix."""
    diag = np.diag(m.chol)
    v = diag * diag
    logdet = float(2.0 * np.sum(np.log(diag)))
    ref = np.full(m.n, np.nan)
    if m.points is not None and m.n > 1 and m.alpha is not None:
        dist = pairwise_distances(m.points)
        masked = np.where(np.tril(np.ones_like(dist, dtype=bool), k=-1), dist, np.inf)
        dmin = masked.min(axis=1)[1:]
        ref[1:] = dmin ** (m.alpha - 2.0)
    return ConditionalVarianceReport(np.arange(m.n), v, float(np.exp(logdet)), logdet, m.jitter, ref)


def conditional_variance(points, x, spec: AngularPowerSpectrum, jitter_policy: JitterPolicy | None = None,
                         direct: bool = False):
    """(Var(T_0(x) | T_0(points)), jitter used)."""
    pts = np.vstack([np.atleast_2d(np.asarray(points, float)), np.asarray(x, float)[None, :]])
    m = build_covariance(pts, spec, jitter_policy, direct=direct)
    return float(m.chol[-1, -1] ** 2), m.jitter


def conditional_increment_variance(points, x, x0, spec: AngularPowerSpectrum,
                                   jitter_policy: JitterPolicy | None = None, direct: bool = False):
    """(Var(T(x) - T(x0) | T(p) - T(x0), p in points), jitter used)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    allp = np.vstack([pts, np.asarray(x, float)[None, :]])
    d0 = geodesic_distance(np.asarray(x0, float)[None, :], allp)
    hv0 = _half_variogram(spec, d0, direct)
    hv = _half_variogram(spec, pairwise_distances(allp), direct)
    hv = 0.5 * (hv + hv.T)
    np.fill_diagonal(hv, 0.0)
    L, j = factor_with_jitter(increment_matrix(hv0, hv), jitter_policy)
    return float(L[-1, -1] ** 2), j


def _degenerate(msg):
    warnings.warn(msg, DegenerateConfigurationWarning, stacklevel=3)
    return float("nan")


def slnd_ratio(points, x, spec: AngularPowerSpectrum, jitter_policy: JitterPolicy | None = None,
               direct: bool = False) -> float:
    """Var(T_0(x) | T_0(points)) / min_k rho_alpha^2(d(x, x_k)).

    Returns NaN with a :class:`DegenerateConfigurationWarning` when ``x``
    coincides with a conditioning point.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    if pts.shape[0] < 1:
        raise ValueError("need at least one conditioning point")
    dmin = float(np.min(geodesic_distance(np.asarray(x, float)[None, :], pts)))
    if dmin == 0.0:
        return _degenerate("target point coincides with a conditioning point")
    v, _ = conditional_variance(pts, x, spec, jitter_policy, direct)
    return v / dmin ** (spec.alpha - 2.0)


def increment_slnd_ratio(points, x, x0, spec: AngularPowerSpectrum,
                         jitter_policy: JitterPolicy | None = None, direct: bool = False) -> float:
    """Same ratio for the increment field Z(y) = T_0(y) - T_0(x0); the minimum includes x0."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    allk = np.vstack([np.asarray(x0, float)[None, :], pts])
    dmin = float(np.min(geodesic_distance(np.asarray(x, float)[None, :], allk)))
    if dmin == 0.0:
        return _degenerate("target point coincides with x0 or a conditioning point")
    v, _ = conditional_increment_variance(pts, x, x0, spec, jitter_policy, direct)
    return v / dmin ** (spec.alpha - 2.0)
