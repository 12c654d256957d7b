import math

import numpy as np
import pytest

from sphgrf.geometry import SpherePoint, point_at, to_cartesian
from sphgrf.gaussian import (anchored_matrix, build_covariance, conditional_variances,
                             conditional_variance, conditional_increment_variance, slnd_ratio,
                             increment_slnd_ratio, CovarianceMatrix, JitterPolicy, JitterExceeded,
                             DegenerateConfigurationWarning, factor_with_jitter)
from sphgrf.spectrum import covariance, half_variogram_with_error, TruncationPolicy


def schur_variance(C, i):
    """Oracle: Var(X_i | X_others) = C_ii - C_io C_oo^-1 C_oi."""
    o = [k for k in range(len(C)) if k != i]
    return C[i, i] - C[i, o] @ np.linalg.solve(C[np.ix_(o, o)], C[o, i])


@pytest.fixture
def pts(rng):
    c = SpherePoint(1.0, 0.5)
    return np.array([point_at(c, s, a) for s, a in zip(rng.uniform(0.01, 0.3, 6), rng.uniform(0, 6.28, 6))])


def test_anchored_matrix_same_determinant(rng):
    h = rng.uniform(0.0, 0.5, (5, 5))
    h = 0.5 * (h + h.T)
    np.fill_diagonal(h, 0.0)
    C = 1.0 - h
    M = anchored_matrix(h, 1.0)
    # M = A C A^T with A unit lower triangular
    A = np.eye(5)
    A[1:, 0] = -1.0
    np.testing.assert_allclose(M, A @ C @ A.T, atol=1e-15)


def test_build_covariance_matches_series(spec3, pts):
    m = build_covariance(pts, spec3)
    i, j = 1, 4
    theta = math.acos(np.clip(pts[i] @ pts[j], -1, 1))
    assert m.matrix[i, j] == pytest.approx(covariance(spec3, theta), abs=1e-8)
    assert m.jitter == 0.0
    direct = build_covariance(pts, spec3, direct=True)
    np.testing.assert_allclose(direct.matrix, m.matrix, atol=1e-8)


def test_conditional_variances_product_is_determinant(spec3, pts):
    m = build_covariance(pts, spec3, direct=True)
    rep = conditional_variances(m)
    assert np.prod(rep.variances) == pytest.approx(np.linalg.det(m.matrix), rel=1e-8)
    assert rep.log_determinant == pytest.approx(np.linalg.slogdet(m.matrix)[1], rel=1e-10)
    assert rep.variances[-1] == pytest.approx(schur_variance(m.matrix, len(pts) - 1), rel=1e-7)
    assert np.isnan(rep.slnd_reference[0]) and np.all(rep.ratios[1:] > 0)


def test_two_point_slnd_closed_form(spec3):
    x = SpherePoint(1.0, 0.3)
    for r in (0.001, 0.01, 0.04):
        y = point_at(x, r, 0.7)
        # 1 - c^2 = h (2 - h) with c = 1 - h, written without cancellation
        h = float(half_variogram_with_error(spec3, r, TruncationPolicy(tol=1e-12))[0])
        expected = h * (2 - h) / r ** (spec3.alpha - 2)
        assert slnd_ratio(y[None, :], x.xyz, spec3, direct=True) == pytest.approx(expected, rel=1e-6)


def test_increment_variance_against_schur(spec3, pts):
    x0 = pts[0]
    cond, x = pts[1:-1], pts[-1]
    allp = np.vstack([cond, x])
    C = build_covariance(np.vstack([x0, allp]), spec3, direct=True).matrix
    # covariance of increments T(p) - T(x0)
    D = C[1:, 1:] - C[1:, :1] - C[:1, 1:] + C[0, 0]
    v, j = conditional_increment_variance(cond, x, x0, spec3, direct=True)
    assert j == 0.0
    assert v == pytest.approx(schur_variance(D, len(D) - 1), rel=1e-6)
    assert increment_slnd_ratio(cond, x, x0, spec3) > 0


def test_conditional_variance_decreases_with_more_points(spec3, pts):
    x = pts[-1]
    v1, _ = conditional_variance(pts[:1], x, spec3)
    v5, _ = conditional_variance(pts[:-1], x, spec3)
    assert v5 <= v1 + 1e-12


def test_degenerate_configuration_warns(spec3, pts):
    with pytest.warns(DegenerateConfigurationWarning):
        assert math.isnan(slnd_ratio(pts, pts[2], spec3))
    with pytest.warns(DegenerateConfigurationWarning):
        assert math.isnan(increment_slnd_ratio(pts[1:], pts[0], pts[0], spec3))


def test_jitter_escalation():
    a = np.ones((3, 3))  # rank one
    L, j = factor_with_jitter(a)
    assert 0 < j <= 1e-6
    with pytest.raises(JitterExceeded, match="jitter"):
        factor_with_jitter(-np.eye(2))
    assert list(JitterPolicy(1e-12, 10, 1e-10).levels()) == pytest.approx([0.0, 1e-12, 1e-11, 1e-10])


def test_from_matrix_validation():
    with pytest.raises(ValueError):
        CovarianceMatrix.from_matrix(np.array([[1.0, 0.5], [0.2, 1.0]]))
    m = CovarianceMatrix.from_matrix(np.diag([1.0, 2.0]))
    assert conditional_variances(m).determinant == pytest.approx(2.0)
    assert m.smallest_eigenvalue() == pytest.approx(1.0)


def test_duplicate_points_need_jitter(spec3):
    p = to_cartesian(np.array([1.0, 1.0]), np.array([0.5, 0.5]))
    m = build_covariance(p, spec3)
    assert m.jitter > 0
