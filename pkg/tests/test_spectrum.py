import json
import math

import mpmath
import numpy as np
import pytest
from scipy.special import eval_legendre

from sphgrf.spectrum import (AngularPowerSpectrum, ModelParams, TruncationPolicy, TruncationError,
                             covariance, variogram, half_variogram_with_error, legendre_batch,
                             rho_alpha, chung_modulus, chung_kappa2, band_scale, band_limits,
                             RateFunctions, appendix_partial_sum, appendix_tail, variogram_tail)


def direct_covariance(spec, theta, n_max=200_000):
    """Oracle: plain Legendre sum by the three-term recurrence (truncation ~ n_max^(1/2 - alpha))."""
    x = math.cos(theta)
    w = spec.weights(n_max)
    p_prev, p = 1.0, x
    total = w[0] + w[1] * x
    for n in range(1, n_max):
        p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
        total += w[n + 1] * p
    return total


# -- spectrum ----------------------------------------------------------------

def test_normalization_unit_variance(spec3):
    assert spec3.total_variance == pytest.approx(1.0, abs=1e-14)
    # independent: sum of (2l+1) l^-3 = 2 zeta(2) + zeta(3)
    raw = (2 * mpmath.zeta(2) + mpmath.zeta(3)) / (4 * mpmath.pi)
    assert spec3.scale == pytest.approx(float(1 / raw), rel=1e-13)


def test_tail_weight_matches_partial_sums(spec3):
    w = spec3.weights(5000)
    assert spec3.tail_weight(101) == pytest.approx(1.0 - w[:101].sum(), rel=1e-10)
    assert spec3.tail_weight(0) == pytest.approx(1.0)


def test_g_table_and_bounds():
    s = AngularPowerSpectrum(2.5, K0=2.0, G=[[1, 1.5], [10, 0.8]])
    assert s.g(5.5) == pytest.approx(1.15)
    assert s.g(1e6) == pytest.approx(0.8)
    assert s.table_end == 10
    with pytest.raises(ValueError, match="outside"):
        AngularPowerSpectrum(3.0, K0=1.5, G=[[1, 2.0]])
    with pytest.raises(ValueError, match=r"\(2, 4\)"):
        AngularPowerSpectrum(4.0)
    with pytest.raises(ValueError):
        AngularPowerSpectrum(3.0, K0=0.5)


def test_callable_g_is_tabulated():
    s = AngularPowerSpectrum(3.0, K0=2.0, G=lambda l: 1.0 + 1.0 / (1.0 + l))
    assert s.g(3.0) == pytest.approx(1.25, rel=1e-3)


def test_serialization_round_trip(tmp_path):
    s = AngularPowerSpectrum(3.2, K0=2.0, G=[[1, 1.2], [50, 0.9]], C0=0.1)
    assert AngularPowerSpectrum.from_dict(s.to_dict()) == s
    p = tmp_path / "s.json"
    p.write_text(json.dumps(s.to_dict()))
    assert AngularPowerSpectrum.from_json(p) == s
    assert AngularPowerSpectrum.from_json(json.dumps({"alpha": 3})) == AngularPowerSpectrum(3.0)


# -- derived exponents -------------------------------------------------------

def test_model_params_exponents(spec3):
    p = ModelParams(spec3, d=1, gamma=0.4)
    assert p.beta == 3.0
    # min(beta / (2 (alpha - 2)), 1) = min(1.5, 1)
    assert p.gamma0 == 1.0
    assert p.eta == pytest.approx(1.1)
    assert ModelParams(AngularPowerSpectrum(3.5), d=2).gamma0 == pytest.approx(1 / 3)


def test_model_params_rejections(spec3):
    with pytest.raises(ValueError, match="beta"):
        ModelParams(spec3, d=4)
    with pytest.raises(ValueError, match="gamma"):
        ModelParams(spec3, d=1, gamma=1.0)
    with pytest.raises(ValueError, match="delta"):
        ModelParams(spec3, delta=1.5)


# -- covariance series -------------------------------------------------------

@pytest.mark.parametrize("alpha", [2.5, 3.0, 3.5])
def test_antipodal_covariance_closed_form(alpha):
    """At theta = pi the series alternates: sum (2l+1) l^-a (-1)^l = -(2 eta(a-1) + eta(a))."""
    s = AngularPowerSpectrum(alpha)
    a = mpmath.mpf(alpha)
    num = -(2 * mpmath.altzeta(a - 1) + mpmath.altzeta(a))
    den = 2 * mpmath.zeta(a - 1) + mpmath.zeta(a)
    assert covariance(s, math.pi) == pytest.approx(float(num / den), abs=1e-8)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.0])
def test_covariance_against_direct_sum(theta):
    s = AngularPowerSpectrum(3.0, K0=2.0, G=[[1, 1.5], [30, 0.7]])
    assert covariance(s, theta) == pytest.approx(direct_covariance(s, theta), abs=1e-8)


def test_error_bound_is_certified(spec3):
    h, err = half_variogram_with_error(spec3, np.array([1e-3, 0.1, 1.0]), TruncationPolicy(tol=1e-10))
    assert np.all(err <= 1e-10)
    assert 1 - h[2] == pytest.approx(direct_covariance(spec3, 1.0), abs=1e-9)


def test_truncation_error_raised(spec3):
    with pytest.raises(TruncationError):
        half_variogram_with_error(spec3, 0.5, TruncationPolicy(tol=1e-16, cap=16))


def test_variogram_zero_and_positive(spec3):
    assert variogram(spec3, 0.0) == 0.0
    assert variogram(spec3, 0.5) > 0
    with pytest.raises(ValueError):
        covariance(spec3, -0.1)


def test_variogram_scaling_exponent(spec3):
    t = np.array([1e-4, 1e-3])
    v = variogram(spec3, t)
    assert math.log(v[1] / v[0]) / math.log(10) == pytest.approx(1.0, abs=0.02)


def test_table_matches_series(spec3):
    assert spec3.table.validate(n=1000, seed=3) < 1e-8
    assert spec3.half_variogram(0.0) == 0.0


def test_legendre_batch_against_scipy():
    x = np.array([-1.0, -0.3, 0.0, 0.7, 1.0])
    P = legendre_batch(x, 50)
    for n in (0, 1, 7, 50):
        np.testing.assert_allclose(P[..., n] if P.shape[-1] == 51 else P[n], eval_legendre(n, x), atol=1e-13)
    with pytest.raises(ValueError):
        legendre_batch([1.5], 3)


# -- rate functions ----------------------------------------------------------

def test_rho_and_chung_modulus(params3):
    assert rho_alpha(params3, 0.04) == pytest.approx(0.2)
    assert chung_modulus(params3, 0.01) == pytest.approx(1.1117e-3, rel=1e-4)
    with pytest.raises(ValueError):
        chung_modulus(params3, 0.5)


def test_band_limits_formula(params3):
    k1 = 0.5
    k2 = chung_kappa2(3.0, k1)
    assert k2 == pytest.approx(3.0)
    r = 0.01
    B = math.log(math.log(1 / r)) ** 3
    assert band_scale(r, k2) == pytest.approx(B)
    L, U = band_limits(params3, r, k1, k2)
    assert (L, U) == (math.floor(B ** -0.5 / r), math.floor(B ** 0.5 / r))
    assert RateFunctions(params3).band_limits(r, k1, k2) == (L, U)
    with pytest.raises(ValueError, match="kappa1"):
        band_limits(params3, r, 0.7, k2)
    with pytest.raises(ValueError, match="delta"):
        band_limits(params3, 0.06, k1, k2)


# -- partial sums and tails --------------------------------------------------

def test_partial_sum_direct(spec3):
    L, t = 40, 0.01
    ell = np.arange(1, L + 1)
    ref = np.sum(spec3.weights(L)[1:] * (1 - eval_legendre(ell, math.cos(t))))
    assert appendix_partial_sum(spec3, L, t) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("U", [100, 1000, 10000])
def test_tail_below_envelope(spec3, U):
    tails = variogram_tail(spec3, U, np.geomspace(1e-3, math.pi, 30))
    assert np.max(tails) <= appendix_tail(spec3, U)
