"""Compiled inner loops: Legendre series and real spherical harmonics."""
import math

import numpy as np
from numba import njit

# Checking the tail interval every step costs as much as the recurrence.
_CHECK_EVERY = 16


@njit(cache=True)
def remainder_series(x, omx, sin_half, d, dsuf, mpre, tol, n_arr, n_mono):
    """Sum_{n>=1} d_n (1 - P_n(x)) with a certified enclosure of the tail.

    ``d`` holds nonnegative, eventually nonincreasing coefficients d_1..d_N
    (index 0 unused), ``dsuf[U]`` the exact suffix sums Sum_{n>U} d_n and
    ``mpre[k]`` the prefix sums Sum_{n<=k} d_n n (n+1).  The tail
    Sum_{n>U} d_n (1 - P_n) is enclosed using

      * 0 <= 1 - P_n <= 2 and 1 - P_n(x) <= n (n+1) (1 - x) / 2,
      * |Sum_{n>U} d_n P_n(cos t)| <= d_{U+1} / sin(t/2)  (Abel summation with
        0 <= Sum_{k<=N} P_k(cos t) <= 1 / sin(t/2)).

    The recurrence stops at the first checkpoint where the enclosure's
    half-width is <= tol; the midpoint is added to the partial sum.
    Returns (value, half_width, terms_used).
    """
    m = x.shape[0]
    out = np.zeros(m)
    err = np.zeros(m)
    used = np.zeros(m, np.int64)
    for k in range(m):
        xx = x[k]
        o = omx[k]
        if o <= 0.0:
            continue
        inv_s = 1.0 / sin_half[k] if sin_half[k] > 0.0 else np.inf
        nstar = int((-1.0 + math.sqrt(1.0 + 16.0 / o)) / 2.0)
        q_prev = 0.0
        q = o
        acc = d[1] * q
        n = 1
        while True:
            if n >= n_arr or (n >= n_mono and n % _CHECK_EVERY == 0):
                du = dsuf[n]
                a = d[n + 1] * inv_s if n < n_arr else du
                lo = max(0.0, du - a)
                hi = min(2.0 * du, du + a)
                if nstar > n:
                    ns = min(nstar, n_arr)
                    hi = min(hi, 0.5 * o * (mpre[ns] - mpre[n]) + 2.0 * dsuf[ns])
                half = 0.5 * (hi - lo)
                if half <= tol or n >= n_arr:
                    out[k] = acc + 0.5 * (hi + lo)
                    err[k] = half
                    used[k] = n
                    break
            # (n+1) Q_{n+1} = (2n+1)(1-x) + (2n+1) x Q_n - n Q_{n-1},  Q = 1 - P
            q_next = ((2 * n + 1) * (o + xx * q) - n * q_prev) / (n + 1)
            q_prev = q
            q = q_next
            n += 1
            acc += d[n] * q
    return out, err, used


@njit(cache=True)
def weighted_q_sum(x, omx, w, n_max):
    """Sum_{n=1}^{n_max} w_n (1 - P_n(x)) for each x (finite, no tail)."""
    m = x.shape[0]
    out = np.zeros(m)
    for k in range(m):
        xx = x[k]
        o = omx[k]
        q_prev = 0.0
        q = o
        acc = w[1] * q if n_max >= 1 else 0.0
        for n in range(1, n_max):
            q_next = ((2 * n + 1) * (o + xx * q) - n * q_prev) / (n + 1)
            q_prev = q
            q = q_next
            acc += w[n + 1] * q
        out[k] = acc
    return out


@njit(cache=True)
def legendre_table(x, n_max):
    """P_0..P_{n_max} at each x, shape (len(x), n_max + 1)."""
    m = x.shape[0]
    out = np.empty((m, n_max + 1))
    for k in range(m):
        p_prev = 1.0
        out[k, 0] = 1.0
        if n_max >= 1:
            p = x[k]
            out[k, 1] = p
            for n in range(1, n_max):
                p_next = ((2 * n + 1) * x[k] * p - n * p_prev) / (n + 1)
                p_prev = p
                p = p_next
                out[k, n + 1] = p
    return out


_BIG = 2.0 ** 200
_TINY = 2.0 ** -200


@njit(cache=True)
def real_harmonic_basis(cos_t, sin_t, phi, l_max):
    """Orthonormal real spherical harmonics evaluated at points.

    Column layout: degree l occupies columns [l^2, (l+1)^2); inside it the
    order-0 function comes first, then (cos m phi, sin m phi) pairs for
    m = 1..l, each carrying the sqrt(2) factor. Fully normalized associated
    Legendre functions are generated by the standard three-term recurrence,
    except order 0, which uses the recurrence for P_l - P_{l-1} in terms of
    1 - cos(theta) to stay accurate next to the poles; sectoral seeds sin^m(theta) are carried as mantissa/exponent pairs so
    high orders near the poles neither underflow nor lose the subsequent
    growth along the column.
    """
    n = cos_t.shape[0]
    ncol = (l_max + 1) * (l_max + 1)
    out = np.zeros((n, ncol))
    sqrt2 = math.sqrt(2.0)
    inv_sqrt_4pi = 1.0 / math.sqrt(4.0 * math.pi)
    for k in range(n):
        c = cos_t[k]
        s = sin_t[k]
        # P_l(-x) = (-1)^l P_l(x): run the recurrence at |cos theta|
        omx = s * s / (1.0 + abs(c))
        flip = -1.0 if c < 0.0 else 1.0
        sign = 1.0
        pl = 1.0
        dl = 0.0
        for l in range(0, l_max + 1):
            if l > 0:
                dl = ((2.0 * l - 1.0) * (-omx) * pl + (l - 1.0) * dl) / l
                pl += dl
                sign *= flip
            out[k, l * l] = sign * pl * math.sqrt(2.0 * l + 1.0) * inv_sqrt_4pi
        mant = inv_sqrt_4pi
        expo = 0
        for m in range(1, l_max + 1):
            mant *= math.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s
            if mant != 0.0 and abs(mant) < _TINY:
                fm, fe = math.frexp(mant)
                mant = fm
                expo += fe
            fac_c = sqrt2 * math.cos(m * phi[k])
            fac_s = sqrt2 * math.sin(m * phi[k])
            p_prev = 0.0
            p = mant
            e = expo
            for l in range(m, l_max + 1):
                if l > m:
                    if l == m + 1:
                        p_next = math.sqrt(2.0 * m + 3.0) * c * p
                    else:
                        a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                        b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                        p_next = a * (c * p - b * p_prev)
                    p_prev = p
                    p = p_next
                    if e < 0 and abs(p) > _BIG:
                        p *= _TINY
                        p_prev *= _TINY
                        e += 200
                val = math.ldexp(p, e) if e != 0 else p
                base = l * l
                out[k, base + 2 * m - 1] = val * fac_c
                out[k, base + 2 * m] = val * fac_s
    return out
