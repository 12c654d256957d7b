"""Angular power spectrum, Legendre series covariance and rate functions.

The field T_0 has Schoenberg expansion

    Cov(T_0(x), T_0(y)) = sum_l w_l P_l(<x, y>),   w_l = c (2l + 1) C_l / (4 pi),

with C_l = G(l) l^{-alpha} for l >= 1, C_0 = ``C0`` and c chosen so the
weights sum to one.  The series converges like l^{1-alpha}, far too slowly for
brute-force summation at the precision the experiments need, so the half
variogram h(t) = sum_l w_l (1 - P_l(cos t)) is split as

    h(t) = lam * (2 sin(t/2))^{alpha-2} + sum_n d_n (1 - P_n(cos t))

where the first part is a closed-form kernel whose Legendre coefficients
match the asymptotics of w_l, and the residual coefficients d_n decay like
n^{-alpha}.  The residual is summed with a certified enclosure of its tail
(see ``_kernels.remainder_series``).
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln, zeta

from . import _kernels

FOUR_PI = 4.0 * np.pi
DEFAULT_TOL = 1e-8
DEFAULT_CAP = 2_000_000


class TruncationError(RuntimeError):
    """Requested accuracy not reachable within the degree cap."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Absolute tolerance for the covariance series and the largest degree used."""

    tol: float = DEFAULT_TOL
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.cap < 16:
            raise ValueError("degree cap must be at least 16")


def _tail_sum(alpha: float, start: int) -> float:
    """sum_{l >= start} (2l + 1) l^{-alpha}, via the Hurwitz zeta function."""
    return float(2.0 * zeta(alpha - 1.0, start) + zeta(alpha, start))


@dataclass(frozen=True)
class AngularPowerSpectrum:
    """C_l = G(l) l^{-alpha} for l >= 1 and C_0 = ``C0``.

    ``G`` is either ``None`` (the constant one) or a table of ``(l, g)``
    pairs, interpolated linearly in l and held constant beyond both ends.
    A callable may be passed; it is tabulated on a logarithmic grid.
    With ``normalize`` the spectrum is rescaled to unit total variance.
    """

    alpha: float
    K0: float = 1.0
    G: tuple | None = None
    C0: float = 0.0
    normalize: bool = True
    scale: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = float(self.alpha)
        if not 2.0 < a < 4.0:
            raise ValueError(f"alpha must lie in the open interval (2, 4), got {a}")
        object.__setattr__(self, "alpha", a)
        if not self.K0 >= 1.0:
            raise ValueError(f"K0 must be >= 1, got {self.K0}")
        if self.C0 < 0:
            raise ValueError("C0 must be nonnegative")
        g = self.G
        if isinstance(g, str):
            if g != "one":
                raise ValueError(f"G must be 'one' or a table, got {g!r}")
            g = None
        elif callable(g):
            ells = np.unique(np.round(np.geomspace(1, 1e6, 400)))
            g = tuple((float(l), float(g(l))) for l in ells)
        elif g is not None:
            arr = np.asarray(g, dtype=float)
            if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) == 0:
                raise ValueError("G table must be a list of [l, g] pairs")
            arr = arr[np.argsort(arr[:, 0])]
            if np.any(np.diff(arr[:, 0]) <= 0) or arr[0, 0] < 1:
                raise ValueError("G table degrees must be distinct and >= 1")
            g = tuple((float(l), float(v)) for l, v in arr)
        object.__setattr__(self, "G", g)
        # piecewise linear, so checking the knots plus a log grid is exhaustive
        probe = np.unique(np.concatenate([np.geomspace(1, 1e6, 200), self._g_knots()[0]]))
        gv = self.g(probe)
        lo, hi = 1.0 / self.K0, self.K0
        if np.any(gv < lo * (1 - 1e-12)) or np.any(gv > hi * (1 + 1e-12)):
            bad = probe[np.argmax((gv < lo) | (gv > hi))]
            raise ValueError(f"G({bad:g}) outside [1/K0, K0] = [{lo:g}, {hi:g}]")
        object.__setattr__(self, "scale", 1.0 / self._raw_total() if self.normalize else 1.0)

    # -- G and raw spectrum -------------------------------------------------
    def _g_knots(self):
        if self.G is None:
            return np.array([1.0]), np.array([1.0])
        arr = np.asarray(self.G)
        return arr[:, 0], arr[:, 1]

    @property
    def table_end(self) -> int:
        """Degree beyond which G is constant."""
        return int(math.ceil(self._g_knots()[0][-1]))

    @property
    def g_inf(self) -> float:
        return float(self._g_knots()[1][-1])

    def g(self, ell):
        """Multiplier G(l), vectorized."""
        ells, vals = self._g_knots()
        return np.interp(np.asarray(ell, dtype=float), ells, vals)

    def raw_c_ell(self, ell):
        """Unnormalized C_l."""
        ell = np.asarray(ell, dtype=float)
        safe = np.where(ell > 0, ell, 1.0)
        return np.where(ell > 0, self.g(safe) * safe ** (-self.alpha), self.C0)

    def _raw_total(self) -> float:
        m = self.table_end
        ell = np.arange(1, m + 1, dtype=float)
        head = np.sum((2 * ell + 1) * self.g(ell) * ell ** (-self.alpha))
        tail = self.g_inf * _tail_sum(self.alpha, m + 1)
        return float((self.C0 + head + tail) / FOUR_PI)

    # -- normalized quantities --------------------------------------------
    def c_ell(self, ell):
        return self.scale * self.raw_c_ell(ell)

    def weights(self, l_max: int) -> np.ndarray:
        """Schoenberg weights w_0..w_{l_max}."""
        ell = np.arange(l_max + 1, dtype=float)
        return (2 * ell + 1) / FOUR_PI * self.c_ell(ell)

    @property
    def total_variance(self) -> float:
        return self.scale * self._raw_total()

    def tail_weight(self, start: int) -> float:
        """sum_{l >= start} w_l, exact."""
        start = max(int(start), 0)
        m = self.table_end
        if start > m:
            return self.scale * self.g_inf * _tail_sum(self.alpha, start) / FOUR_PI
        return float(self.total_variance - self.weights(start - 1).sum()) if start > 0 else self.total_variance

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        g = "one" if self.G is None else {"table": [list(p) for p in self.G]}
        return {"alpha": self.alpha, "K0": self.K0, "G": g, "C0": self.C0, "normalize": self.normalize}

    @classmethod
    def from_dict(cls, doc: dict) -> "AngularPowerSpectrum":
        if "alpha" not in doc:
            raise ValueError("spectrum: missing field 'alpha'")
        g = doc.get("G", "one")
        if isinstance(g, dict):
            if "table" not in g:
                raise ValueError("spectrum.G: expected 'one' or {'table': [[l, g], ...]}")
            g = g["table"]
        return cls(
            alpha=float(doc["alpha"]),
            K0=float(doc.get("K0", 1.0)),
            G=g,
            C0=float(doc.get("C0", 0.0)),
            normalize=bool(doc.get("normalize", True)),
        )

    @classmethod
    def from_json(cls, src) -> "AngularPowerSpectrum":
        """Load from a JSON string, a path, or an already parsed dict."""
        if isinstance(src, dict):
            return cls.from_dict(src)
        if isinstance(src, Path) or (isinstance(src, str) and not src.lstrip().startswith("{")):
            src = Path(src).read_text()
        return cls.from_dict(json.loads(src))

    # -- cached evaluation ---------------------------------------------------
    @property
    def table(self) -> "CovarianceTable":
        """Interpolated covariance, shared by all equal spectra."""
        return _table_for(self)

    def half_variogram(self, theta):
        """h(t) = 1/2 E[(T_0(x) - T_0(y))^2] from the interpolation table."""
        return self.table.half_variogram(theta)


@dataclass(frozen=True)
class ModelParams:
    """Spectrum plus field dimension ``d`` and optional Hoelder exponent ``gamma``.

    ``delta`` is the radius below which the small-scale estimates are
    applied; radii in experiments must be smaller.
    """

    spectrum: AngularPowerSpectrum
    d: int = 1
    gamma: float | None = None
    delta: float = 0.05

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if self.beta <= 0:
            raise ValueError(
                f"beta = 4 - (alpha - 2) d = {self.beta:g} must be > 0 "
                f"(alpha={self.alpha:g}, d={self.d})")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.gamma is not None and not 0 < self.gamma < self.gamma0:
            raise ValueError(f"gamma must lie in (0, gamma0={self.gamma0:g}), got {self.gamma}")

    @property
    def alpha(self) -> float:
        return self.spectrum.alpha

    @property
    def beta(self) -> float:
        return 4.0 - (self.alpha - 2.0) * self.d

    @property
    def gamma0(self) -> float:
        return min(self.beta / (2.0 * (self.alpha - 2.0)), 1.0)

    @property
    def eta(self) -> float | None:
        if self.gamma is None:
            return None
        return self.beta / 2.0 - (self.alpha - 2.0) * self.gamma


def _alpha_of(params) -> float:
    if isinstance(params, (ModelParams, AngularPowerSpectrum)):
        return params.alpha
    return float(params)


def _d_of(params) -> int:
    return params.d if isinstance(params, ModelParams) else 1


# --------------------------------------------------------------------------
# Legendre polynomials
# --------------------------------------------------------------------------

def legendre_batch(x, l_max: int) -> np.ndarray:
    """P_0(x)..P_{l_max}(x); shape ``(l_max + 1,)`` or ``(len(x), l_max + 1)``."""
    if l_max < 0:
        raise ValueError("l_max must be >= 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.abs(xa) > 1.0) or np.any(np.isnan(xa)):
        raise ValueError("Legendre argument must satisfy |x| <= 1")
    out = _kernels.legendre_table(xa, int(l_max))
    return out[0] if np.ndim(x) == 0 else out


# --------------------------------------------------------------------------
# Covariance series
# --------------------------------------------------------------------------

def _reference_coeffs(H: float, n_max: int) -> np.ndarray:
    """r_n = Gamma(n - H) / Gamma(n + H + 2) for n = 0..n_max (r_0 unused)."""
    r = np.empty(n_max + 1)
    r[0] = 0.0
    r[1] = math.exp(gammaln(1.0 - H) - gammaln(3.0 + H))
    n = np.arange(1, n_max, dtype=float)
    r[2:] = r[1] * np.cumprod((n - H) / (n + H + 2.0))
    return r


class _Series:
    """Residual coefficient arrays for one spectrum, grown on demand.

    All arrays are computed by forward recurrences and cumulative sums, so
    growing them never changes an entry that already exists.  Each
    evaluation picks its own length from a fixed ladder, which makes the
    result independent of what was evaluated before.
    """

    def __init__(self, spec: AngularPowerSpectrum):
        self.spec = spec
        a = spec.alpha
        self.H = H = a / 2.0 - 1.0
        self.A = 4.0 ** H * math.exp(2.0 * gammaln(H + 1.0)) * math.sin(math.pi * H) / math.pi
        self.k = spec.scale / FOUR_PI
        self.lam = self.k * spec.g_inf / self.A
        # sum_{n >= 1} (2n + 1) r_n in closed form
        self.r_total = 4.0 ** H / (H + 1.0) / self.A
        self.n_arr = 0
        self._lock = threading.Lock()

    def ensure(self, n_needed: int):
        if n_needed <= self.n_arr:
            return
        with self._lock:
            if n_needed <= self.n_arr:
                return
            self._build(n_needed)

    def _build(self, N: int):
        spec, a = self.spec, self.spec.alpha
        n = np.arange(N + 2, dtype=float)
        r = _reference_coeffs(self.H, N + 1)
        safe = np.where(n > 0, n, 1.0)
        d = self.k * (2 * n + 1) * (spec.g(safe) * safe ** (-a) - spec.g_inf * r)
        d[0] = 0.0
        # suffix sums sum_{n > U} d_n = (closed-form total) - (prefix sum)
        m = spec.table_end
        ell = np.arange(1, m + 1, dtype=float)
        w_total = np.sum((2 * ell + 1) * spec.g(ell) * ell ** (-a)) + spec.g_inf * _tail_sum(a, m + 1)
        total = self.k * (w_total - spec.g_inf * self.r_total)
        dsuf = total - np.cumsum(d)
        mpre = np.cumsum(d * n * (n + 1))
        self.bad = np.nonzero((d[1:N + 1] < 0) | (d[2:N + 2] > d[1:N + 1]))[0] + 1
        # rounding of the closed-form total, added to every enclosure
        self.slack = 8.0 * np.finfo(float).eps * (abs(total) + np.sum(np.abs(d)))
        self.d, self.dsuf, self.mpre, self.n_arr = d, dsuf, mpre, N

    def n_mono(self, N: int) -> int:
        """First index from which d is nonnegative and nonincreasing up to N."""
        bad = self.bad[self.bad < N]
        return int(bad[-1] + 1) if len(bad) else 1

    def residual(self, theta: np.ndarray, tol: float, cap: int):
        """sum_n d_n (1 - P_n(cos t)) with absolute error <= tol where reachable."""
        theta = np.asarray(theta, dtype=float)
        x = np.cos(theta)
        s = np.sin(0.5 * theta)
        omx = 2.0 * s * s
        # start on the ladder 1024 * 4^j above a heuristic guess, then climb it
        guess = (self.k * self.spec.alpha * 8.0 / tol) ** (1.0 / (self.spec.alpha - 1.0))
        floor_n = max(2 * guess, self.spec.table_end + 2)
        N = 1024
        while N < floor_n and N < cap:
            N *= 4
        N = min(N, cap)
        while True:
            self.ensure(N)
            val, err, _ = _kernels.remainder_series(
                x, omx, s, self.d, self.dsuf, self.mpre, max(tol - self.slack, 0.0), N, self.n_mono(N))
            err = err + self.slack
            if np.all(err <= tol) or N >= cap:
                return val, err
            N = min(cap, 4 * N)


@lru_cache(maxsize=8)
def _series_for(spec: AngularPowerSpectrum) -> _Series:
    return _Series(spec)


def _chord_power(theta, H):
    return (2.0 * np.sin(0.5 * np.asarray(theta, dtype=float))) ** (2.0 * H)


def _check_theta(theta):
    t = np.asarray(theta, dtype=float)
    if np.any(t < 0) or np.any(t > np.pi * (1 + 1e-12)) or np.any(np.isnan(t)):
        raise ValueError("geodesic distance must lie in [0, pi]")
    return np.clip(t, 0.0, np.pi)


def half_variogram_with_error(spec: AngularPowerSpectrum, theta, policy: TruncationPolicy | None = None):
    """Direct evaluation of h(t) and a certified bound on its truncation error."""
    policy = policy or TruncationPolicy()
    t = _check_theta(theta)
    flat = np.atleast_1d(t).ravel()
    ser = _series_for(spec)
    res, err = ser.residual(flat, policy.tol, policy.cap)
    h = ser.lam * _chord_power(flat, ser.H) + res
    h[flat == 0] = 0.0
    err[flat == 0] = 0.0
    if np.any(err > policy.tol):
        raise TruncationError(
            f"covariance tolerance {policy.tol:g} not reached with degree cap {policy.cap} "
            f"(achieved {err.max():.3g})")
    shape = np.shape(t)
    return h.reshape(shape), err.reshape(shape)


def covariance(spec: AngularPowerSpectrum, theta, policy: TruncationPolicy | None = None):
    """Cov(T_0(x), T_0(y)) at geodesic distance ``theta``, summed to ``policy.tol``."""
    h, _ = half_variogram_with_error(spec, theta, policy)
    out = spec.total_variance - h
    return float(out) if np.ndim(out) == 0 else out


def variogram(spec: AngularPowerSpectrum, theta, policy: TruncationPolicy | None = None):
    """E[(T_0(x) - T_0(y))^2] = 2 (K - covariance)."""
    h, _ = half_variogram_with_error(spec, theta, policy)
    out = np.maximum(2.0 * h, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def c_ell(spec: AngularPowerSpectrum, ell):
    """Normalized angular power c C_l."""
    out = spec.c_ell(ell)
    return float(out) if np.ndim(out) == 0 else out


class CovarianceTable:
    """Cubic spline of the residual series in log t on log-spaced knots.

    The closed-form kernel part is evaluated exactly; only the smooth,
    small residual is interpolated. Below the first knot the residual is
    continued by its leading power law. Built lazily on first use.
    """

    def __init__(self, spec: AngularPowerSpectrum, n_knots: int = 2048,
                 theta_min: float = 1e-8, knot_tol: float = 1e-9):
        self.spec = spec
        self.n_knots = n_knots
        self.theta_min = theta_min
        self.knot_tol = knot_tol
        self._spline = None
        self._lock = threading.Lock()
        self.max_knot_error = None

    def _build(self):
        with self._lock:
            if self._spline is not None:
                return
            ser = _series_for(self.spec)
            knots = np.geomspace(self.theta_min, np.pi, self.n_knots)
            res, err = ser.residual(knots, self.knot_tol, DEFAULT_CAP)
            if np.any(err > DEFAULT_TOL):
                raise TruncationError(
                    f"covariance table: residual enclosure {err.max():.3g} exceeds {DEFAULT_TOL:g}")
            self.max_knot_error = float(err.max())
            self._res0 = res[0]
            self._power = min(2.0, self.spec.alpha - 1.0)
            self._ser = ser
            self._spline = CubicSpline(np.log(knots), res)

    def residual(self, theta):
        if self._spline is None:
            self._build()
        t = np.asarray(theta, dtype=float)
        out = np.empty_like(t)
        small = t < self.theta_min
        out[~small] = self._spline(np.log(t[~small]))
        out[small] = self._res0 * (t[small] / self.theta_min) ** self._power
        return out

    def half_variogram(self, theta):
        t = _check_theta(theta)
        if self._spline is None:
            self._build()
        h = self._ser.lam * _chord_power(t, self._ser.H) + self.residual(t)
        h = np.where(t == 0, 0.0, h)
        return float(h) if np.ndim(h) == 0 else h

    def covariance(self, theta):
        return self.spec.total_variance - self.half_variogram(theta)

    def variogram(self, theta):
        return np.maximum(2.0 * self.half_variogram(theta), 0.0)

    def validate(self, n: int = 1000, seed: int = 0, policy: TruncationPolicy | None = None) -> float:
        """Largest absolute deviation from direct summation at random distances."""
        rng = np.random.default_rng(seed)
        theta = np.exp(rng.uniform(np.log(self.theta_min), np.log(np.pi), n))
        direct, _ = half_variogram_with_error(self.spec, theta, policy or TruncationPolicy(tol=1e-10))
        return float(np.max(np.abs(direct - self.half_variogram(theta))))


@lru_cache(maxsize=32)
def _table_for(spec: AngularPowerSpectrum) -> CovarianceTable:
    return CovarianceTable(spec)


# --------------------------------------------------------------------------
# Rate functions
# --------------------------------------------------------------------------

def rho_alpha(params, r):
    """rho_alpha(r) = r^{alpha/2 - 1}."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    out = r ** (_alpha_of(params) / 2.0 - 1.0)
    return float(out) if out.ndim == 0 else out


def chung_modulus(params, r):
    """phi(r) = r^2 / rho_alpha(r / sqrt(log|log r|))^d for 0 < r < 1/e."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= math.exp(-1.0)):
        raise ValueError("chung_modulus needs 0 < r < 1/e")
    ll = np.log(np.abs(np.log(r)))
    out = r * r / rho_alpha(params, r / np.sqrt(ll)) ** _d_of(params)
    return float(out) if np.ndim(out) == 0 else out


def chung_kappa2(alpha: float, kappa1: float) -> float:
    """Exponent making B(r)^{kappa1 (4 - alpha)} = (log log 1/r)^{alpha/2}."""
    return alpha / (2.0 * kappa1 * (4.0 - alpha))


def band_scale(r: float, kappa2: float, kind: str = "loglog") -> float:
    """B(r) = (log log 1/r)^kappa2 or (log 1/r)^kappa2."""
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    if kind == "loglog":
        base = math.log(math.log(1.0 / r))
    elif kind == "log":
        base = math.log(1.0 / r)
    else:
        raise ValueError(f"B_kind must be 'loglog' or 'log', got {kind!r}")
    if base <= 0:
        raise ValueError(f"B(r) undefined at r={r} for kind {kind!r}")
    return base ** kappa2


def band_limits(params, r: float, kappa1: float, kappa2: float, B_kind: str = "loglog"):
    """Degrees (L, U) = (floor(B^{-kappa1}/r), floor(B^{1-kappa1}/r))."""
    alpha = _alpha_of(params)
    if not 0 < kappa1 <= alpha / 2.0 - 1.0:
        raise ValueError(f"kappa1 must lie in (0, alpha/2 - 1] = (0, {alpha / 2 - 1:g}], got {kappa1}")
    if isinstance(params, ModelParams) and not r < params.delta:
        raise ValueError(f"radius {r} must be smaller than delta={params.delta}")
    B = band_scale(r, kappa2, B_kind)
    L = int(math.floor(B ** (-kappa1) / r))
    U = int(math.floor(B ** (1.0 - kappa1) / r))
    if L < 1 or L >= U:
        raise ValueError(f"empty band (L={L}, U={U}) at r={r}; need B(r) > 1")
    return L, U


class RateFunctions:
    """rho_alpha, phi and B bound to one parameter set."""

    def __init__(self, params: ModelParams):
        self.params = params

    def rho(self, r):
        return rho_alpha(self.params, r)

    def phi(self, r):
        return chung_modulus(self.params, r)

    def B(self, r, kappa2, kind="loglog"):
        return band_scale(r, kappa2, kind)

    def band_limits(self, r, kappa1, kappa2, kind="loglog"):
        return band_limits(self.params, r, kappa1, kappa2, kind)


# --------------------------------------------------------------------------
# Partial sums and tails of the variogram series
# --------------------------------------------------------------------------

def appendix_partial_sum(spec: AngularPowerSpectrum, L: int, theta):
    """sum_{l=1}^{L} w_l (1 - P_l(cos t)), summed exactly."""
    if L < 1:
        raise ValueError("L must be >= 1")
    t = _check_theta(theta)
    flat = np.atleast_1d(t).ravel()
    s = np.sin(0.5 * flat)
    out = _kernels.weighted_q_sum(np.cos(flat), 2 * s * s, spec.weights(int(L)), int(L))
    out = out.reshape(np.shape(t))
    return float(out) if out.ndim == 0 else out


def appendix_tail(spec: AngularPowerSpectrum, U: int) -> float:
    """Upper envelope of sum_{l>=U} w_l (1 - P_l(cos t)), uniform in t.

    Uses 1 - P_l <= 2, w_l <= K l^{1-alpha} and
    sum_{l>=U} l^{1-alpha} <= U^{1-alpha} + U^{2-alpha}/(alpha-2).
    """
    if U < 1:
        raise ValueError("U must be >= 1")
    a = spec.alpha
    m = spec.table_end + 1
    sup_w = float(np.max(spec.weights(m)[1:] * np.arange(1, m + 1) ** (a - 1.0)))
    K = max(spec.K0, sup_w)
    return 2.0 * K * (U ** (2.0 - a) / (a - 2.0) + U ** (1.0 - a))


def variogram_tail(spec: AngularPowerSpectrum, U: int, theta, policy: TruncationPolicy | None = None):
    """sum_{l>=U} w_l (1 - P_l(cos t)), from the full series minus the head."""
    h, _ = half_variogram_with_error(spec, theta, policy or TruncationPolicy(tol=1e-11))
    head = appendix_partial_sum(spec, U - 1, theta) if U > 1 else 0.0
    return h - head
