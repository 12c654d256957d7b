"""Realizations of T_0 and of the d-component field T.

Two routes:

* exact sampling on a finite point set through the (anchored) Cholesky
  factor of the covariance matrix, and
* spectral synthesis from random harmonic coefficients, which also gives the
  band split T = T^{L,U} + T^Delta from a single coefficient draw.

Random streams: replicate ``i`` and component ``k`` of a run with master seed
``s`` use ``Generator(PCG64(SeedSequence(s, spawn_key=(i, k))))``, so any
subset of replicates can be regenerated independently and in any order.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .gaussian import JitterPolicy, build_covariance
from .geometry import to_spherical
from .spectrum import AngularPowerSpectrum, ModelParams

L_CAP = 20_000
BINARY_MAGIC = b"SGRFCOLS"
BINARY_VERSION = 1
_HEADER = struct.Struct("<8sIQIq")


def rng_stream(seed: int, replicate: int, component: int = 0) -> np.random.Generator:
    """Independent generator for one (replicate, component) cell of a run."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(component)))
    return np.random.Generator(np.random.PCG64(ss))


def _normals(rng, seed_offset, replicates, d, size):
    """(replicates, d, size) standard normals from a seed (streams) or a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((replicates, d, size))
    out = np.empty((replicates, d, size))
    for i in range(replicates):
        for k in range(d):
            out[i, k] = rng_stream(rng, seed_offset + i, k).standard_normal(size)
    return out


@dataclass
class FieldRealization:
    """Values of a field at points: ``values`` has shape ``(n, d)``."""

    points: np.ndarray
    values: np.ndarray
    method: str
    seed: int | None = None
    replicate: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.points.shape[0]:
            raise ValueError("values and points disagree in length")
        if not self.method:
            raise ValueError("method tag required")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path):
        theta, phi = to_spherical(self.points)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "theta", "phi"] + [f"T{k + 1}" for k in range(self.d)])
            for i in range(self.n):
                w.writerow([repr(float(c)) for c in (*self.points[i], theta[i], phi[i], *self.values[i])])

    def to_binary(self, path):
        """Little-endian header (magic, version, n, d, seed) then float64 columns x, y, z, T1..Td."""
        seed = -1 if self.seed is None else int(self.seed)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, self.n, self.d, seed))
            cols = np.column_stack([self.points, self.values]).astype("<f8")
            fh.write(np.ascontiguousarray(cols.T).tobytes())

    @classmethod
    def from_binary(cls, path, method: str = "binary") -> "FieldRealization":
        raw = Path(path).read_bytes()
        magic, version, n, d, seed = _HEADER.unpack_from(raw)
        if magic != BINARY_MAGIC:
            raise ValueError("not a realization file (bad magic)")
        if version != BINARY_VERSION:
            raise ValueError(f"unsupported realization file version {version}")
        cols = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(3 + d, n)
        return cls(cols[:3].T.copy(), cols[3:].T.copy(), method, None if seed < 0 else seed)


# --------------------------------------------------------------------------
# Exact sampling
# --------------------------------------------------------------------------

class ExactSampler:
    """Draws T at fixed points from the anchored Cholesky factor.

    The anchored vector (T(p_0), T(p_i) - T(p_0)) is L z; adding the first
    entry back gives T.  Up to the recorded jitter this is exactly the
    Gaussian law with the series covariance.
    """

    def __init__(self, points, spec: AngularPowerSpectrum, jitter_policy: JitterPolicy | None = None):
        self.cov = build_covariance(points, spec, jitter_policy)
        self.points = self.cov.points
        self.spec = spec

    @property
    def jitter(self) -> float:
        return self.cov.jitter

    def transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals (..., n) to field values (..., n)."""
        y = z @ self.cov.chol.T
        t = y + y[..., :1]
        t[..., 0] = y[..., 0]
        return t

    def draw(self, rng, replicates: int, d: int = 1, start: int = 0) -> np.ndarray:
        """Values of shape ``(replicates, n, d)``.

        ``rng`` is a master seed (stream per replicate/component, replicate
        indices ``start .. start + replicates - 1``) or a Generator.
        """
        z = _normals(rng, start, replicates, d, len(self.points))
        return np.moveaxis(self.transform(z), 1, 2)


def exact_sample(points, params, rng, replicates: int = 1,
                 jitter_policy: JitterPolicy | None = None) -> list[FieldRealization]:
    """``replicates`` independent realizations of T (``params.d`` components)."""
    if isinstance(params, AngularPowerSpectrum):
        params = ModelParams(params)
    sampler = ExactSampler(points, params.spectrum, jitter_policy)
    vals = sampler.draw(rng, replicates, params.d)
    seed = None if isinstance(rng, np.random.Generator) else int(rng)
    return [FieldRealization(sampler.points, vals[i], "exact", seed, i, {"jitter": sampler.jitter})
            for i in range(replicates)]


# --------------------------------------------------------------------------
# Spectral synthesis
# --------------------------------------------------------------------------

def column_degrees(l_max: int) -> np.ndarray:
    """Degree l of every column in the real harmonic layout."""
    return np.repeat(np.arange(l_max + 1), 2 * np.arange(l_max + 1) + 1)


def harmonic_basis(points, l_max: int) -> np.ndarray:
    """Real orthonormal spherical harmonics at ``points``: ``(n, (l_max+1)^2)``."""
    if l_max < 0 or l_max > L_CAP:
        raise ValueError(f"l_max must lie in [0, {L_CAP}], got {l_max}")
    theta, phi = to_spherical(np.atleast_2d(points))
    return _kernels.real_harmonic_basis(np.cos(theta), np.sin(theta), phi, int(l_max))


@dataclass
class HarmonicCoefficients:
    """Real-form coefficients ``g`` of shape ``(d, (l_max+1)^2)``.

    For degree l the block holds g_l0, then (g^c_lm, g^s_lm) for m = 1..l,
    each N(0, C_l).  The complex coefficients for Y_lm with the
    Condon-Shortley phase are a_l0 = g_l0 and
    a_lm = (-1)^m (g^c_lm - i g^s_lm)/sqrt(2), a_{l,-m} = (-1)^m conj(a_lm).
    """

    l_max: int
    g: np.ndarray

    @classmethod
    def draw(cls, spec: AngularPowerSpectrum, l_max: int, rng, d: int = 1,
             replicate: int = 0) -> "HarmonicCoefficients":
        if l_max < 0 or l_max > L_CAP:
            raise ValueError(f"l_max must lie in [0, {L_CAP}], got {l_max}")
        std = np.sqrt(spec.c_ell(column_degrees(l_max)))
        z = _normals(rng, replicate, 1, d, len(std))[0]
        return cls(int(l_max), z * std)

    def complex_lm(self, component: int = 0) -> np.ndarray:
        """a[l, l + m] for -l <= m <= l (zero outside the triangle)."""
        L = self.l_max
        g = self.g[component]
        a = np.zeros((L + 1, 2 * L + 1), dtype=complex)
        for l in range(L + 1):
            b = l * l
            a[l, l] = g[b]
            m = np.arange(1, l + 1)
            sign = (-1.0) ** m
            alm = sign * (g[b + 2 * m - 1] - 1j * g[b + 2 * m]) / np.sqrt(2.0)
            a[l, l + m] = alm
            a[l, l - m] = sign * np.conj(alm)
        return a

    def band_mask(self, L: int, U: int) -> np.ndarray:
        deg = column_degrees(self.l_max)
        return (deg >= L) & (deg <= U)

    def synthesize(self, basis: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        """Field values ``(n, d)`` from a basis matrix, optionally restricted to columns."""
        g = self.g if mask is None else np.where(mask, self.g, 0.0)
        return basis @ g.T


class SpectralSynthesizer:
    """Harmonic synthesis at fixed points, reusing one basis matrix."""

    def __init__(self, points, spec: AngularPowerSpectrum, l_max: int):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.spec = spec
        self.l_max = int(l_max)
        self.basis = harmonic_basis(self.points, self.l_max)
        self.std = np.sqrt(spec.c_ell(column_degrees(self.l_max)))

    def truncation_deficit(self) -> float:
        """Variance missing above l_max."""
        return self.spec.tail_weight(self.l_max + 1)

    def draw(self, rng, replicates: int, d: int = 1, start: int = 0, bands=None):
        """Values ``(replicates, n, d)``; with ``bands`` a list of (L, U) pairs,
        returns one such array per band plus the complement, all from the
        same coefficients."""
        z = _normals(rng, start, replicates, d, len(self.std))
        g = z * self.std
        if bands is None:
            return np.moveaxis(g @ self.basis.T, 1, 2)
        deg = column_degrees(self.l_max)
        out = []
        rest = np.ones(len(deg), dtype=bool)
        for L, U in bands:
            sel = (deg >= L) & (deg <= U)
            rest &= ~sel
            out.append(np.moveaxis(g[..., sel] @ self.basis[:, sel].T, 1, 2))
        out.append(np.moveaxis(g[..., rest] @ self.basis[:, rest].T, 1, 2))
        return out


def spectral_sample(points, spec: AngularPowerSpectrum, l_max: int, rng, d: int = 1) -> FieldRealization:
    """One realization truncated at degree ``l_max``; the variance deficit is recorded."""
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    coeffs = HarmonicCoefficients.draw(spec, l_max, rng, d)
    basis = harmonic_basis(points, l_max)
    seed = None if isinstance(rng, np.random.Generator) else int(rng)
    return FieldRealization(points, coeffs.synthesize(basis), f"spectral({l_max})", seed, 0,
                            {"variance_deficit": spec.tail_weight(l_max + 1)})


def bandlimited_sample(points, spec: AngularPowerSpectrum, L: int, U: int, rng,
                       l_cap: int | None = None, d: int = 1):
    """(T^{L,U}, T^Delta) from one coefficient draw truncated at ``l_cap``.

    T^Delta holds degrees below L and in (U, l_cap]; the two add up to the
    field truncated at ``l_cap`` (default 2U).
    """
    l_cap = 2 * U if l_cap is None else int(l_cap)
    if not 1 <= L < U <= l_cap:
        raise ValueError(f"need 1 <= L < U <= l_cap, got L={L}, U={U}, l_cap={l_cap}")
    coeffs = HarmonicCoefficients.draw(spec, l_cap, rng, d)
    basis = harmonic_basis(points, l_cap)
    band = coeffs.band_mask(L, U)
    seed = None if isinstance(rng, np.random.Generator) else int(rng)
    meta = {"L": L, "U": U, "l_cap": l_cap}
    return (FieldRealization(points, coeffs.synthesize(basis, band), f"bandlimited({L},{U})", seed, 0, meta),
            FieldRealization(points, coeffs.synthesize(basis, ~band), f"remainder({L},{U})", seed, 0, meta))


# --------------------------------------------------------------------------
# Discrete sup of increments
# --------------------------------------------------------------------------

def sup_increment_values(values: np.ndarray) -> np.ndarray:
    """max_{i,j} |v_i - v_j| over the point axis.

    ``values`` has shape ``(..., n, d)``; the Euclidean norm is taken over
    the last axis.  For d = 1 this is max - min.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[-1] == 1:
        return v[..., 0].max(axis=-1) - v[..., 0].min(axis=-1)
    diff = v[..., :, None, :] - v[..., None, :, :]
    return np.sqrt(np.max(np.sum(diff * diff, axis=-1), axis=(-2, -1)))


def sup_increment(realization: FieldRealization, region=None) -> float:
    """Largest ||T(x) - T(y)|| over realization points (inside ``region`` if given)."""
    v = realization.values
    if region is not None:
        v = v[region.contains(realization.points)]
    if len(v) < 2:
        return 0.0
    return float(sup_increment_values(v))
