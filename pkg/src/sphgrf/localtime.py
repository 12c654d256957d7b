"""Occupation measures and histogram estimates of the local time L(t, D).

A realization is given on quadrature nodes x_i with area weights w_i.  The
occupation measure of a level box I is sum of w_i over T(x_i) in I, and the
local time estimate on a bin of side h is that measure divided by h^d.
Bins are half-open, so every value falls in exactly one bin and the total
mass sum L h^d equals the total weight for every grid.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LevelGrid:
    """Axis-aligned grid in R^d: bin k covers [lower + k h, lower + (k+1) h) per axis."""

    lower: tuple
    h: tuple
    counts: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        h = tuple(float(x) for x in np.atleast_1d(self.h))
        c = tuple(int(x) for x in np.atleast_1d(self.counts))
        if len(h) == 1 and len(lo) > 1:
            h = h * len(lo)
        if not len(lo) == len(h) == len(c):
            raise ValueError("lower, h and counts must have the same dimension")
        if any(x <= 0 for x in h):
            raise ValueError("bin width must be positive")
        if any(x < 1 for x in c):
            raise ValueError("need at least one bin per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "counts", c)

    @property
    def d(self) -> int:
        return len(self.h)

    @property
    def bin_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def upper(self) -> tuple:
        return tuple(l + c * h for l, c, h in zip(self.lower, self.counts, self.h))

    @classmethod
    def covering(cls, values, h, anchor=0.0) -> "LevelGrid":
        """Smallest grid with bin width ``h`` covering ``values`` ((n, d) or (n,)),
        aligned so that ``anchor`` is a bin centre."""
        v = np.asarray(values, dtype=float)
        v = v.reshape(-1, 1) if v.ndim == 1 else v.reshape(-1, v.shape[-1])
        d = v.shape[1]
        h = np.broadcast_to(np.asarray(h, dtype=float), (d,))
        anchor = np.broadcast_to(np.asarray(anchor, dtype=float), (d,))
        origin = anchor - 0.5 * h
        k_lo = np.floor((v.min(axis=0) - origin) / h)
        k_hi = np.floor((v.max(axis=0) - origin) / h)
        return cls(tuple(origin + k_lo * h), tuple(h), tuple((k_hi - k_lo + 1).astype(int)))

    def shifted(self, offset) -> "LevelGrid":
        off = np.broadcast_to(np.asarray(offset, dtype=float), (self.d,))
        return LevelGrid(tuple(np.asarray(self.lower) + off), self.h, self.counts)

    def centers(self, axis: int = 0) -> np.ndarray:
        return self.lower[axis] + (np.arange(self.counts[axis]) + 0.5) * self.h[axis]

    def bin_index(self, t) -> tuple | None:
        """Multi-index of the bin containing level ``t``, or None outside the grid."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.floor((t - np.asarray(self.lower)) / np.asarray(self.h)).astype(int)
        if np.any(k < 0) or np.any(k >= np.asarray(self.counts)):
            return None
        return tuple(int(x) for x in k)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "h": list(self.h), "counts": list(self.counts)}


@dataclass
class LocalTimeEstimate:
    """Per-bin estimate L(t, D) on a :class:`LevelGrid` (array of shape ``grid.counts``)."""

    grid: LevelGrid
    values: np.ndarray
    total_mass: float
    n_nodes: int
    region: object = None
    provenance: dict = field(default_factory=dict)

    def at(self, t) -> float:
        """Estimate in the bin containing ``t`` (0 outside the grid)."""
        k = self.grid.bin_index(t)
        return 0.0 if k is None else float(self.values[k])

    @property
    def mass(self) -> float:
        """sum over bins of L h^d."""
        return float(self.values.sum() * self.grid.bin_volume)

    def to_csv(self, path):
        g = self.grid
        axes = np.meshgrid(*[g.centers(a) for a in range(g.d)], indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"t{a + 1}" for a in range(g.d)] + ["L"])
            for idx in np.ndindex(*g.counts):
                w.writerow([repr(float(ax[idx])) for ax in axes] + [repr(float(self.values[idx]))])


def _as_values(values) -> np.ndarray:
    v = np.asarray(getattr(values, "values", values), dtype=float)
    return v[:, None] if v.ndim == 1 else v


def occupation_measure(values, weights, box) -> float:
    """Total weight of nodes whose value lies in the half-open box [lo, hi).

    ``box`` is ``(lo, hi)`` with scalars or length-d sequences; infinite
    bounds are allowed.
    """
    v = _as_values(values)
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (v.shape[1],))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (v.shape[1],))
    inside = np.all((v >= lo) & (v < hi), axis=1)
    return float(np.sum(np.asarray(weights, dtype=float)[inside]))


def local_time_histogram(values, weights, grid: LevelGrid, region=None) -> LocalTimeEstimate:
    """Occupation mass per bin divided by h^d.

    Raises ValueError if a value falls outside the grid.
    """
    v = _as_values(values)
    w = np.asarray(weights, dtype=float)
    if v.shape[1] != grid.d:
        raise ValueError(f"field has {v.shape[1]} components but grid has dimension {grid.d}")
    k = np.floor((v - np.asarray(grid.lower)) / np.asarray(grid.h)).astype(np.int64)
    counts = np.asarray(grid.counts)
    if np.any(k < 0) or np.any(k >= counts):
        raise ValueError("field values fall outside the level grid")
    flat = np.ravel_multi_index(tuple(k.T), grid.counts)
    mass = np.bincount(flat, weights=w, minlength=int(np.prod(counts))).reshape(grid.counts)
    return LocalTimeEstimate(grid, mass / grid.bin_volume, float(w.sum()), len(w), region)


def local_time_batch(values: np.ndarray, weights: np.ndarray, h: float, levels) -> np.ndarray:
    """Scalar-field estimates at fixed levels for many replicates at once.

    ``values`` is ``(R, n)``; returns ``(R, len(levels))`` with the estimate
    in the bin of width ``h`` centred at each level.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    out = np.empty((v.shape[0], len(levels)))
    for j, t in enumerate(levels):
        inside = np.floor((v - (t - 0.5 * h)) / h) == 0
        out[:, j] = inside @ w / h
    return out


def max_local_time_batch(values: np.ndarray, weights: np.ndarray, h: float, anchor=None) -> np.ndarray:
    """L* for many scalar replicates on grids of width ``h`` with bins centred at ``anchor``.

    ``anchor`` defaults to 0; pass per-replicate values (e.g. T(x0)) for
    shifted grids.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    a = np.zeros(v.shape[0]) if anchor is None else np.broadcast_to(np.asarray(anchor, float), (v.shape[0],))
    k = np.floor((v - a[:, None]) / h + 0.5).astype(np.int64)
    k -= k.min(axis=1, keepdims=True)
    width = int(k.max()) + 1
    flat = k + width * np.arange(v.shape[0])[:, None]
    mass = np.bincount(flat.ravel(), weights=np.broadcast_to(w, v.shape).ravel(),
                       minlength=width * v.shape[0]).reshape(v.shape[0], width)
    return mass.max(axis=1) / h


def max_local_time(estimate: LocalTimeEstimate) -> float:
    """L* estimate: the largest bin value."""
    return float(np.max(estimate.values))


@dataclass
class MomentEstimate:
    mean: float
    stderr: float
    replicates: int
    order: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "replicates": self.replicates, "order": self.order}


def empirical_moment(estimates, t, n: int) -> MomentEstimate:
    """Monte Carlo mean of L(t, D)^n with its standard error.

    ``estimates`` is a sequence of :class:`LocalTimeEstimate` or an array of
    per-replicate values already evaluated at ``t``.
    """
    if n < 1:
        raise ValueError("moment order must be >= 1")
    if len(estimates) and isinstance(estimates[0], LocalTimeEstimate):
        x = np.array([e.at(t) for e in estimates])
    else:
        x = np.asarray(estimates, dtype=float)
    if len(x) < 1000:
        warnings.warn(f"only {len(x)} replicates; moment estimates assume at least 1000", stacklevel=2)
    p = x ** n
    se = float(p.std(ddof=1) / math.sqrt(len(p))) if len(p) > 1 else float("nan")
    return MomentEstimate(float(p.mean()), se, len(p), n)


def moments_to_json(moments: dict, path):
    """Write ``{name: MomentEstimate}`` as JSON."""
    doc = {k: m.to_dict() for k, m in moments.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball in R^d."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def occupation_density_check(values, weights, estimate: LocalTimeEstimate, box):
    """Both sides of the occupation density identity for f = 1_box.

    Returns ``(direct, from_bins, tolerance)`` where ``direct`` is the
    node-weighted integral of f(T), ``from_bins`` is the sum over bins of
    f(centre) L h^d and ``tolerance`` is the mass in bins that straddle the
    box boundary (the only bins where the two can disagree).
    """
    g = estimate.grid
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (g.d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (g.d,))
    direct = occupation_measure(values, weights, (lo, hi))
    mass = estimate.values * g.bin_volume
    centre_in = np.ones(g.counts, dtype=bool)
    straddle = np.zeros(g.counts, dtype=bool)
    for a in range(g.d):
        c = g.centers(a)
        k = np.arange(g.counts[a])
        left = g.lower[a] + k * g.h[a]
        right = g.lower[a] + (k + 1) * g.h[a]
        shape = [1] * g.d
        shape[a] = -1
        centre_in &= ((c >= lo[a]) & (c < hi[a])).reshape(shape)
        cut = ((left < lo[a]) & (right > lo[a])) | ((left < hi[a]) & (right > hi[a]))
        straddle |= np.broadcast_to(cut.reshape(shape), g.counts)
    return direct, float(mass[centre_in].sum()), float(mass[straddle].sum())


def mean_value_bound(total_mass: float, values, h) -> float:
    """Lower bound on the histogram L*: mass / prod(range_i + h)."""
    v = _as_values(values)
    h = np.broadcast_to(np.asarray(h, dtype=float), (v.shape[1],))
    return float(total_mass / np.prod(np.ptp(v, axis=0) + h))


def modulus_inequality_holds(estimate_max: float, total_mass: float, sup_inc: float, h, d: int) -> bool:
    """Check mass <= L* * V_d * (sup_inc + sqrt(d) h)^d.

    All values lie within ``sup_inc`` of any one of them, so the bins that
    carry mass sit inside a ball of radius sup_inc + (bin diagonal); the
    histogram version of the continuum inequality follows.
    """
    hh = float(np.max(np.atleast_1d(h)))
    bound = estimate_max * ball_volume(d) * (sup_inc + math.sqrt(d) * hh) ** d
    return bool(total_mass <= bound * (1 + 1e-12))
