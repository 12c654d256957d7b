"""Points, distances and regions on the unit sphere.

Point sets are passed around as ``(n, 3)`` float arrays of unit vectors;
:class:`SpherePoint` is the scalar convenience type.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SpherePoint:
    """A point of S^2 given by colatitude ``theta`` and longitude ``phi``."""

    theta: float
    phi: float
    xyz: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"colatitude {self.theta} outside [0, pi]")
        phi = float(np.mod(self.phi, TWO_PI))
        object.__setattr__(self, "phi", phi)
        st = np.sin(self.theta)
        v = np.array([st * np.cos(phi), st * np.sin(phi), np.cos(self.theta)])
        v.flags.writeable = False
        object.__setattr__(self, "xyz", v)

    @classmethod
    def from_xyz(cls, v) -> "SpherePoint":
        theta, phi = to_spherical(np.asarray(v, dtype=float))
        return cls(float(theta), float(phi))

    @classmethod
    def north(cls) -> "SpherePoint":
        return cls(0.0, 0.0)

    @classmethod
    def south(cls) -> "SpherePoint":
        return cls(np.pi, 0.0)


@dataclass(frozen=True)
class Disk:
    """Open geodesic disk D(center, radius)."""

    center: SpherePoint
    radius: float

    def __post_init__(self):
        if not 0.0 < self.radius <= np.pi:
            raise ValueError(f"disk radius must lie in (0, pi], got {self.radius}")

    @property
    def area(self) -> float:
        return disk_area(self)

    def contains(self, xyz) -> np.ndarray:
        return geodesic_distance(self.center.xyz, xyz) < self.radius


@dataclass(frozen=True)
class AngularSection:
    """Section {colatitude <= theta_max, 0 <= longitude <= phi_max} at the north pole."""

    theta_max: float
    phi_max: float

    def __post_init__(self):
        if not 0.0 <= self.theta_max <= np.pi:
            raise ValueError(f"theta_max {self.theta_max} outside [0, pi]")
        if not 0.0 <= self.phi_max < TWO_PI:
            raise ValueError(f"phi_max {self.phi_max} outside [0, 2pi)")

    @property
    def area(self) -> float:
        return section_area(self)

    def contains(self, xyz) -> np.ndarray:
        theta, phi = to_spherical(xyz)
        return (theta <= self.theta_max) & (phi <= self.phi_max)


def _xyz(p) -> np.ndarray:
    if isinstance(p, SpherePoint):
        return p.xyz
    return np.asarray(p, dtype=float)


def to_cartesian(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def to_spherical(xyz):
    """Return (colatitude, longitude in [0, 2pi)) of unit vectors."""
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    theta = np.arctan2(np.hypot(x, y), z)
    phi = np.mod(np.arctan2(y, x), TWO_PI)
    return theta, phi


def geodesic_distance(a, b):
    """Great-circle distance arccos<a, b>, evaluated as atan2(|a x b|, <a, b>).

    The atan2 form keeps full relative accuracy for nearly coincident and
    nearly antipodal points, where arccos of the clamped inner product loses
    half the digits. Broadcasts over leading axes.
    """
    a = _xyz(a)
    b = _xyz(b)
    cross = np.cross(a, b)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.arctan2(np.linalg.norm(cross, axis=-1), dot)


def pairwise_distances(p, q=None) -> np.ndarray:
    """Matrix of geodesic distances between rows of ``p`` and ``q``."""
    p = np.asarray(p, dtype=float)
    q = p if q is None else np.asarray(q, dtype=float)
    dot = np.clip(p @ q.T, -1.0, 1.0)
    # |a x b|^2 = |a|^2 |b|^2 - <a,b>^2 loses accuracy at small angles; use the
    # explicit cross product instead.
    cx = p[:, None, 1] * q[None, :, 2] - p[:, None, 2] * q[None, :, 1]
    cy = p[:, None, 2] * q[None, :, 0] - p[:, None, 0] * q[None, :, 2]
    cz = p[:, None, 0] * q[None, :, 1] - p[:, None, 1] * q[None, :, 0]
    out = np.arctan2(np.sqrt(cx * cx + cy * cy + cz * cz), dot)
    if q is p:
        np.fill_diagonal(out, 0.0)
    return out


def disk_area(d: Disk) -> float:
    """Spherical area 2 pi (1 - cos r) of a geodesic disk."""
    # 1 - cos r = 2 sin^2(r/2) avoids cancellation for small r
    return 4.0 * np.pi * np.sin(0.5 * d.radius) ** 2


def section_area(v: AngularSection) -> float:
    """Spherical area phi (1 - cos theta) of an angular section."""
    return v.phi_max * 2.0 * np.sin(0.5 * v.theta_max) ** 2


def frame(center) -> np.ndarray:
    """Rotation matrix whose third column is ``center``.

    Maps the north pole to ``center``; columns one and two span the tangent
    plane there.
    """
    c = _xyz(center)
    c = c / np.linalg.norm(c)
    helper = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - np.dot(helper, c) * c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    return np.column_stack([e1, e2, c])


def _polar_to_xyz(center, s, az) -> np.ndarray:
    """Points at geodesic distance ``s`` and azimuth ``az`` around ``center``."""
    local = np.stack([np.sin(s) * np.cos(az), np.sin(s) * np.sin(az), np.cos(s)], axis=-1)
    return local @ frame(center).T


def sample_uniform_in_disk(d: Disk, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points i.i.d. uniform (area measure) in the open disk ``d``.

    Inverse CDF in the distance: 1 - cos s is uniform on [0, 1 - cos r).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    u = rng.random(n)
    az = rng.random(n) * TWO_PI
    s = 2.0 * np.arcsin(np.sqrt(u) * np.sin(0.5 * d.radius))
    return _polar_to_xyz(d.center, s, az)


def fibonacci_grid_in_disk(d: Disk, n: int):
    """Deterministic near-equal-area nodes in ``d`` with equal weights.

    Returns ``(xyz, weights)``; weights sum to the disk area. Node ``i``
    sits on the equal-area ring (i + 1/2)/n, rotated by the golden angle.
    A single node is placed at the centre.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    area = disk_area(d)
    if n == 1:
        return d.center.xyz[None, :].copy(), np.array([area])
    i = np.arange(n)
    s = 2.0 * np.arcsin(np.sqrt((i + 0.5) / n) * np.sin(0.5 * d.radius))
    az = np.mod(i * GOLDEN_ANGLE, TWO_PI)
    return _polar_to_xyz(d.center, s, az), np.full(n, area / n)


def grid_in_section(v: AngularSection, n_theta: int, n_phi: int):
    """Equal-area product grid on an angular section: ``(xyz, weights)``."""
    if n_theta < 1 or n_phi < 1:
        raise ValueError("grid sizes must be positive")
    u = (np.arange(n_theta) + 0.5) / n_theta
    theta = 2.0 * np.arcsin(np.sqrt(u) * np.sin(0.5 * v.theta_max))
    phi = (np.arange(n_phi) + 0.5) / n_phi * v.phi_max
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    xyz = to_cartesian(tt.ravel(), pp.ravel())
    return xyz, np.full(n_theta * n_phi, section_area(v) / (n_theta * n_phi))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation matrix in SO(3)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def point_at(center, distance: float, azimuth: float = 0.0) -> np.ndarray:
    """Unit vector at a given geodesic distance and azimuth from ``center``."""
    return _polar_to_xyz(center, np.asarray(distance, float), np.asarray(azimuth, float))
