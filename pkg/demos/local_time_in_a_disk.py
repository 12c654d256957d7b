"""Histogram local time of one realization over shrinking disks.

For each radius the scalar field is drawn on near-equal-area nodes in the
disk, binned in level with bin width proportional to rho_alpha(r), and the
maximal local time L* is compared with the scale r^(2 - (alpha-2)/2).

    python demos/local_time_in_a_disk.py
"""
from sphgrf import AngularPowerSpectrum, Disk, SpherePoint, LevelGrid, local_time_histogram, max_local_time
from sphgrf.geometry import fibonacci_grid_in_disk
from sphgrf.localtime import max_local_time_batch, mean_value_bound
from sphgrf.spectrum import rho_alpha
from sphgrf.synthesis import ExactSampler

spec = AngularPowerSpectrum(alpha=3.0)
centre = SpherePoint(1.2, 2.0)
radii = [0.04, 0.02, 0.01, 0.005]

print(f"{'r':>6} {'L* (one draw)':>14} {'mean-value bound':>17} {'E L* (500 draws)':>17} {'E L* / r^1.5':>13}")
for k, r in enumerate(radii):
    pts, w = fibonacci_grid_in_disk(Disk(centre, r), 256)
    h = 0.1 * rho_alpha(spec, r)
    vals = ExactSampler(pts, spec).draw(100 + k, 500)[..., 0]
    est = local_time_histogram(vals[0], w, LevelGrid.covering(vals[0], h))
    lstar = max_local_time_batch(vals, w, h)
    print(f"{r:6.3f} {max_local_time(est):14.4e} {mean_value_bound(w.sum(), vals[0], h):17.4e} "
          f"{lstar.mean():17.4e} {lstar.mean() / r ** 1.5:13.4f}")
print("the last column is roughly constant: E L* scales like r^(2 - (alpha - 2)/2)")
