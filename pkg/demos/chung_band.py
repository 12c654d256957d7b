"""Chung-normalized sup increments along a dyadic ladder of radii.

Runs the ``chung-lil`` experiment at a reduced size through the library API
and prints the per-radius quantiles of
sup_{D(x, r)} |T(y) - T(x)| / rho_alpha(r / sqrt(log log 1/r)).

    python demos/chung_band.py
"""
from sphgrf.experiments import ExperimentConfig, run_experiment

cfg = ExperimentConfig.from_dict({"name": "chung-lil", "replicates": 100}, model={"alpha": 3.0}, seed=3)
res = run_experiment(cfg)
print(f"{'r':>10} {'q05':>7} {'median':>7} {'q95':>7}")
for row in res.per_radius:
    print(f"{row['radius']:10.6f} {row['q05']:7.3f} {row['median']:7.3f} {row['q95']:7.3f}")
s = res.summary
print(f"log-log drift {s['slope']:+.3f} +/- {s['slope_stderr']:.3f}; checks: {res.checks}")
