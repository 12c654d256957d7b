import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st, HealthCheck
from hypothesis.extra.numpy import arrays

from sphgrf.localtime import (LevelGrid, LocalTimeEstimate, occupation_measure, local_time_histogram,
                              local_time_batch, max_local_time_batch, max_local_time, empirical_moment,
                              moments_to_json, ball_volume, occupation_density_check, mean_value_bound,
                              modulus_inequality_holds)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_grid_basics():
    g = LevelGrid.covering(np.array([0.04, 0.26]), 0.1, anchor=0.0)
    np.testing.assert_allclose(g.lower, [-0.05])
    assert g.counts == (4,)
    assert g.bin_index(0.0) == (0,)
    assert g.bin_index(0.05) == (1,)  # half-open: the right edge belongs to the next bin
    assert g.bin_index(10.0) is None
    np.testing.assert_allclose(g.centers(), [0.0, 0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        LevelGrid((0.0,), (0.0,), (1,))
    assert LevelGrid((0.0, 0.0), (0.5,), (2, 3)).bin_volume == 0.25


def test_uniform_levels_give_flat_density():
    v = (np.arange(1000) + 0.5) / 1000
    w = np.full(1000, 2e-3)
    g = LevelGrid((0.0,), (0.1,), (10,))
    est = local_time_histogram(v, w, g)
    np.testing.assert_allclose(est.values, 2.0)
    assert est.at(0.55) == pytest.approx(2.0) and est.at(3.0) == 0.0
    assert max_local_time(est) == pytest.approx(2.0)


def test_histogram_rejects_out_of_grid():
    with pytest.raises(ValueError, match="outside"):
        local_time_histogram(np.array([5.0]), np.array([1.0]), LevelGrid((0.0,), (1.0,), (2,)))


def test_occupation_measure_half_open():
    v = np.array([0.0, 0.5, 1.0])
    w = np.array([1.0, 2.0, 4.0])
    assert occupation_measure(v, w, (0.0, 1.0)) == 3.0
    assert occupation_measure(v, w, (-np.inf, np.inf)) == 7.0


@settings(max_examples=80, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(arrays(float, st.integers(1, 60), elements=finite), st.floats(0.01, 2.0))
def test_mass_conservation_any_field(values, h):
    w = np.linspace(1.0, 2.0, len(values))
    g = LevelGrid.covering(values, h)
    est = local_time_histogram(values, w, g)
    assert est.mass == pytest.approx(w.sum(), rel=1e-12)
    assert max_local_time(est) >= mean_value_bound(w.sum(), values, h) * (1 - 1e-12)
    sup = float(np.ptp(values))
    assert modulus_inequality_holds(max_local_time(est), w.sum(), sup, h, 1)


def test_two_dimensional_histogram(rng):
    v = rng.standard_normal((500, 2))
    w = np.full(500, 0.01)
    g = LevelGrid.covering(v, 0.25)
    est = local_time_histogram(v, w, g)
    assert est.values.shape == g.counts
    assert est.mass == pytest.approx(5.0)
    assert modulus_inequality_holds(max_local_time(est), 5.0, np.max(np.linalg.norm(v - v[0], axis=1)) * 2,
                                    0.25, 2)


def test_batch_estimators_match_histogram(rng):
    v = rng.standard_normal((4, 200))
    w = rng.uniform(0.5, 1.5, 200)
    h = 0.3
    batch = local_time_batch(v, w, h, [0.0, 0.6])
    mx = max_local_time_batch(v, w, h, anchor=v[:, 0])
    for i in range(4):
        g = LevelGrid.covering(v[i], h, anchor=0.0)
        est = local_time_histogram(v[i], w, g)
        assert batch[i, 0] == pytest.approx(est.at(0.0))
        assert batch[i, 1] == pytest.approx(est.at(0.6))
        shifted = local_time_histogram(v[i], w, LevelGrid.covering(v[i], h, anchor=v[i, 0]))
        assert mx[i] == pytest.approx(max_local_time(shifted))


def test_occupation_density_identity(rng):
    v = rng.standard_normal((300, 1))
    w = np.full(300, 1 / 300)
    est = local_time_histogram(v, w, LevelGrid.covering(v, 0.1))
    direct, from_bins, boundary = occupation_density_check(v, w, est, (-0.33, 0.71))
    assert abs(direct - from_bins) <= boundary + 1e-15
    # a box aligned with bin edges has no straddling bins and the identity is exact
    lo = est.grid.lower[0] + 3 * est.grid.h[0]
    hi = est.grid.lower[0] + 8 * est.grid.h[0]
    direct, from_bins, boundary = occupation_density_check(v, w, est, (lo, hi))
    assert boundary == 0.0 and direct == pytest.approx(from_bins, abs=1e-14)


def test_empirical_moment(tmp_path):
    x = np.arange(1, 2001, dtype=float) / 1000
    m = empirical_moment(x, 0.0, 2)
    assert m.mean == pytest.approx(np.mean(x ** 2))
    assert m.stderr == pytest.approx(np.std(x ** 2, ddof=1) / math.sqrt(2000))
    with pytest.warns(UserWarning, match="replicates"):
        empirical_moment(x[:10], 0.0, 1)
    with pytest.raises(ValueError):
        empirical_moment(x, 0.0, 0)
    moments_to_json({"m2": m}, tmp_path / "m.json")
    assert '"order": 2' in (tmp_path / "m.json").read_text()


def test_moment_from_estimates():
    g = LevelGrid((0.0,), (1.0,), (1,))
    ests = [LocalTimeEstimate(g, np.array([float(k)]), 1.0, 1) for k in range(1000)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = empirical_moment(ests, 0.5, 1)
    assert m.mean == pytest.approx(499.5)


def test_ball_volume():
    assert ball_volume(1) == pytest.approx(2.0)
    assert ball_volume(2) == pytest.approx(math.pi)
    assert ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_estimate_csv(tmp_path):
    est = local_time_histogram(np.array([0.1, 0.2]), np.array([1.0, 1.0]), LevelGrid((0.0,), (0.5,), (1,)))
    est.to_csv(tmp_path / "lt.csv")
    lines = (tmp_path / "lt.csv").read_text().splitlines()
    assert lines[0] == "t1,L" and lines[1] == "0.25,4.0"
