import json
import math

import numpy as np
import pytest

from sphgrf.experiments import (ConfigError, ExperimentConfig, ExperimentResult, Runner, REGISTRY,
                                list_experiments, run_experiment, experiment_seed, cell_seed, fit_slope,
                                bootstrap_slope_se, section_predictor, band_tail_threshold)
from sphgrf.geometry import AngularSection

MODEL = {"alpha": 3.0}

# small configurations that exercise every experiment in a few seconds
SMOKE = {
    "variogram-scaling": {"replicates": 200},
    "slnd": {"replicates": 40, "options": {"n_max": 6}},
    "small-ball": {"replicates": 300, "nodes": 32},
    "chung-lil": {"replicates": 30, "nodes": 24, "options": {"k_range": [4, 7]}},
    "local-time-modulus": {"replicates": 60, "nodes": 64},
    "local-time-moments": {"replicates": 200, "nodes": 32},
    "joint-continuity": {"replicates": 20, "nodes": 256},
    "bandlimited-tail": {"replicates": 100, "nodes": 16, "radii": [0.04], "options": {"l_cap_factor": 2}},
    "appendix-bounds": {},
    "occupation-density": {"replicates": 5, "nodes": 64},
}


def make(name, **over):
    return ExperimentConfig.from_dict({"name": name, **SMOKE.get(name, {}), **over}, model=MODEL, seed=11)


def test_registry_lists_everything():
    names = [n for n, _ in list_experiments()]
    assert names == sorted(names)
    assert set(SMOKE) == set(names)
    assert "variogram-scaling" in names and "chung-lil" in names


@pytest.mark.parametrize("name", sorted(SMOKE))
def test_smoke_runs_and_serializes(name, tmp_path):
    res = run_experiment(make(name))
    assert isinstance(res, ExperimentResult)
    doc = json.loads(res.to_json())
    assert doc["name"] == name and set(doc["checks"]) and isinstance(doc["passed"], bool)
    assert doc["provenance"]["config"]["name"] == name
    paths = res.write(tmp_path)
    assert all(p.exists() for p in paths)


@pytest.mark.parametrize("name", ["slnd", "chung-lil", "local-time-modulus"])
def test_thread_count_does_not_change_results(name):
    cfg = make(name)
    assert run_experiment(cfg, Runner(1)).to_json() == run_experiment(cfg, Runner(3)).to_json()


def test_defaults_and_merging():
    cfg = ExperimentConfig.from_dict({"name": "chung-lil", "options": {"k_range": [4, 6]}}, model=MODEL)
    assert cfg.replicates == REGISTRY["chung-lil"].defaults["replicates"]
    assert cfg.options == {"ladder": "geometric", "k_range": [4, 6]}
    assert cfg.delta == 0.1
    cfg = ExperimentConfig.from_dict("appendix-bounds", model={"alpha": 3.0, "d": 1, "gamma": 0.4}, seed=5)
    assert cfg.seed == 5 and cfg.gamma == 0.4
    assert cfg.k1 == pytest.approx(0.5) and cfg.k2 == pytest.approx(3.0)


@pytest.mark.parametrize("doc, model, field", [
    ({"name": "nope"}, MODEL, "name"),
    ({"name": "slnd"}, {"alpha": 5.0}, "alpha"),
    ({"name": "slnd"}, {}, "alpha"),
    ({"name": "slnd"}, {"alpha": 3.0, "d": 4}, "model"),
    ({"name": "slnd", "frobnicate": 1}, MODEL, "frobnicate"),
    ({"name": "small-ball", "radii": [0.01, 0.06]}, MODEL, "radii"),
    ({"name": "small-ball", "replicates": 5}, MODEL, "replicates"),
    ({"name": "slnd", "kappa1": 0.9}, MODEL, "kappa1"),
    ({"name": "slnd", "B_kind": "sqrt"}, MODEL, "B_kind"),
])
def test_config_errors_name_the_field(doc, model, field):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict(doc, model=model)
    assert e.value.field == field


def test_alpha_error_cites_interval():
    with pytest.raises(ConfigError, match=r"\(2, 4\)"):
        ExperimentConfig.from_dict({"name": "slnd"}, model={"alpha": 5})


def test_runtime_config_errors():
    with pytest.raises(ConfigError):
        run_experiment(make("slnd", options={"distance_range": [1e-3, 0.03]}))
    with pytest.raises(ConfigError):
        run_experiment(make("variogram-scaling", radii=[]))


def test_seeds():
    assert experiment_seed(1, "slnd") == experiment_seed(1, "slnd")
    assert experiment_seed(1, "slnd") != experiment_seed(1, "chung-lil")
    assert experiment_seed(1, "slnd") != experiment_seed(2, "slnd")
    assert cell_seed(5, 0) != cell_seed(5, 1)
    assert 0 <= experiment_seed(3, "x") < 2 ** 63


def test_digest_changes_with_config():
    a = make("slnd")
    assert a.digest() == make("slnd").digest()
    assert a.digest() != make("slnd", replicates=41).digest()


def test_fit_helpers():
    x = np.log([1.0, 2.0, 4.0, 8.0])
    slope, se = fit_slope(x, 1.5 * x + 2)
    assert slope == pytest.approx(1.5) and se == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(0)
    samples = [np.exp(1.5 * xi) * rng.exponential(size=400) for xi in x]
    se = bootstrap_slope_se(x, samples, lambda s: s.mean(axis=1), seed=1)
    assert 0 < se < 0.2


def test_predictors():
    v1 = AngularSection(0.02, 1.0)
    assert section_predictor(v1, v1, 3.0) == 0.0
    v2 = AngularSection(0.01, 0.5)
    expected = (0.5 * 0.01 ** 2 + 0.5 * (0.02 ** 2 - 0.01 ** 2)) ** 0.75
    assert section_predictor(v1, v2, 3.0) == pytest.approx(expected)
    assert band_tail_threshold(0.01, 1.0, 0.5, 3.0) == 0.0
    assert band_tail_threshold(0.01, math.e, 0.5, 3.0) == pytest.approx(math.e ** -0.25 * 0.1)


def test_nan_written_as_null():
    res = ExperimentResult("x", True, {"v": float("nan"), "a": np.float64(1.0)}, [], {"ok": np.bool_(True)}, {})
    doc = json.loads(res.to_json())
    assert doc["summary"] == {"v": None, "a": 1.0} and doc["checks"] == {"ok": True}


def test_ladder_checked_at_config_time():
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({"name": "chung-lil", "delta": 0.05}, model=MODEL)
    assert e.value.field == "radii" and "0.0625" in str(e.value)
    cfg = ExperimentConfig.from_dict({"name": "chung-lil"}, model=MODEL)
    assert cfg.effective_radii == tuple(2.0 ** -k for k in range(4, 11))
    with pytest.raises(ConfigError, match="ladder"):
        ExperimentConfig.from_dict({"name": "chung-lil", "options": {"ladder": "spiral"}}, model=MODEL)
