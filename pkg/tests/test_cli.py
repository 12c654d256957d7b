import io
import json
import subprocess
import sys

import pytest
from hypothesis import given, settings, strategies as st, HealthCheck

from sphgrf import cli

QUICK = {"seed": 3, "threads": 1, "model": {"alpha": 3.0, "d": 1, "gamma": 0.4},
         "experiments": ["appendix-bounds", {"name": "occupation-density", "replicates": 3, "nodes": 32}]}


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return p


def call(fn, *args, **kw):
    out, err = io.StringIO(), io.StringIO()
    code = fn(*args, stdout=out, stderr=err, **kw)
    return code, out.getvalue(), err.getvalue()


def test_run_writes_results_and_manifest(tmp_path):
    code, out, _ = call(cli.run, write(tmp_path, QUICK), tmp_path / "out")
    assert code == 0
    assert out.splitlines() == ["PASS\tappendix-bounds", "PASS\toccupation-density"]
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["seed"] == 3 and man["environment"]["threads"] == 1
    for files in man["outputs"].values():
        for f in files:
            assert (tmp_path / "out" / f).exists()
    assert not list((tmp_path / "out").glob(".*tmp"))


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, QUICK)
    assert call(cli.run, cfg, tmp_path / "a")[0] == 0
    assert call(cli.run, cfg, tmp_path / "b", threads=2)[0] == 0
    for f in ("appendix-bounds.json", "occupation-density.json", "occupation-density.raw.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override_changes_results(tmp_path):
    cfg = write(tmp_path, QUICK)
    call(cli.run, cfg, tmp_path / "a")
    call(cli.run, cfg, tmp_path / "b", seed_override=4)
    f = "occupation-density.raw.csv"
    assert (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()


def test_failing_experiment_exit_code(tmp_path):
    # a zero tolerance on the appendix stability factor cannot be met
    doc = dict(QUICK, experiments=[{"name": "appendix-bounds", "tolerance": 1.0}])
    code, out, _ = call(cli.run, write(tmp_path, doc), tmp_path / "out")
    assert code == 1 and out.startswith("FAIL")
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["passed"] == {"appendix-bounds": False}


def test_alpha_outside_range(tmp_path):
    doc = dict(QUICK, model={"alpha": 5})
    code, _, err = call(cli.run, write(tmp_path, doc), tmp_path / "out")
    assert code == 2 and "(2, 4)" in err and "alpha" in err
    assert not (tmp_path / "out").exists()


@pytest.mark.parametrize("doc, needle", [
    ("{not json", "invalid JSON"),
    ('["a"]', "top level"),
    ({"experiments": ["slnd"], "colour": 1}, "colour"),
    ({"experiments": []}, "experiments"),
    ({"model": {"alpha": 3}, "experiments": ["slnd", "slnd"]}, "twice"),
    ({"model": {"alpha": 3}, "experiments": ["slnd"], "seed": -1}, "seed"),
    ({"model": {"alpha": 3}, "experiments": ["slnd"], "threads": 0}, "threads"),
    ({"model": {"alpha": 3}, "experiments": [{"name": "small-ball", "radii": [0.01, 0.2]}]}, "radius 0.2"),
    ({"model": {"alpha": 3, "d": 4}, "experiments": ["slnd"]}, "beta"),
])
def test_config_errors(tmp_path, doc, needle):
    code, _, err = call(cli.validate, write(tmp_path, doc))
    assert code == 2 and needle in err


def test_unreadable_config(tmp_path):
    code, _, err = call(cli.run, tmp_path / "missing.json", tmp_path / "out")
    assert code == 2 and "cannot read" in err


def test_missing_out_dir(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUT_ENV, raising=False)
    code, _, err = call(cli.run, write(tmp_path, QUICK), None)
    assert code == 2 and cli.OUT_ENV in err
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env_out"))
    assert call(cli.run, write(tmp_path, QUICK), None)[0] == 0
    assert (tmp_path / "env_out" / "manifest.json").exists()


def test_validate_echoes_derived_quantities(tmp_path):
    doc = {"model": {"alpha": 3.0, "d": 1, "gamma": 0.4}, "experiments": [{"name": "small-ball"}]}
    code, out, _ = call(cli.validate, write(tmp_path, doc))
    assert code == 0
    assert "beta=3 " in out and "eta=1.1 " in out and "gamma0=1 " in out
    assert "r=0.02 " in out and "L=" in out and "U=" in out


def test_list_is_stable():
    a, b = io.StringIO(), io.StringIO()
    cli.list_cmd(a)
    cli.list_cmd(b)
    assert a.getvalue() == b.getvalue()
    names = [line.split("\t")[0] for line in a.getvalue().splitlines()]
    assert "variogram-scaling" in names and "chung-lil" in names


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sphgrf", "list"], capture_output=True, text=True)
    assert res.returncode == 0 and "chung-lil\t" in res.stdout
    res = subprocess.run([sys.executable, "-m", "sphgrf", "run", "--help"], capture_output=True, text=True)
    assert "--threads" in res.stdout and "--seed" in res.stdout and cli.OUT_ENV in res.stdout


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(alpha=st.one_of(st.floats(-10, 2.0), st.floats(4.0, 50)))
def test_property_alpha_outside_is_config_error(tmp_path, alpha):
    doc = {"model": {"alpha": alpha}, "experiments": ["appendix-bounds"]}
    code, _, err = call(cli.validate, write(tmp_path, doc))
    assert code == 2 and "(2, 4)" in err


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(alpha=st.floats(2.05, 3.95), d=st.integers(1, 3))
def test_property_validate_matches_beta_guard(tmp_path, alpha, d):
    doc = {"model": {"alpha": alpha, "d": d}, "experiments": ["appendix-bounds"]}
    code, out, err = call(cli.validate, write(tmp_path, doc))
    beta = 4 - (alpha - 2) * d
    if beta > 0:
        assert code == 0 and f"beta={beta:g}" in out
    else:
        assert code == 2 and "beta" in err


def test_fresh_process_matches_in_process(tmp_path):
    """Cold caches in a new interpreter give the same bytes as a warm in-process run."""
    doc = dict(QUICK, experiments=QUICK["experiments"] + [{"name": "variogram-scaling"}])
    cfg = write(tmp_path, doc)
    call(cli.run, cfg, tmp_path / "warm")
    res = subprocess.run([sys.executable, "-m", "sphgrf", "run", str(cfg), "--out", str(tmp_path / "cold")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    for f in ("appendix-bounds.json", "occupation-density.json", "variogram-scaling.json"):
        assert (tmp_path / "warm" / f).read_bytes() == (tmp_path / "cold" / f).read_bytes()
