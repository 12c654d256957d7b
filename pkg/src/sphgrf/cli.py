"""Command-line runner: ``sphgrf run | validate | list``.

A run config is a JSON object::

    {
      "seed": 20240101,
      "threads": 1,
      "model": {"alpha": 3.0, "d": 1, "gamma": 0.4},
      "experiments": ["variogram-scaling", {"name": "chung-lil", "replicates": 200}]
    }

``model`` holds the fields shared by every experiment; an experiment entry
may override any of them.  Each experiment draws from its own seed derived
from the master seed and the experiment name, so adding or removing an
experiment never changes the numbers of the others.

Exit status: 0 when every experiment passes, 1 when any fails, 2 on a
configuration error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .experiments import (ConfigError, ExperimentConfig, Runner, experiment_seed, list_experiments,
                          run_experiment)
from .spectrum import band_limits, rho_alpha

OUT_ENV = "SPHGRF_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
TOP_LEVEL = {"seed", "threads", "model", "experiments"}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def load_config(path) -> tuple[dict, str]:
    """Parse a run config; returns the document and the sha256 of its bytes."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError("config", f"cannot read {path}: {e.strerror or e}") from None
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a JSON object")
    unknown = set(doc) - TOP_LEVEL
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level field")
    return doc, hashlib.sha256(raw).hexdigest()


def build_configs(doc: dict, seed_override: int | None = None) -> tuple[int, list[ExperimentConfig]]:
    """Validate every experiment entry; returns (master seed, configs)."""
    seed = doc.get("seed", 0) if seed_override is None else seed_override
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    model = doc.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("model", "must be a JSON object")
    entries = doc.get("experiments")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("experiments", "must be a non-empty list")
    configs, seen = [], set()
    for i, entry in enumerate(entries):
        name = entry if isinstance(entry, str) else (entry or {}).get("name") if isinstance(entry, dict) else None
        if not isinstance(name, str):
            raise ConfigError(f"experiments[{i}].name", "missing or not a string")
        if name in seen:
            raise ConfigError(f"experiments[{i}].name", f"{name!r} is listed twice")
        seen.add(name)
        try:
            cfg = ExperimentConfig.from_dict(entry, model=model, seed=experiment_seed(seed, name))
        except ConfigError as e:
            raise ConfigError(f"experiments[{i}] ({name}).{e.field}", str(e).split(": ", 1)[-1]) from None
        configs.append(cfg)
    return seed, configs


def _threads(doc: dict, override: int | None) -> int:
    t = override if override is not None else doc.get("threads", os.cpu_count() or 1)
    if isinstance(t, bool) or not isinstance(t, int) or t < 1:
        raise ConfigError("threads", "must be a positive integer")
    return t


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(config_path, out_dir=None, seed_override: int | None = None, threads: int | None = None,
        stdout=None, stderr=None) -> int:
    """Execute a run config and write results plus ``manifest.json`` into ``out_dir``."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    started = _now()
    try:
        doc, config_hash = load_config(config_path)
        seed, configs = build_configs(doc, seed_override)
        n_threads = _threads(doc, threads)
        out_dir = out_dir or os.environ.get(OUT_ENV)
        if not out_dir:
            raise ConfigError("out", f"no output directory: pass --out or set {OUT_ENV}")
    except ConfigError as e:
        print(f"config error: {e}", file=stderr)
        return EXIT_CONFIG
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(n_threads)
    outputs, status = {}, {}
    for cfg in configs:
        try:
            result = run_experiment(cfg, runner)
        except ConfigError as e:
            print(f"config error: {cfg.name}.{e}", file=stderr)
            return EXIT_CONFIG
        # Experiments run one after another and only this loop touches the disk.
        paths = result.write(out)
        outputs[cfg.name] = [p.name for p in paths]
        status[cfg.name] = bool(result.passed)
        print(f"{'PASS' if result.passed else 'FAIL'}\t{cfg.name}", file=stdout, flush=True)
    manifest = {
        "version": __version__,
        "config_path": str(config_path),
        "config_hash": config_hash,
        "seed": seed,
        "experiment_seeds": {c.name: c.seed for c in configs},
        "started": started,
        "finished": _now(),
        "outputs": outputs,
        "passed": status,
        "environment": {"threads": n_threads, "python": sys.version.split()[0]},
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if all(status.values()) else EXIT_FAIL


def validate(config_path, stdout=None, stderr=None) -> int:
    """Check a config without running it and echo the derived exponents and band limits."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        doc, _ = load_config(config_path)
        _, configs = build_configs(doc)
        _threads(doc, None)
    except ConfigError as e:
        print(f"config error: {e}", file=stderr)
        return EXIT_CONFIG
    for cfg in configs:
        p = cfg.params
        gamma = "unset" if p.gamma is None else f"{p.gamma:g}"
        eta = "unset" if p.eta is None else f"{p.eta:g}"
        line = (f"{cfg.name}: alpha={cfg.spectrum.alpha:g} d={p.d} beta={p.beta:g} "
                f"gamma0={p.gamma0:g} gamma={gamma} eta={eta} delta={p.delta:g}")
        print(line, file=stdout)
        for r in cfg.effective_radii:
            try:
                L, U = band_limits(p, r, cfg.k1, cfg.k2, cfg.B_kind)
                band = f"L={L} U={U}"
            except ValueError as e:
                band = f"band n/a ({e})"
            print(f"  r={r:g} rho={rho_alpha(p, r):.6g} {band}", file=stdout)
    return EXIT_OK


def list_cmd(stdout=None) -> int:
    stdout = stdout or sys.stdout
    for name, desc in list_experiments():
        print(f"{name}\t{desc}", file=stdout)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sphgrf", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiments of a config and write results")
    p.add_argument("config", help="path to the JSON run config")
    p.add_argument("--out", default=None,
                   help=f"output directory (default: ${OUT_ENV})")
    p.add_argument("--seed", type=int, default=None, help="override the master seed of the config")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: config value, else CPU count); results do not depend on it")
    p = sub.add_parser("validate", help="validate a config and print derived quantities")
    p.add_argument("config", help="path to the JSON run config")
    sub.add_parser("list", help="list experiments, one 'name<TAB>description' per line")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.out, args.seed, args.threads)
    if args.command == "validate":
        return validate(args.config)
    return list_cmd()


if __name__ == "__main__":
    sys.exit(main())
