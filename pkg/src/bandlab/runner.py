"""Config loading, parallel execution, CSV/manifest persistence and run merging."""
from __future__ import annotations

import csv
import json
import math
import numbers
import os
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .experiments import EXPERIMENTS, ConfigError

SCHEMA_VERSION = 1


# ---------------------------------------------------------------- config

def parse_value(text: str):
    """CLI values use YAML scalars and flow collections: ``8``, ``0.5``, ``[1, 2]``, ``null``."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from None


def _key(node: dict, part: str, full: str):
    if part in node:
        return part
    if part.isdigit() and int(part) in node:
        return int(part)
    raise ConfigError(f"unknown config key {full!r}")


def _set_dotted(cfg: dict, key: str, value) -> None:
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node[_key(node, p, key)]
        if not isinstance(node, dict):
            raise ConfigError(f"unknown config key {key!r}")
    node[_key(node, parts[-1], key)] = value


def _merge(cfg: dict, update: dict, prefix: str = "") -> None:
    for k, v in update.items():
        key = f"{prefix}{k}"
        kk = _key(cfg, str(k), key)
        if isinstance(v, dict) and isinstance(cfg[kk], dict):
            _merge(cfg[kk], v, key + ".")
        else:
            cfg[kk] = v


def load_config(experiment: str, path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file (YAML, or a previous manifest), then dotted overrides."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(EXPERIMENTS)}")
    cfg = json.loads(json.dumps(EXPERIMENTS[experiment].defaults))
    cfg = _restore_keys(cfg)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        if "schema_version" in data and "config" in data:
            data = data["config"]
        data = dict(data)
        named = data.pop("experiment", experiment)
        if named != experiment:
            raise ConfigError(f"config is for experiment {named!r}, not {experiment!r}")
        _merge(cfg, data)
    for k, v in (overrides or {}).items():
        _set_dotted(cfg, k, v)
    EXPERIMENTS[experiment].validate(cfg)
    return cfg


def _restore_keys(obj):
    # JSON round-trips turn integer dict keys into strings
    if isinstance(obj, dict):
        return {(int(k) if isinstance(k, str) and k.isdigit() else k): _restore_keys(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_keys(v) for v in obj]
    return obj


# ---------------------------------------------------------------- CSV

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "True" if v else "False"
    if isinstance(v, numbers.Integral):
        return str(int(v))
    if isinstance(v, numbers.Real):
        return "%.17g" % float(v)
    return str(v)


def parse_cell(s: str):
    if s in ("True", "False"):
        return s == "True"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_csv(records: list[dict], path: Path) -> None:
    cols: list[str] = []
    for r in records:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(cols)
        for r in records:
            w.writerow([format_value(r[c]) if c in r else "" for c in cols])


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: parse_cell(v) for k, v in row.items() if v != ""} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- execution

def worker_count() -> int:
    env = os.environ.get("BANDLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"BANDLAB_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("BANDLAB_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def _call(task):
    fn, kwargs = task
    return fn(**kwargs)


def execute(tasks: list, workers: int | None = None) -> list[dict]:
    """Run tasks on a process pool and concatenate their records in task order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(tasks) <= 1:
        chunks = [_call(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            chunks = list(pool.map(_call, tasks))
    return [r for chunk in chunks for r in chunk]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, numbers.Integral):
        return int(obj)
    if isinstance(obj, numbers.Real):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def run(experiment: str, cfg: dict, out: str | Path | None = None, workers: int | None = None) -> dict:
    """Execute an experiment, write ``records.csv`` and ``manifest.json``, return the manifest."""
    exp = EXPERIMENTS[experiment]
    tasks = exp.tasks(cfg)
    records = execute(tasks, workers)
    summary, checks = exp.summarize(cfg, [dict(r) for r in records])
    seeds = [t[1]["seed"] for t in tasks if "seed" in t[1]]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool": "bandlab",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "experiment": experiment,
        "config": cfg,
        "seed": cfg.get("seed"),
        "seeds": seeds,
        "records": len(records),
        "summary": summary,
        "checks": checks,
        "passed": all(checks.values()),
    }
    manifest = _jsonable(manifest)
    out = Path(out or cfg.get("out") or Path("runs") / experiment)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(records, out / "records.csv")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    manifest["records_path"] = str(out / "records.csv")
    return manifest


def summarize(paths) -> dict:
    """Merge runs of one experiment and recompute the summary from the raw records."""
    paths = [Path(p) for p in paths]
    if not paths:
        raise ConfigError("no manifests given")
    manifests = []
    for p in paths:
        try:
            manifests.append(json.loads(p.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {p}: {exc}") from None
    for p, m in zip(paths, manifests):
        if m.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"{p}: schema version {m.get('schema_version')} != {SCHEMA_VERSION}")
    names = {m["experiment"] for m in manifests}
    if len(names) != 1:
        raise ConfigError(f"manifests mix experiments {sorted(names)}")
    name = names.pop()
    records = []
    for p in paths:
        records.extend(read_csv(p.parent / "records.csv"))
    cfg = _restore_keys(manifests[0]["config"])
    summary, checks = EXPERIMENTS[name].summarize(cfg, records)
    return _jsonable({"schema_version": SCHEMA_VERSION, "experiment": name, "runs": len(paths),
                      "records": len(records), "seeds": [s for m in manifests for s in m.get("seeds", [])],
                      "summary": summary, "checks": checks, "passed": all(checks.values())})
