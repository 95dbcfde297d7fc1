"""Command line entry point: ``bandlab <experiment> [--config FILE] [--key value ...]``."""
from __future__ import annotations

import argparse
import json
import sys

from .experiments import EXPERIMENTS, ConfigError
from .runner import load_config, parse_value, run, summarize

USAGE = """bandlab <experiment> [--config FILE] [--out DIR] [--key value ...]
       bandlab run <experiment> ...
       bandlab summarize MANIFEST [MANIFEST ...] [--out FILE]

experiments: """ + ", ".join(EXPERIMENTS)


def _overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"option --{key} needs a value")
            val = extra[i + 1]
            i += 2
        out[key.replace("-", "_") if "." not in key else key] = parse_value(val)
    return out


def _run(argv: list[str]) -> int:
    ap = argparse.ArgumentParser(prog="bandlab", usage=USAGE)
    ap.add_argument("experiment")
    ap.add_argument("--config")
    ap.add_argument("--out")
    ns, extra = ap.parse_known_args(argv)
    cfg = load_config(ns.experiment, ns.config, _overrides(extra))
    manifest = run(ns.experiment, cfg, ns.out)
    for name, ok in manifest["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {ns.experiment}:{name}")
    print(f"records: {manifest['records_path']}")
    return 0 if manifest["passed"] else 1


def _summarize(argv: list[str]) -> int:
    ap = argparse.ArgumentParser(prog="bandlab summarize")
    ap.add_argument("manifests", nargs="*")
    ap.add_argument("--out")
    ns = ap.parse_args(argv)
    report = summarize(ns.manifests)
    text = json.dumps(report, indent=2) + "\n"
    if ns.out:
        with open(ns.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if report["passed"] else 1


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else 2
    try:
        if argv[0] == "summarize":
            return _summarize(argv[1:])
        if argv[0] == "run":
            argv = argv[1:]
        return _run(argv)
    except ConfigError as exc:
        print(f"bandlab: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
