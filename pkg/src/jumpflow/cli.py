"""Command line entry point: ``jumpflow <subcommand> --config FILE [--set k=v]... [--seed N]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import LabError
from .experiments import PIPELINES

log = logging.getLogger("jumpflow")

SUBCOMMANDS = list(PIPELINES) + ["all"]


def build_id():
    """Version plus a hash of the package sources (stable within one build)."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(subcommand, cfg):
    """Run one pipeline (or all) and write artifacts; returns the report dict."""
    names = list(PIPELINES) if subcommand == "all" else [subcommand]
    out = Path(cfg["output"]["root"]) / cfg["output"]["dir"]
    out.mkdir(parents=True, exist_ok=True)
    modules, timings, manifest = {}, {}, {}
    passed = True
    for name in names:
        log.info("running %s", name)
        t0 = time.perf_counter()
        res = PIPELINES[name](cfg)
        timings[name] = time.perf_counter() - t0
        for fname, text in sorted(res["artifacts"].items()):
            rel = f"{name}/{fname}"
            target = out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text)
            manifest[rel] = sha256_file(target)
        modules[name] = {"checks": res["checks"], "report": res["report"],
                         "pass": all(res["checks"].values())}
        passed &= modules[name]["pass"]
        for check, ok in res["checks"].items():
            log.info("  %-40s %s", check, "pass" if ok else "FAIL")
    report = {"subcommand": subcommand, "build": build_id(), "config": cfg, "modules": modules,
              "pass": passed, "timings": timings, "manifest": manifest}
    report = _jsonable(report)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    return report


def parser():
    ap = argparse.ArgumentParser(prog="jumpflow", description="Numerical laboratory for jump SDEs "
                                 "with singular drift: measures, resolvents, Zvonkin transform, Picard.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", help="TOML config file (defaults are used for missing keys)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key, e.g. --set sde.paths=20 (repeatable)")
    ap.add_argument("--seed", type=int, help="master seed (overrides LAB_SEED and the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed)
        report = run(args.subcommand, cfg)
    except (LabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, mod in report["modules"].items():
        print(f"{name}: {'pass' if mod['pass'] else 'FAIL'}")
    print(f"report: {os.path.join(cfg['output']['root'], cfg['output']['dir'], 'report.json')}")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
