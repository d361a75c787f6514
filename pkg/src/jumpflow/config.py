"""Experiment configuration: defaults, TOML loading, overrides and validation.

Precedence (lowest first): built-in defaults, config file, ``--set key=value``
flags, the ``LAB_SEED`` environment variable, the ``--seed`` flag.  Only
``master_seed`` can be overridden from the environment.
"""
from __future__ import annotations

import copy
import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigInvalid

# Every numeric default, by section.
DEFAULTS = {
    "master_seed": 20240611,
    "measure": {
        "kind": "isotropic",  # isotropic | cylindrical | discrete
        "d": 1,
        "alpha": 1.5,
        "c": 0.25,  # intensity of the radial density c |z|^{-d-alpha}
        "R": 1.0,  # support radius
        "c0": 0.3,  # (A1) constant
        "rho": 0.5,  # (A1) radius threshold
        "atoms": [],  # discrete kind only: list of d-vectors
        "weights": [],
        "levels": 24,  # radial panels of the quadrature
        "eps": 0.02,  # small-jump cutoff of the sampler
    },
    "grid": {"L": 8.0, "N": 256},
    "sigma": {
        "kind": "identity",  # identity | matrix | wave
        "matrix": [],
        "amplitude": 0.0,  # wave: sigma(x) = (1 + amplitude sin(pi k x / L)) I
        "k": 1,
    },
    "drift": {
        "kind": "holder",  # zero | constant | holder
        "beta": 0.6,
        "amplitude": 1.0,
        "seed": 3,
        "value": [],
    },
    "analysis": {
        "bernstein_trials": 100,
        "bernstein_p": [2.0, 4.0],
        "commutator_betas": [0.5, 0.7],
        "commutator_N": 1024,
        "lp_fields": 50,
    },
    "resolvent": {
        "lambda": 2.0,
        "tolerance": 1e-10,
        "residual_tol": 1e-6,
        "max_iters": 500,
        "gamma": 0.3,
        "p": 2.0,
        "wave_k": 5,
    },
    "zvonkin": {"target": 0.5, "lambda_start": 1.0, "lambda_cap": 65536.0, "roundtrip_points": 1000},
    "sde": {
        "T": 1.0,
        "dt": 1e-3,
        "paths": 10,
        "picard_tol": 1e-12,
        "n_max": 60,
        "x0": [0.3],
        "halvings": 4,
        "flow_h": 1e-3,
    },
    "malliavin": {"T": 0.5, "paths": 4, "samples": 10, "r_grid": [0.1, 0.25, 0.4]},
    "pbp": {"T": 1.0, "dt": 1e-3, "paths": 5, "refinements": 4, "tolerance": 1e-4, "beta": 0.5,
            "amplitude": 0.25},
    "output": {"root": "runs", "dir": "default"},
}


def _merge(base, new, where=""):
    for key, val in new.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigInvalid(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigInvalid(f"{path!r} must be a table")
            _merge(base[key], val, path + ".")
        else:
            base[key] = val


def _coerce(template, raw, key):
    """Parse a --set value to the type of its default."""
    if isinstance(template, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, list):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{key}: expected a JSON list, got {raw!r}") from exc
    return raw


def apply_set(cfg, item):
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigInvalid(f"--set expects key=value, got {item!r}")
    node, default = cfg, DEFAULTS
    parts = key.strip().split(".")
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigInvalid(f"unknown config section in {key!r}")
        node, default = node[p], default[p]
    leaf = parts[-1]
    if leaf not in node:
        raise ConfigInvalid(f"unknown config key {key!r}")
    node[leaf] = _coerce(default[leaf], raw.strip(), key)


def validate(cfg):
    m = cfg["measure"]
    if m["kind"] not in ("isotropic", "cylindrical", "discrete"):
        raise ConfigInvalid(f"measure.kind {m['kind']!r} not recognised")
    if m["d"] not in (1, 2):
        raise ConfigInvalid("measure.d must be 1 or 2")
    if not 0 < m["alpha"] < 2:
        raise ConfigInvalid("measure.alpha must lie in (0, 2)")
    if not 0 < m["eps"] < m["R"]:
        raise ConfigInvalid("measure.eps must lie in (0, R)")
    if cfg["sigma"]["kind"] not in ("identity", "matrix", "wave"):
        raise ConfigInvalid("sigma.kind must be identity, matrix or wave")
    if cfg["drift"]["kind"] not in ("zero", "constant", "holder"):
        raise ConfigInvalid("drift.kind must be zero, constant or holder")
    for sec, key in (("sde", "T"), ("sde", "dt"), ("pbp", "T"), ("pbp", "dt"), ("malliavin", "T"),
                     ("resolvent", "lambda")):
        if not cfg[sec][key] > 0:
            raise ConfigInvalid(f"{sec}.{key} must be positive")
    if len(cfg["sde"]["x0"]) != m["d"]:
        raise ConfigInvalid("sde.x0 must have measure.d entries")
    if os.path.isabs(cfg["output"]["dir"]) or ".." in cfg["output"]["dir"].split(os.sep):
        raise ConfigInvalid("output.dir must be relative to output.root")
    return cfg


def load_config(path=None, sets=(), seed=None, environ=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigInvalid(f"{path}: {exc}") from exc
        _merge(cfg, data)
    for item in sets:
        apply_set(cfg, item)
    environ = os.environ if environ is None else environ
    if environ.get("LAB_SEED"):
        cfg["master_seed"] = int(environ["LAB_SEED"])
    if seed is not None:
        cfg["master_seed"] = int(seed)
    return validate(cfg)
