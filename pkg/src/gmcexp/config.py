"""TOML run configuration: validation, defaults and conversion to :class:`RunConfig`.

Example::

    [model]
    beta2 = 0.4
    q = 2
    d = 1

    [ladder]
    k_min = 4          # eps = 2^-k for k = k_min..k_max
    k_max = 9

    [run]
    estimator = "annealed_naive"
    replicas = 20000
    seed = 1

A run manifest (JSON) written by the CLI is also accepted; its ``config``
section is used verbatim.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ParameterError
from .estimators import RunConfig, dyadic_eps, make_ladder
from .theory import ModelParams

ESTIMATORS = ("quenched", "annealed_naive", "annealed_tilted", "participation")

DEFAULTS = {
    "model": {"beta2": None, "q": 2.0, "d": 1},
    "ladder": {
        "eps": None,
        "k_min": 4,
        "k_max": 9,
        "resolution": 2.0,
        "n_per_side": None,
        "max_points": 8192,
    },
    "kernel": {"g_const": 0.0, "jitter_cap": 1e-8},
    "run": {
        "estimator": "annealed_naive",
        "replicas": 1000,
        "seed": 0,
        "tilt": "none",
        "u_policy": "uniform",
        "is_integrand": "ratio",
    },
    "probe": {"q": 2.0, "s": 0.5, "t": 0.5, "c_exp": 1.0, "points_per_box": 5, "q_list": [3.0, 4.0]},
    "sweep": {"beta2": None},
}


class ConfigError(ParameterError):
    pass


def _merge(doc: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for section, body in doc.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key '{section}.{key}'")
            out[section][key] = value
    return out


def _number(doc, section, key, kind=float, allow_none=False):
    v = doc[section][key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (kind is int and int(v) != v):
        raise ConfigError(f"'{section}.{key}' must be {'an integer' if kind is int else 'a number'}, got {v!r}")
    return kind(v)


def validate(doc: dict) -> dict:
    """Merge ``doc`` over the defaults and type-check every key."""
    d = _merge(doc)
    for key in ("beta2", "q"):
        _number(d, "model", key, allow_none=(key == "beta2"))
    _number(d, "model", "d", int)
    if d["ladder"]["eps"] is not None:
        eps = d["ladder"]["eps"]
        if not isinstance(eps, list) or not all(isinstance(e, (int, float)) for e in eps):
            raise ConfigError("'ladder.eps' must be a list of numbers")
    else:
        _number(d, "ladder", "k_min", int)
        _number(d, "ladder", "k_max", int)
    _number(d, "ladder", "resolution")
    _number(d, "ladder", "max_points", int)
    nps = d["ladder"]["n_per_side"]
    if nps is not None and (not isinstance(nps, list) or not all(isinstance(n, int) for n in nps)):
        raise ConfigError("'ladder.n_per_side' must be a list of integers")
    _number(d, "kernel", "g_const")
    _number(d, "kernel", "jitter_cap")
    if d["run"]["estimator"] not in ESTIMATORS:
        raise ConfigError(f"'run.estimator' must be one of {ESTIMATORS}, got {d['run']['estimator']!r}")
    _number(d, "run", "replicas", int)
    _number(d, "run", "seed", int)
    tilt = d["run"]["tilt"]
    if not (tilt in ("none", "auto") or (isinstance(tilt, (int, float)) and not isinstance(tilt, bool))):
        raise ConfigError(f"'run.tilt' must be 'none', 'auto' or a number, got {tilt!r}")
    for key in ("q", "s", "t", "c_exp"):
        _number(d, "probe", key)
    _number(d, "probe", "points_per_box", int)
    ql = d["probe"]["q_list"]
    if not isinstance(ql, list) or not ql:
        raise ConfigError("'probe.q_list' must be a non-empty list")
    b2 = d["sweep"]["beta2"]
    if b2 is not None:
        if not isinstance(b2, list) or not b2 or not all(isinstance(b, (int, float)) for b in b2):
            raise ConfigError("'sweep.beta2' must be a non-empty list of numbers")
        if any(b < 0 for b in b2):
            raise ConfigError("'sweep.beta2' entries must be non-negative")
    return d


def load(path) -> tuple[dict, dict]:
    """Read a TOML config or a JSON manifest. Returns ``(validated_doc, manifest_or_empty)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            manifest = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse manifest {path}: {exc}") from None
        if "config" not in manifest:
            raise ConfigError(f"manifest {path} has no 'config' section")
        return validate(manifest["config"]), manifest
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return validate(doc), {}


def eps_values(doc: dict) -> list:
    lad = doc["ladder"]
    if lad["eps"] is not None:
        return [float(e) for e in lad["eps"]]
    return dyadic_eps(lad["k_min"], lad["k_max"])


def params_from(doc: dict, beta2=None, q=None) -> ModelParams:
    m = doc["model"]
    b2 = m["beta2"] if beta2 is None else beta2
    if b2 is None:
        raise ConfigError("'model.beta2' is required")
    return ModelParams(float(b2), float(m["q"] if q is None else q), int(m["d"]))


def ladder_from(doc: dict):
    lad = doc["ladder"]
    return make_ladder(
        eps_values(doc),
        d=int(doc["model"]["d"]),
        resolution=float(lad["resolution"]),
        n_per_side=lad["n_per_side"],
        max_points=int(lad["max_points"]),
    )


def run_config_from(doc: dict, beta2=None, ladder=None, tilt=None) -> RunConfig:
    run = doc["run"]
    return RunConfig(
        params=params_from(doc, beta2),
        ladder=ladder if ladder is not None else ladder_from(doc),
        replicas=int(run["replicas"]),
        master_seed=int(run["seed"]),
        tilt=run["tilt"] if tilt is None else tilt,
        u_policy=run["u_policy"],
        g_const=float(doc["kernel"]["g_const"]),
        jitter_cap=float(doc["kernel"]["jitter_cap"]),
        is_integrand=run["is_integrand"],
    )
