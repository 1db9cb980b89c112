"""Scenario documents: JSON with fixed field names, merged over an embedded default."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .planner import EgoModel
from .predictor import OVModel
from .sim import ReferenceSpec, TrialConfig

SCHEMA_VERSION = 1
_NESTED = ("reference", "solver")


class ConfigError(ValueError):
    pass


def default_document() -> dict:
    text = resources.files("prfmpc").joinpath("data/default_scenario.json").read_text()
    return json.loads(text)


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown field {where}{key!r}")
        if key in _NESTED and not where:
            if not isinstance(value, dict):
                raise ConfigError(f"field {key!r} must be an object")
            out[key] = _merge(base[key], value, f"{key}.")
        else:
            out[key] = value
    return out


@dataclass
class ScenarioConfig:
    trial: TrialConfig
    trials: int
    parallel: int
    output_dir: str
    document: dict  # fully resolved, echoed into summaries


def _vec(doc, key, n):
    try:
        v = [float(x) for x in doc[key]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key!r} must be a list of numbers") from exc
    if len(v) != n:
        raise ConfigError(f"{key!r} needs {n} entries")
    return tuple(v)


def _pairs(doc, key):
    try:
        rows = tuple(tuple(float(x) for x in row) for row in doc[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key!r} must be a list of [low, high] pairs") from exc
    if len(rows) != 2 or any(len(r) != 2 or r[0] > r[1] for r in rows):
        raise ConfigError(f"{key!r} needs two [low, high] pairs with low <= high")
    return rows


def from_document(doc: dict) -> ScenarioConfig:
    if doc.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported scenario version {doc.get('version')!r}")
    try:
        dt = float(doc["dt"])
        ov = OVModel(np.array(_vec(doc, "ov_nominal_velocity", 2)),
                     np.array(doc["ov_velocity_cov"], dtype=float), dt)
        ref = ReferenceSpec(**{k: float(v) for k, v in doc["reference"].items()})
        ego = EgoModel(dt, _pairs(doc, "velocity_bounds"), _pairs(doc, "input_bounds"))
        solver = doc["solver"]
        trial = TrialConfig(
            horizon=int(doc["horizon"]),
            epsilon=float(doc["epsilon"]),
            gamma=float(doc["gamma"]),
            safe_radius=float(doc["safe_radius"]),
            ego_init=_vec(doc, "ego_init", 4),
            ov_init=_vec(doc, "ov_init", 2),
            reference=ref,
            ov=ov,
            ego=ego,
            input_weight=float(doc["input_weight"]),
            solver_tol=float(solver["tol"]),
            solver_max_iter=None if solver["max_iter"] is None else int(solver["max_iter"]),
            seed=int(doc["seed"]),
        )
        trials, parallel = int(doc["trials"]), int(doc["parallel"])
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if trials < 1 or parallel < 1:
        raise ConfigError("trials and parallel must be >= 1")
    return ScenarioConfig(trial, trials, parallel, str(doc["output_dir"]), doc)


def load_config(path=None, overrides: dict | None = None) -> ScenarioConfig:
    """Read a scenario file (or none), fill gaps from the default, apply overrides."""
    doc = default_document()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError("scenario document must be a JSON object")
        doc = _merge(doc, user)
    if overrides:
        doc = _merge(doc, overrides)
    return from_document(doc)
