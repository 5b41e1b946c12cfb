"""Run configuration: defaults, schema validation, and object building.

A run is fully described by one JSON document.  User configs are deep-merged
over the defaults below, validated against the shipped schema (unknown keys
are rejected), and echoed verbatim into the run manifest together with a
content hash, so any run can be reproduced from its manifest alone.
"""

from __future__ import annotations

import copy
import hashlib
import importlib.resources
import json
import os

import jsonschema
import numpy as np

from . import data as data_mod
from .device import (DriftModelParams, LARGE_ARRAY, MAC_ARRAY,
                     SyntheticTrajectoryParams, generate_trajectory_bank,
                     load_bank_csv)
from .crossbar import OnExhaustion
from .rules import CFParams, SFFParams
from .trainer import TrainingRun, make_run

__all__ = [
    "ConfigError",
    "DEFAULT_CONFIG",
    "load_config",
    "validate_config",
    "effective_config",
    "config_hash",
    "build_dataset",
    "build_splits",
    "build_bank",
    "build_drift_params",
    "build_training_run",
    "TECH_PROFILES",
]

TECH_PROFILES = {"large_array": LARGE_ARRAY, "mac_array": MAC_ARRAY}

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "repeat": 1,
    "algorithm": "cf",
    "task": {
        "kind": "synthetic",
        "n_classes": 4,
        "n_features": 32,
        "n_per_class": 1000,
        "center_scale": 1.0,
        "noise_sigma": 1.1,
        "seed": 123,
    },
    "split": {"train": 0.6, "val": 0.3, "test": 0.1, "stratified": True, "seed": 5},
    "arch": {"hidden_units": 48, "cluster_size": 12, "single_layer": False},
    "schedule": {
        "batch_size": 16,
        "tau": None,               # null = per-algorithm default
        "learning_rate": 0.05,
        "epochs": None,            # null = per-algorithm default
        "plan_mode": "descent",
        "float_update": "sgd",
    },
    "device": {
        "tech": "large_array",
        "gain_kappa": 5e4,
        "pre_pulse_max": 50,
        "on_exhaustion": "skip",
    },
    "bank": {
        "count": 1268,
        "seed": None,              # null = derived from the run seed
        "path": None,
        "params": {
            "g0_mean": 100e-6,
            "g0_sigma": 10e-6,
            "decrement_mean": 15e-9,
            "decrement_sigma": 10e-9,
            "decrement_family": "normal",
            "late_onset_fraction": 0.8,
            "late_sigma_factor": 4.0,
            "anomalous_probability": 0.05,
            "p_max": 5000,
        },
    },
    "rules": {
        "token_amplitude": 1.0,
        "sff_inference": "neutral",
        "sff": {"theta_plus": 2.0, "theta_minus": 1.0, "eta": 1},
        "sff_head": {"variant": "temperature", "theta_plus": 0.15,
                     "theta_minus": 0.15, "eta": 1},
        "cf_first": {"variant": "temperature", "theta_plus": 0.15,
                     "theta_minus": 0.15, "eta": -1},
        "cf_last": {"variant": "temperature", "theta_plus": 0.15,
                    "theta_minus": 0.15, "eta": 1},
    },
    "drift": {
        "sigma_core": 0.8e-6,
        "sigma_tail": 6e-6,
        "targets": [[8.0, 3e-6, 0.941], [90.0, 3e-6, 0.907]],
    },
}


class ConfigError(ValueError):
    """Configuration rejected by the schema or semantically invalid."""


def _schema() -> dict:
    resource = importlib.resources.files("memgrad.schemas") / "run_config.schema.json"
    return json.loads(resource.read_text())


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate_config(cfg: dict):
    try:
        jsonschema.validate(cfg, _schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc


def effective_config(user_cfg: dict | None = None,
                     overrides: dict | None = None) -> dict:
    """Defaults <- config file <- CLI overrides, validated."""
    cfg = DEFAULT_CONFIG
    if user_cfg:
        validate_config(user_cfg)
        cfg = _deep_merge(cfg, user_cfg)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    user_cfg = None
    if path is not None:
        try:
            with open(path) as f:
                user_cfg = json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(user_cfg, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    # MEMGRAD_SEED is the global seed fallback: it applies only when neither
    # the config file nor the CLI pinned a seed.
    env_seed = os.environ.get("MEMGRAD_SEED")
    cfg = effective_config(user_cfg, overrides)
    if env_seed is not None and "seed" not in (user_cfg or {}) \
            and "seed" not in (overrides or {}):
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"MEMGRAD_SEED is not an integer: {env_seed!r}") from exc
        validate_config(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def build_dataset(cfg: dict) -> data_mod.FeatureDataset:
    task = cfg["task"]
    if task["kind"] == "synthetic":
        return data_mod.make_cluster_task(
            n_classes=task["n_classes"], n_features=task["n_features"],
            n_per_class=task["n_per_class"], center_scale=task["center_scale"],
            noise_sigma=task["noise_sigma"], seed=task["seed"])
    if task["kind"] == "csv":
        if "path" not in task:
            raise ConfigError("task.kind=csv needs task.path")
        return data_mod.load_feature_csv(task["path"])
    if task["kind"] == "idx":
        if "images" not in task or "labels" not in task:
            raise ConfigError("task.kind=idx needs task.images and task.labels")
        return data_mod.load_idx(task["images"], task["labels"])
    raise ConfigError(f"unknown task kind {task['kind']!r}")


def build_splits(cfg: dict, dataset: data_mod.FeatureDataset):
    s = cfg["split"]
    spec = data_mod.SplitSpec(train=s["train"], val=s["val"], test=s["test"],
                              stratified=s["stratified"], seed=s["seed"])
    return data_mod.split(dataset, spec)


def build_bank(cfg: dict, run_seed: int):
    bank_cfg = cfg["bank"]
    if bank_cfg.get("path"):
        return load_bank_csv(bank_cfg["path"])
    params = SyntheticTrajectoryParams(**bank_cfg["params"])
    seed = bank_cfg["seed"]
    if seed is None:
        # one bank per run, tied to the run seed
        seed = int(np.random.SeedSequence([run_seed, 0xBA9C]).generate_state(1)[0])
    return generate_trajectory_bank(params, bank_cfg["count"], seed)


def build_drift_params(cfg: dict) -> DriftModelParams:
    d = cfg["drift"]
    return DriftModelParams(sigma_core=d["sigma_core"], sigma_tail=d["sigma_tail"],
                            targets=tuple(tuple(t) for t in d["targets"]))


def _rule_params_from_config(cfg: dict, algorithm: str):
    rules = cfg["rules"]
    rule = algorithm.removeprefix("float_")
    if rule == "bp":
        return None
    if rule == "sff":
        return [SFFParams(**rules["sff"]), CFParams(**rules["sff_head"])]
    return [CFParams(**rules["cf_first"]), CFParams(**rules["cf_last"])]


def build_training_run(cfg: dict, seed: int, dataset: data_mod.FeatureDataset,
                       bank=None) -> TrainingRun:
    """Instantiate a TrainingRun for one seed from an effective config."""
    algorithm = cfg["algorithm"]
    if not algorithm.startswith("float_") and bank is None:
        bank = build_bank(cfg, seed)
    arch, sched, dev, rules = cfg["arch"], cfg["schedule"], cfg["device"], cfg["rules"]
    run = make_run(
        algorithm, dataset.n_features, dataset.n_classes, seed,
        bank=bank, tech=TECH_PROFILES[dev["tech"]],
        hidden_units=arch["hidden_units"], cluster_size=arch["cluster_size"],
        single_layer=arch["single_layer"], gain_kappa=dev["gain_kappa"],
        pre_pulse_max=dev["pre_pulse_max"], tau=sched["tau"],
        batch_size=sched["batch_size"], learning_rate=sched["learning_rate"],
        epochs=sched["epochs"], token_amplitude=rules["token_amplitude"],
        plan_mode=sched["plan_mode"],
        rule_params=_rule_params_from_config(cfg, algorithm))
    run.schedule.float_update = sched["float_update"]
    run.sff_inference = rules["sff_inference"]
    run.on_exhaustion = OnExhaustion(dev["on_exhaustion"])
    return run
