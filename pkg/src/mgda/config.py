"""Run configuration: nested defaults, a JSON file, and dotted ``key=value`` overrides
(precedence: command line > file > defaults)."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .data import ConfigError

DEFAULTS = {
    "out": "runs/default",
    "jobs": 1,
    "maze": {"name": "umaze", "kind": "continuous", "legs": 2, "cuts": None, "reverse_prob": 0.5},
    "data": {"n_traj": 500, "T": 100, "noise": 0.1, "seed": 0},
    "dynamics": {"lam": 1.0, "alpha_slack": 0.1, "epochs": 10, "lr": 1e-3, "hidden": [64, 64],
                 "batch": 256, "constrained": True, "seed": 0, "held_out_frac": 0.2},
    "cluster": {"C": None, "max_iters": 100, "seed": 0},
    "augment": {"strategy": "none", "eps_prob": 0.5, "delta": 0.5, "reach_check": "candidate_action",
                "retries": 8, "seed": 0},
    "weights": {"kind": "discount", "gamma": 0.99},
    "train": {"steps": 20000, "lr": 3e-4, "batch": 256, "hidden": [64, 64], "seed": 0, "gamma_geom": None},
    "eval": {"n_pairs": 100, "T_max": None, "n_boot": 1000, "delta": 0.5, "seed": 0, "in_distribution": True},
    "audit": {"n_per_controller": 10, "C": 4, "cluster_seed": 0, "n_draws": 10000, "dyn_epochs": 60,
              "eps_prob": 0.5, "delta": 0.5, "seed": 1},
    "theorems": {"gamma": 0.9, "C": 4, "n_samples": 100000, "n_traj": 200, "T": 20, "delta": 1.5,
                 "dyn_epochs": 30, "seed": 0},
    "sweep": {"sizes": [1, 2, 4], "strategies": ["none", "sgda", "tgda", "mgda"], "seeds": [0]},
}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        key = f"{path}{k}"
        if k not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {key!r} must be a mapping")
            out[k] = merge(out[k], v, key + ".")
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    dotted, raw = item.split("=", 1)
    update = node = {}
    parts = dotted.strip().split(".")
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = _parse_value(raw)
    return merge(cfg, update)


def load_config(path=None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            cfg = merge(cfg, json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: line {exc.lineno}: {exc.msg}") from None
    for item in overrides:
        cfg = apply_override(cfg, item)
    return cfg


def canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
