"""Experiment configuration: JSON file plus ``key=value`` overrides, validated against a fixed schema."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .experiments import GEOMETRIC, K_SMALL
from .linalg import NetworkSpec
from .tasks import TaskSet, from_provenance, read_manifest
from .training import ConfigError, TrainConfig

DEFAULTS = {
    "seed": 0,
    "output": None,
    "data": None,
    "model": {"hidden": [128], "activation": "relu"},
    "mode": {"kind": "shared", "d": None, "l": None, "k": None, "task": 0},
    "search": {"d_grid": list(GEOMETRIC), "l_grid": list(GEOMETRIC), "k_grid": list(K_SMALL),
               "p": 0.9, "lrs": None, "max_amortized": None},
    "training": {"epochs": 400, "lr": 0.01, "weight_decay": 5e-4, "batch_size": 64,
                 "finetune_epochs": 30, "finetune_lr": 1e-4, "eval_split": "val"},
    "compression": {"grids": {}, "finetune": True},
    "certificate": {"delta": 0.05},
    "transfer": {"data": None, "task": 0, "k_new_grid": [0, 5, 10]},
}
OPEN_BLOCKS = {"data", "transfer.data", "compression.grids"}


def _merge(base: dict, new: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in new.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config field {name!r}")
        if isinstance(base[key], dict) and name not in OPEN_BLOCKS:
            if not isinstance(val, dict):
                raise ConfigError(f"config field {name!r} must be an object")
            out[key] = _merge(base[key], val, f"{name}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except ValueError:
        val = raw
    return key.strip().split("."), val


def load_config(path=None, overrides=()) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
    for text in overrides:
        keys, val = parse_override(text)
        node = user
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {text!r}: {key!r} is not an object")
        node[keys[-1]] = val
    cfg = _merge(DEFAULTS, user)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    mode = cfg["mode"]
    if mode["kind"] not in ("direct", "single", "shared"):
        raise ConfigError(f"mode.kind must be direct, single or shared, not {mode['kind']!r}")
    if mode["kind"] == "single" and not mode["d"]:
        raise ConfigError("mode.d is required for single mode")
    if mode["kind"] == "shared" and not (mode["l"] and mode["k"]):
        raise ConfigError("mode.l and mode.k are required for shared mode")
    if not 0.0 < cfg["certificate"]["delta"] <= 1.0:
        raise ConfigError("certificate.delta must lie in (0, 1]")
    if not 0.0 <= cfg["search"]["p"] <= 1.0:
        raise ConfigError("search.p must lie in [0, 1]")
    train_config(cfg)


def require(cfg: dict, dotted: str):
    node = cfg
    for key in dotted.split("."):
        node = node.get(key) if isinstance(node, dict) else None
    if node is None:
        raise ConfigError(f"missing required config field {dotted!r}")
    return node


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["training"]
    lr_grid = cfg["search"]["lrs"] or (0.1, 0.01, 0.001)
    try:
        return TrainConfig(epochs=int(t["epochs"]), lr=float(t["lr"]), lr_grid=tuple(lr_grid),
                           weight_decay=float(t["weight_decay"]), batch_size=int(t["batch_size"]),
                           seed=cfg["seed"], finetune_epochs=int(t["finetune_epochs"]),
                           finetune_lr=float(t["finetune_lr"]), eval_split=t["eval_split"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training block: {exc}") from None


def load_tasks(block: dict) -> TaskSet:
    """A task set from a provenance descriptor or ``{"manifest": path}``."""
    if "manifest" in block:
        return read_manifest(block["manifest"])
    if "generator" not in block:
        raise ConfigError("data block needs a 'generator' or a 'manifest' entry")
    return from_provenance(block)


def network_spec(cfg: dict, ts: TaskSet) -> NetworkSpec:
    m = cfg["model"]
    return NetworkSpec(ts.input_dim, tuple(int(h) for h in m["hidden"]), ts.num_classes,
                       m.get("activation", "relu"))


def output_dir(cfg: dict, cli_out=None, env_root=None) -> Path:
    name = cli_out or cfg["output"] or "run"
    path = Path(name)
    return path if path.is_absolute() or env_root is None else Path(env_root) / path
