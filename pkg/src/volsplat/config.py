"""Run configuration: one JSON document covering every pipeline stage."""
from __future__ import annotations

import copy
import dataclasses
import json
from pathlib import Path

from .errors import ContractError
from .losses import LossConfig
from .network import NetConfig
from .training import TrainConfig

VIEW_SETTINGS = (8, 24, 36)

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "volume": {"source": "synthetic", "kind": "shell", "dims": 64, "raw": None, "meta": None,
               "scalar_type": "f32"},
    "tf": {"preset": "shell", "path": None},
    "rig": {"n_views": 8, "n_heldout": 4, "radius": 2.5, "image_size": 128},
    "net": NetConfig().to_dict(),
    "loss": dataclasses.asdict(LossConfig()),
    "train": {**TrainConfig().to_dict(), "scenes": []},
    "refine": {"steps": 200},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ContractError(f"unknown config key {k!r}")
        out[k] = _merge(out[k], v) if isinstance(out[k], dict) and isinstance(v, dict) else v
    return out


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ContractError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def resolve_config(path=None, overrides=(), seed=None, out=None) -> dict:
    """Defaults, then the config file, then ``key=value`` overrides, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            cfg = _merge(cfg, json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ContractError(f"{path}: {e}") from e
    for text in overrides:
        keys, value = parse_override(text)
        nested: dict = value  # type: ignore[assignment]
        for k in reversed(keys):
            nested = {k: nested}
        cfg = _merge(cfg, nested)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["rig"]["n_views"] not in VIEW_SETTINGS:
        raise ContractError(f"rig.n_views must be one of {VIEW_SETTINGS}")
    if not isinstance(cfg["seed"], int):
        raise ContractError("seed must be an explicit integer")
    vol = cfg["volume"]
    if vol["source"] == "file":
        for key in ("raw", "meta"):
            if not vol[key] or not Path(vol[key]).is_file():
                raise FileNotFoundError(f"volume.{key} not found: {vol[key]}")
    elif vol["source"] != "synthetic":
        raise ContractError(f"volume.source must be 'synthetic' or 'file', got {vol['source']!r}")
    if cfg["tf"]["path"] and not Path(cfg["tf"]["path"]).is_file():
        raise FileNotFoundError(f"tf.path not found: {cfg['tf']['path']}")
    net_config(cfg)
    loss_config(cfg)
    train_config(cfg)


def net_config(cfg: dict) -> NetConfig:
    return NetConfig.from_dict(cfg["net"])


def loss_config(cfg: dict) -> LossConfig:
    return LossConfig(**cfg["loss"])


def train_config(cfg: dict) -> TrainConfig:
    t = {k: v for k, v in cfg["train"].items() if k != "scenes"}
    return TrainConfig.from_dict(t)
