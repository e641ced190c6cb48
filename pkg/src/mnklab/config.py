"""Configuration: the shipped reference YAML, deep-merged with user overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path

import yaml

VOLATILE_KEYS = ("workers", "out_dir")


def reference() -> dict:
    text = resources.files("mnklab").joinpath("reference.yaml").read_text()
    return yaml.safe_load(text)


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    cfg = reference()
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ValueError(f"config {path} must be a mapping")
        cfg = merge(cfg, user)
    return merge(cfg, overrides or {})


def config_hash(cfg: dict) -> str:
    """Hash of everything that can change results (worker count and paths excluded)."""
    stable = {k: v for k, v in cfg.items() if k not in VOLATILE_KEYS}
    blob = json.dumps(stable, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
