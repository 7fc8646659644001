"""Experiment configuration: defaults, JSON loading, dotted overrides and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


def load_vocabulary(path: str | Path | None = None) -> list[dict[str, str]]:
    """Load the abnormality vocabulary as a list of ``{"name", "definition"}`` entries.

    With no path the bundled 18-class chest CT list is used.
    """
    if path is None:
        text = resources.files("radalign.resources").joinpath("chest_ct_vocabulary.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    entries = json.loads(text)
    if not isinstance(entries, list) or not entries:
        raise ConfigError("vocabulary file must hold a non-empty JSON list")
    out = []
    for e in entries:
        if isinstance(e, str):
            e = {"name": e, "definition": ""}
        if "name" not in e:
            raise ConfigError(f"vocabulary entry without name: {e!r}")
        out.append({"name": str(e["name"]), "definition": str(e.get("definition", ""))})
    names = [e["name"] for e in out]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate names in vocabulary")
    return out


def default_vocabulary_names(n_classes: int | None = None) -> list[str]:
    names = [e["name"] for e in load_vocabulary()]
    return names if n_classes is None else names[:n_classes]


# Stated hyperparameters are kept where they fit (batch size, AdamW, learning
# rates of both stages, loss coefficient); the freshly initialised projection
# and text heads get their own larger learning rate, and step counts and volume
# geometry are desk-scale values.
DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "output_root": "runs/default",
    "data": {
        "source": "synthetic",
        "manifest": None,
        "labels_csv": None,
        "n": 512,
        "n_classes": 6,
        "vocabulary_path": None,
        "volume_shape": [32, 32, 32],
        "spacing_mm": [1.5, 1.5, 3.0],
        "target_spacing_mm": [1.5, 1.5, 3.0],
        "pad_shape": [32, 32, 32],
        "crop_shape": [28, 28, 28],
        "prevalence": 0.3,
        "noise_hu": 25.0,
        "validation_fraction": 0.2,
        "train_fraction": 1.0,
        "external_n": 128,
        "external_noise_hu": 40.0,
        "external_offset_hu": 15.0,
    },
    "extract": {
        "backends": [
            {"name": "mock-a", "kind": "mock", "flip_rate": 0.02, "seed": 1},
            {"name": "mock-b", "kind": "mock", "flip_rate": 0.04, "seed": 2},
            {"name": "mock-c", "kind": "mock", "flip_rate": 0.03, "seed": 3, "error_rate": 0.005},
        ],
        "max_concurrency": 4,
        "retry_budget": 2,
        "timeout_s": 60.0,
    },
    "pretrain": {
        "label_source": "merged",
        "steps": 500,
        "batch_size": 10,
        "lr": 1e-4,
        "weight_decay": 1e-2,
        "label_smoothing": 0.1,
        "ass": True,
        "ass_weight": 0.5,
        "mask_downsample": 2,
        "encoder": {"arch": "resnet3d", "widths": [16, 32, 64], "activation": "relu"},
    },
    "align": {
        "init": "supervised",
        "steps": 100,
        "batch_size": 10,
        "lr": 1e-5,
        "head_lr": 1e-3,
        "weight_decay": 1e-2,
        "l2_normalize": "auto",
        "loss_coefficient": "auto",
        "shared_dim": 128,
        "text_dim": 128,
        "text_buckets": 4096,
        "freeze_text": False,
        "freeze_vision": False,
    },
    "evaluate": {
        "splits": ["validation", "external"],
        "tasks": ["zeroshot", "retrieval"],
        "threshold_policy": "youden",
        "positive_prompt": "{name} is present.",
        "negative_prompt": "{name} is not present.",
        "map_k": [5, 10, 50],
        "recall_k": [5, 10, 50, 100],
    },
}


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(user) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        cfg = deep_merge(cfg, user)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    data = cfg["data"]
    for key in ("volume_shape", "pad_shape", "crop_shape", "spacing_mm", "target_spacing_mm"):
        if len(data[key]) != 3 or any(v <= 0 for v in data[key]):
            raise ConfigError(f"data.{key} must be three positive numbers")
    if any(c > p for c, p in zip(data["crop_shape"], data["pad_shape"])):
        raise ConfigError("data.crop_shape must fit inside data.pad_shape")
    if not 0.0 < data["train_fraction"] <= 1.0:
        raise ConfigError("data.train_fraction must lie in (0, 1]")
    if data["source"] not in ("synthetic", "manifest"):
        raise ConfigError("data.source must be synthetic or manifest")
    if data["source"] == "manifest" and not (data.get("manifest") and data.get("labels_csv")):
        raise ConfigError("data.source=manifest needs data.manifest and data.labels_csv")
    if data["source"] == "manifest" and cfg["pretrain"]["ass"]:
        # segmentation masks are derived from the planted synthetic regions
        raise ConfigError("pretrain.ass needs synthetic data; set pretrain.ass=false for a manifest source")
    if cfg["pretrain"]["label_source"] not in ("merged", "reference"):
        raise ConfigError("pretrain.label_source must be merged or reference")
    if data["n"] <= 0 or data["n_classes"] < 2:
        raise ConfigError("data.n must be positive and data.n_classes >= 2")
    for stage in ("pretrain", "align"):
        if cfg[stage]["steps"] < 0 or cfg[stage]["batch_size"] < 1:
            raise ConfigError(f"{stage}.steps must be >= 0 and batch_size >= 1")
    init = str(cfg["align"]["init"])
    if init not in ("random", "supervised") and not init.startswith(("external:", "supervised:")):
        raise ConfigError("align.init must be random, supervised, supervised:PATH or external:PATH")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict, exclude: tuple[str, ...] = ("output_root",)) -> str:
    """SHA-256 of the canonical config; independent of key order and of the output location."""
    trimmed = {k: v for k, v in cfg.items() if k not in exclude}
    return hashlib.sha256(canonical_json(trimmed).encode("utf-8")).hexdigest()
