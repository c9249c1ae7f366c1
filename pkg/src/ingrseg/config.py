"""Experiment configuration: a sectioned YAML file with dotted-key
command-line overrides, plus the reproducibility manifest every run emits."""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any

import yaml

from . import DataError, UsageError

SECTIONS = ("dataset", "align", "segmenter", "eval", "run")

DEFAULTS: dict[str, dict[str, Any]] = {
    "dataset": {
        "manifest": None,
        "split_mode": "random",
        "split_ratio": 0.7,
        "split_fraction": 0.5,
    },
    "align": {
        "alpha": 0.1,
        "embed_dim": 64,
        "num_semantic_labels": 10,
        "lambda_semantic": 1.0,
        "text_encoder_kind": "recurrent",
        "vision_encoder_kind": "convolutional",
        "negative_pair_probability": 0.5,
        "stage1_steps": 60,
        "stage2_steps": 60,
        "batch_size": 16,
        "lr": 1e-3,
        "image_size": 32,
        "vocab_size": 32,
        "corpus": None,
        "manifest": None,
        "synthetic_n": 0,
    },
    "segmenter": {
        "encoder_kind": "convolutional",
        "decoder_kind": "fpn_head",
        "num_classes": 5,
        "crop_size": 32,
        "base_lr": 1e-3,
        "max_iters": 150,
        "batch_size": 8,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "poly_power": 0.9,
        "init_source": "random",
    },
    "eval": {
        "include_background": True,
    },
    "run": {
        "seed": 0,
        "out": "runs/run",
    },
}


def load_config(path: str | None, overrides: list[str] | None = None) -> dict:
    """Load a YAML config, fill defaults, and apply section.key=value overrides."""
    cfg = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        with open(path) as f:
            try:
                doc = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise DataError(f"config {path} is not valid YAML: {e}") from None
        if not isinstance(doc, dict):
            raise DataError(f"config {path} must be a mapping of sections")
        for section, values in doc.items():
            if section not in SECTIONS:
                raise DataError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise DataError(f"config section {section!r} must be a mapping")
            cfg[section].update(values)
    for ov in overrides or []:
        if "=" not in ov:
            raise UsageError(f"override must look like section.key=value, got {ov!r}")
        key, _, raw = ov.partition("=")
        if "." not in key:
            raise UsageError(f"override key must be section.key, got {key!r}")
        section, _, name = key.partition(".")
        if section not in SECTIONS:
            raise UsageError(f"unknown config section {section!r}")
        cfg[section][name] = yaml.safe_load(raw)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str).encode()
    ).hexdigest()


def file_hash(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir: str, cfg: dict, input_paths: list[str]) -> str:
    """Record config hash, seed, and content hashes of every input file."""
    doc = {
        "config_hash": config_hash(cfg),
        "seed": cfg["run"]["seed"],
        "inputs": {p: file_hash(p) for p in sorted(set(input_paths)) if os.path.exists(p)},
        "config": cfg,
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True, default=str)
        f.write("\n")
    return path
