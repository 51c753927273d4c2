"""Experiment configuration: a flat ``key = value`` text format with a strict schema.

Blank lines and ``#`` comments are ignored. Lists are comma-separated. Unknown
keys, duplicate keys and malformed values are rejected with the offending
line number.

Example::

    task = blobs_classify
    methods = random, snn
    J = 20
    rounds = 10
    seeds = 0, 1, 2, 3, 4
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("blobs_classify", "moons_classify", "disks_map", "mnist_classify")
METHODS = ("random", "snn", "si")
ORACLES = ("dataset_lookup", "analytic_map", "analytic_class")
DATA_ENV = "HARDMINE_DATA"  # fallback directory for the IDX files


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)


@dataclass
class ExperimentConfig:
    task: str = "blobs_classify"
    methods: list[str] = field(default_factory=lambda: ["random", "snn"])
    J: int = 20
    rounds: int = 10
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-3
    # SNN: multiple of the RMS pairwise latent distance; SI: absolute (unit-Gaussian latent)
    alpha: float = 0.05
    latent_dim: int = 3
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    vae_steps: int = 1500
    vae_hidden: int = 64
    vae_lr: float = 2e-3
    vae_batch_size: int = 64
    vae_kl_weight: float = 0.02
    hidden: list[int] = field(default_factory=lambda: [32, 32])
    oracle: str = "dataset_lookup"
    relabel_si: bool = True
    reinit_per_round: bool = False
    out_dir: str = "runs"
    timing: bool = False
    # data
    n_train: int = 1000
    n_test: int = 400
    n_classes: int = 4
    n_features: int = 8
    sigma: float = 1.0
    center_spread: float = 1.5
    noise: float = 0.15
    image_size: int = 12
    radius_min: float = 2.0
    radius_max: float = 5.0
    threshold: float = 0.5
    data_seed: int = 0
    mnist_dir: str = ""
    # trajectories (trace / plot-data)
    n_trajectories: int = 20
    trajectory_steps: int = 20

    def validate(self) -> "ExperimentConfig":
        errors = []
        if self.task not in TASKS:
            errors.append(("task", f"task must be one of {', '.join(TASKS)}"))
        if not self.methods or any(m not in METHODS for m in self.methods):
            errors.append(("methods", f"methods must be drawn from {', '.join(METHODS)}"))
        if len(set(self.methods)) != len(self.methods):
            errors.append(("methods", "methods must not repeat"))
        if self.oracle not in ORACLES:
            errors.append(("oracle", f"oracle must be one of {', '.join(ORACLES)}"))
        for name in ("J", "rounds", "batch_size", "latent_dim", "vae_hidden", "vae_batch_size",
                     "n_train", "n_test", "n_classes", "n_features", "image_size",
                     "n_trajectories", "trajectory_steps"):
            if getattr(self, name) < 1:
                errors.append((name, f"{name} must be positive"))
        for name in ("epochs", "vae_steps"):
            if getattr(self, name) < 0:
                errors.append((name, f"{name} must be non-negative"))
        for name in ("lr", "vae_lr", "vae_kl_weight"):
            if getattr(self, name) <= 0:
                errors.append((name, f"{name} must be positive"))
        if self.alpha < 0:
            errors.append(("alpha", "alpha must be non-negative"))
        if not self.seeds:
            errors.append(("seeds", "at least one seed is required"))
        if not self.hidden or min(self.hidden) < 1:
            errors.append(("hidden", "hidden widths must be positive"))
        if not 0 < self.threshold < 1:
            errors.append(("threshold", "threshold must lie in (0, 1)"))
        if not 0 < self.radius_min <= self.radius_max:
            errors.append(("radius_min", "need 0 < radius_min <= radius_max"))
        if "si" in self.methods and self.oracle == "dataset_lookup":
            errors.append(("oracle", "method si needs an analytic oracle"))
        if "snn" in self.methods and self.oracle != "dataset_lookup":
            errors.append(("oracle", "method snn needs the dataset_lookup oracle"))
        if "si" in self.methods and self.task == "mnist_classify":
            errors.append(("methods", "mnist_classify has no analytic oracle for si"))
        if self.oracle == "analytic_map" and self.task != "disks_map":
            errors.append(("oracle", "analytic_map only labels disks_map inputs"))
        if self.task == "disks_map" and self.oracle == "analytic_class":
            errors.append(("oracle", "disks_map is a map task; analytic_class does not apply"))
        if self.task == "mnist_classify" and not (self.mnist_dir or os.environ.get(DATA_ENV)):
            errors.append(("mnist_dir", f"mnist_classify needs mnist_dir (or {DATA_ENV})"))
        if errors:
            key, msg = errors[0]
            raise ConfigError(msg, getattr(self, "_lines", {}).get(key), getattr(self, "_source", None))
        return self

    @property
    def is_classification(self) -> bool:
        return self.task != "disks_map"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k != "out_dir"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def dumps(self) -> str:
        lines = [f"# config_hash: {self.config_hash()}"]
        for key, value in self.to_dict().items():
            lines.append(f"{key} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _field_types() -> dict[str, str]:
    hints = {}
    for f in dataclasses.fields(ExperimentConfig):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        hints[f.name] = t
    return hints


def _convert(raw: str, type_name: str):
    if type_name == "int":
        return int(raw)
    if type_name == "float":
        return float(raw)
    if type_name == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if type_name == "str":
        return raw.strip("\"'")
    if type_name == "list[int]":
        return [int(p) for p in raw.split(",") if p.strip()]
    if type_name == "list[str]":
        return [p.strip().strip("\"'") for p in raw.split(",") if p.strip()]
    raise ValueError(f"unsupported field type {type_name}")


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    types = _field_types()
    values: dict = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno, source)
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", lineno, source)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", lineno, source)
        try:
            values[key] = _convert(raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno, source) from None
        lines[key] = lineno
    cfg = ExperimentConfig(**values)
    cfg._lines = lines
    cfg._source = source
    return cfg.validate()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
