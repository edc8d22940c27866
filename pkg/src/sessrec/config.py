"""Training configuration: defaults, per-dataset profiles, key=value config
files and override handling."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

# per-dataset settings: top-k similar sessions, contrastive weight, heads
DATASET_PROFILES = {
    "tmall": {"topk_sessions": 6, "beta": 0.05, "heads": 2},
    "retailrocket": {"topk_sessions": 2, "beta": 5.0, "heads": 2},
    "diginetica": {"topk_sessions": 3, "beta": 5.0, "heads": 1},
}


@dataclass
class TrainConfig:
    dataset: str = "custom"
    batch_size: int = 512
    d: int = 100
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 3
    weight_decay: float = 1e-5
    epochs: int = 10
    patience: int = 3
    topk_sessions: int = 3
    beta: float = 5.0
    tau: float = 1.0
    heads: int = 1
    k_sp: int = 50
    dropout: float = 0.2
    gcn_edge_dropout: float = 0.2
    gcn_relu: bool = False
    bisect_iters: int = 30
    layer_norm: bool = True
    ggnn_steps: int = 1
    grad_clip: float = 5.0
    max_position: int = 200
    global_directed: bool = False
    validation_fraction: float = 0.1
    seed: int = 2024
    ablations: tuple = ()

    def __post_init__(self):
        positive = ["batch_size", "d", "epochs", "topk_sessions", "heads",
                    "k_sp", "lr", "lr_decay_every", "max_position"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ["beta", "tau", "weight_decay", "validation_fraction"]:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if isinstance(self.ablations, list):
            self.ablations = tuple(self.ablations)

    def to_dict(self):
        data = dataclasses.asdict(self)
        data["ablations"] = list(self.ablations)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def parse_config_file(path):
    """Read a simple key = value config file (json-typed values, # comments)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        try:
            values[key] = json.loads(raw)
        except json.JSONDecodeError:
            values[key] = raw
    return values


def build_config(dataset=None, config_file=None, overrides=None):
    """Layer configuration sources: defaults < dataset profile < file < flags.

    An explicit nonzero beta together with the no-contrastive ablation is a
    contradiction and rejected.
    """
    data = TrainConfig().to_dict()
    if dataset:
        profile = DATASET_PROFILES.get(dataset.lower())
        if profile is None and dataset.lower() not in ("custom", "synthetic"):
            raise ConfigError(
                f"unknown dataset {dataset!r}; expected one of "
                f"{sorted(DATASET_PROFILES)} or custom/synthetic")
        data["dataset"] = dataset.lower()
        data.update(profile or {})
    if config_file:
        data.update(parse_config_file(config_file))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    data.update(overrides)

    ablations = tuple(data.get("ablations") or ())
    if "no-contrastive" in ablations:
        if overrides.get("beta") not in (None, 0, 0.0):
            raise ConfigError(
                "conflicting flags: --beta with --ablate no-contrastive")
        data["beta"] = 0.0
    cfg = TrainConfig.from_dict(data)
    return cfg


def save_config_snapshot(config, path):
    with open(path, "w") as f:
        for key, value in config.to_dict().items():
            f.write(f"{key} = {json.dumps(value)}\n")
