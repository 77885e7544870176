"""Run configuration: every architecture / optimizer / loss hyperparameter.

Defaults are desk scale (64 -> 128 training resolutions, 2,000/200 sampled
pairs, 3,000 + 2,000 iterations).  The full-scale protocol the defaults
stand in for trains at 256/512 with 20,000/2,000 pairs; those values are
plain config changes, not code changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .losses import LossWeights

# Architecture fields that must match when resuming from a checkpoint.
ARCH_FIELDS = (
    "k_history",
    "base_channels",
    "n_down",
    "n_residual",
    "n_residual_fine",
    "d_base_channels",
    "d_layers",
    "d_scales_coarse",
    "d_scales_fine",
    "res_coarse",
    "res_fine",
    "sp_feat_channels",
    "perceptual_stages",
    "perceptual_base",
)


@dataclass
class TrainConfig:
    seed: int = 0

    # optimizer (Adam-style adaptive moments)
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 4

    # pose conditioning
    k_history: int = 3
    sigma_ratio: float = 0.02
    width_ratio: float = 0.25

    # two training scales
    res_coarse: int = 64
    res_fine: int = 128
    iters_coarse: int = 3000
    iters_fine: int = 2000  # 0 disables the fine stage

    # pair sampling
    split_ratio: float = 0.85
    n_train_pairs: int = 2000
    n_test_pairs: int = 200

    # generators
    base_channels: int = 32
    n_down: int = 3
    n_residual: int = 6
    n_residual_fine: int = 3

    # discriminators
    d_base_channels: int = 32
    d_layers: int = 3
    d_scales_coarse: int = 2
    d_scales_fine: int = 3

    # losses
    weights: LossWeights = field(default_factory=LossWeights)
    chroma_tau: float = 0.5
    mask_cleanup: bool = True

    # fixed feature extractors
    perceptual_seed: int = 0
    perceptual_stages: int = 5
    perceptual_base: int = 16
    sp_pretrain_steps: int = 300
    sp_feat_channels: int = 32

    # orchestration
    checkpoint_every: int = 1000
    log_every: int = 1
    num_threads: int = 1  # 0 keeps the process default; 1 gives bit-exact runs

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.k_history < 1:
            raise ValueError("k_history must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights.from_dict(d["weights"])
        return cls(**d)

    @classmethod
    def from_yaml(cls, path: Path | str) -> "TrainConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        return cls.from_dict(data)

    def to_yaml(self, path: Path | str) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def arch_signature(self) -> dict:
        return {k: getattr(self, k) for k in ARCH_FIELDS}

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        d = self.to_dict()
        for key, value in overrides.items():
            if "." in key:
                head, tail = key.split(".", 1)
                if head not in d or not isinstance(d[head], dict):
                    raise KeyError(f"unknown config field {key!r}")
                if tail not in d[head]:
                    raise KeyError(f"unknown config field {key!r}")
                d[head][tail] = value
            else:
                if key not in d:
                    raise KeyError(f"unknown config field {key!r}")
                d[key] = value
        return TrainConfig.from_dict(d)
