"""Run configuration: dataclasses with defaults, JSON loading, overrides.

A config file is a JSON object with up to five sections: "model",
"pretrain", "finetune", "data", "experiment". Unknown keys are an
error so typos fail loudly. Every run echoes the fully resolved
config into its output directory.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

VERSION = "0.1.0"


@dataclass
class ModelConfig:
    patch_len: int = 12
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3
    d_ff: int = 256
    context_len: int = 168
    dropout: float = 0.0
    qk_norm: bool = True
    learnable_qk_gains: bool = True
    final_norm: bool = True
    revin_eps: float = 1e-5
    rmsnorm_eps: float = 1e-8

    def __post_init__(self):
        if self.context_len % self.patch_len != 0:
            raise ValueError(
                f"context_len {self.context_len} must be a multiple of patch_len {self.patch_len}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}")

    @property
    def num_patches(self) -> int:
        return self.context_len // self.patch_len


@dataclass
class PretrainConfig:
    epochs: int = 20
    multi_sector_epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    mask_low: float = 0.15
    mask_high: float = 0.55
    lambda_sim: float = 0.1
    window_stride: int = 1
    shared_channel_mask: bool = False


@dataclass
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    window_stride: int = 1
    unfreeze_backbone: bool = False


@dataclass
class DataConfig:
    n_sectors: int = 8
    hours: int = 2880
    seed: int = 7
    normalization: str = "zscore"
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    phase_jitter: float = 1.0
    source: str = ""        # empty = synthesize; else CSV file or directory


@dataclass
class ExperimentConfig:
    horizons: tuple = (24, 48, 96, 168)
    models: tuple = ("siamtst", "linearnet", "ridge", "persistence")
    seeds: tuple = (0, 1, 2)
    k_list: tuple = (1, 2, 4, 8)
    e2_targets: tuple = (0,)        # sector indices fine-tuned and scored in E2
    persistence_period: int = 24
    eval_stride: int = 1
    ridge_lambda_grid: tuple = ()   # empty = library default


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "data": DataConfig,
    "experiment": ExperimentConfig,
}


def _build_section(cls, payload: dict, label: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ValueError(f"unknown {label} config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in payload.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(payload: dict) -> RunConfig:
    unknown = set(payload) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    sections = {
        name: _build_section(cls, payload.get(name, {}), name)
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(**sections)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load JSON config; ``overrides`` maps "section.key" to values."""
    payload: dict = {}
    if path is not None:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ValueError(f"{path}: top level must be a JSON object")
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ValueError(f"override {dotted!r} must look like section.key")
        payload.setdefault(section, {})[key] = value
    return config_from_dict(payload)


def echo_config(config: RunConfig, out_dir, seed: int | None = None):
    """Write the resolved config (and the seed actually used) to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = config.to_dict()
    if seed is not None:
        payload["resolved_seed"] = seed
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
