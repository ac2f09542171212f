"""Flat ``key = value`` configuration with named presets.

Keys are dotted (``mask.ratio``); the matching ``TrainConfig`` attribute
replaces dots with underscores (``mask_ratio``).
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, fields

from .errors import ConfigError
from .vit import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "desk"
    seed: int = 0
    dtype: str = "float32"
    # data
    data_n_train: int = 512
    data_n_test: int = 128
    data_classes: int = 4
    data_image_size: int = 32
    data_channels: int = 3
    augment: bool = True
    # optimisation
    epochs: int = 100
    batch_size: int = 32
    peak_lr: float = 1e-3
    min_lr: float = 1e-5
    warmup_epochs: int = 5
    weight_decay: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    grad_clip: float = 3.0
    checkpoint_every: int = 0
    # masking / targets
    mask_strategy: str = "random"
    mask_ratio: float = 0.75
    target_mode: str = "multi"
    target_tau: float = 4.0
    target_omega: float = 0.8
    # model
    model_layers: int = 4
    model_dim: int = 128
    model_heads: int = 4
    model_patch: int = 8
    model_vocab: int = 512
    # tokenizer
    tokenizer_iters: int = 30
    tokenizer_dim: int = 0
    tokenizer_gain: float = 10.0
    # evaluation
    probe_epochs: int = 100
    probe_lr: float = 0.01
    finetune_epochs: int = 30
    finetune_lr: float = 1e-3
    finetune_warmup_epochs: int = 3
    finetune_min_lr: float = 1e-6
    finetune_layer_decay: float = 0.65
    finetune_adam_beta2: float = 0.999
    # recorded but not implemented
    drop_path: float = 0.0
    finetune_label_smoothing: float = 0.0
    finetune_mixup: float = 0.0
    finetune_cutmix: float = 0.0

    def model_config(self) -> ModelConfig:
        grid = self.data_image_size // self.model_patch
        return ModelConfig(
            layers=self.model_layers, dim=self.model_dim, heads=self.model_heads,
            patch=self.model_patch, vocab=self.model_vocab, n_patches=grid * grid,
            channels=self.data_channels, dtype=self.dtype)

    @property
    def grid(self) -> int:
        return self.data_image_size // self.model_patch

    def steps_per_epoch(self) -> int:
        return -(-self.data_n_train // self.batch_size)

    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch()

    def to_flat(self) -> dict:
        return {attr_to_key(f.name): getattr(self, f.name) for f in fields(self)}

    def replace(self, **kv) -> "TrainConfig":
        """Copy with dotted-key overrides, validated."""
        return from_flat({**self.to_flat(), **kv})


UNIMPLEMENTED = ("drop_path", "finetune.label_smoothing", "finetune.mixup", "finetune.cutmix")

_DOTTED_PREFIXES = ("data", "mask", "target", "model", "tokenizer", "probe", "finetune")


def attr_to_key(attr: str) -> str:
    head, _, rest = attr.partition("_")
    return f"{head}.{rest}" if head in _DOTTED_PREFIXES and rest else attr


def key_to_attr(key: str) -> str:
    return key.replace(".", "_")


KEYS = {attr_to_key(f.name): f for f in fields(TrainConfig)}


PRESETS: dict[str, dict] = {
    "desk": {},
    "paper-vitb": {
        "data.image_size": 224, "model.patch": 16, "model.layers": 12, "model.dim": 768,
        "model.heads": 12, "model.vocab": 8192,
        "epochs": 800, "batch_size": 2048, "peak_lr": 1.5e-3, "min_lr": 1e-5,
        "warmup_epochs": 10, "weight_decay": 0.05, "adam_beta1": 0.9, "adam_beta2": 0.98,
        "adam_eps": 1e-8, "grad_clip": 3.0, "drop_path": 0.1,
        "mask.strategy": "random", "mask.ratio": 0.75, "target.tau": 4.0, "target.omega": 0.8,
        "finetune.epochs": 100, "finetune.lr": 4e-3, "finetune.warmup_epochs": 20,
        "finetune.layer_decay": 0.65, "finetune.min_lr": 1e-6, "finetune.adam_beta2": 0.999,
        "finetune.label_smoothing": 0.1, "finetune.mixup": 0.8, "finetune.cutmix": 1.0,
    },
}
PRESETS["paper-vitl"] = {
    **PRESETS["paper-vitb"],
    "model.layers": 24, "model.dim": 1024, "model.heads": 16, "grad_clip": 1.0,
    "finetune.epochs": 50, "finetune.warmup_epochs": 5, "finetune.layer_decay": 0.75,
}


def _coerce(key: str, value):
    f = KEYS[key]
    typ = f.type if isinstance(f.type, type) else {"int": int, "float": float, "str": str,
                                                    "bool": bool}[f.type]
    if isinstance(value, typ) and not (typ is int and isinstance(value, bool)):
        return value
    s = str(value).strip()
    try:
        if typ is bool:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if typ is int:
            v = float(s)
            if v != int(v):
                raise ValueError(s)
            return int(v)
        return typ(s)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def validate(cfg: TrainConfig):
    def bad(key, msg):
        raise ConfigError(f"{key}: {msg}")

    if not 0.0 <= cfg.target_omega <= 1.0:
        bad("target.omega", f"must lie in [0, 1], got {cfg.target_omega}")
    if not cfg.target_tau > 0:
        bad("target.tau", f"must be positive, got {cfg.target_tau}")
    if cfg.target_mode not in ("multi", "single"):
        bad("target.mode", "must be 'multi' or 'single'")
    if not 0.0 < cfg.mask_ratio < 1.0:
        bad("mask.ratio", f"must lie in (0, 1), got {cfg.mask_ratio}")
    if cfg.mask_strategy not in ("random", "block"):
        bad("mask.strategy", "must be 'random' or 'block'")
    if not 0 < cfg.min_lr <= cfg.peak_lr:
        bad("min_lr", "learning rates must satisfy 0 < min_lr <= peak_lr")
    if not 0 <= cfg.warmup_epochs < cfg.epochs:
        bad("warmup_epochs", "must satisfy 0 <= warmup_epochs < epochs")
    if cfg.batch_size < 1:
        bad("batch_size", "must be positive")
    if cfg.data_image_size % cfg.model_patch:
        bad("data.image_size", f"{cfg.data_image_size} not divisible by model.patch={cfg.model_patch}")
    if cfg.model_dim % cfg.model_heads:
        bad("model.dim", f"{cfg.model_dim} not divisible by model.heads={cfg.model_heads}")
    if cfg.dtype not in ("float32", "float64"):
        bad("dtype", "must be float32 or float64")
    if not 0 < cfg.finetune_layer_decay <= 1:
        bad("finetune.layer_decay", "must lie in (0, 1]")
    if not cfg.tokenizer_gain > 0:
        bad("tokenizer.gain", "must be positive")
    if cfg.model_vocab < 2:
        bad("model.vocab", "must be at least 2")
    if cfg.preset not in PRESETS:
        bad("preset", f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")


def from_flat(values: dict) -> TrainConfig:
    kw = {}
    for key, v in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        kw[key_to_attr(key)] = _coerce(key, v)
    cfg = TrainConfig(**kw)
    validate(cfg)
    return cfg


def read_config_file(path) -> dict:
    """Parse ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, _, val = line.partition("=")
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, val = parts
            out[key.strip()] = val.strip()
    return out


def parse_overrides(args: list[str]) -> dict:
    """``['--target.tau', '4', '--seed', '1']`` -> dict."""
    out = {}
    it = iter(args)
    for a in it:
        if not a.startswith("--"):
            raise ConfigError(f"expected --key, got {a!r}")
        key = a[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"{key}: missing value") from None
        out[key] = val
    return out


def parse_config(path=None, overrides=None) -> TrainConfig:
    """Desk defaults <- preset <- file values <- overrides."""
    values = read_config_file(path) if path else {}
    if isinstance(overrides, (list, tuple)):
        overrides = parse_overrides(list(overrides))
    values.update(overrides or {})
    for key in values:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    preset = str(values.get("preset", "desk"))
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    merged = {**PRESETS[preset], **values}
    cfg = from_flat(merged)
    for key in UNIMPLEMENTED:
        if getattr(cfg, key_to_attr(key)):
            warnings.warn(f"{key} is recorded but not implemented", stacklevel=2)
    return cfg


def write_config_file(cfg: TrainConfig, path):
    with open(path, "w") as fh:
        for k, v in cfg.to_flat().items():
            fh.write(f"{k} = {v}\n")


def defaults() -> TrainConfig:
    return dataclasses.replace(TrainConfig())
