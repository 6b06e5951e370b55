"""Plain-text key/value run configuration.

A config file holds `key = value` lines (# starts a comment).  Every
key has a default, unknown keys are rejected by name, and environment
variables with the PROTOAGG_ prefix override file values (for example
PROTOAGG_SYNTH_NUM_LANDMARKS overrides synth.num_landmarks).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

ENV_PREFIX = "PROTOAGG_"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    synth_num_landmarks: int = 500
    synth_num_keyframes: int = 200
    synth_observations_min: int = 3
    synth_observations_max: int = 15
    synth_bit_flip_prob: float = 0.05
    synth_width: int = 512
    arch_family: str = "funnel"
    arch_num_layers: int = 3
    arch_output_dim: int = 16
    train_loss: str = "triplet"
    train_margin: float = 0.5
    train_classes_per_episode: int = 32
    train_support_per_class: int = 5
    train_query_per_class: int = 5
    train_initial_lr: float = 0.001
    train_plateau_patience: int = 10
    train_lr_factor: float = 0.1
    train_min_lr: float = 1e-6
    train_max_epochs: int = 50
    train_batch_size: int = 256
    eval_support_fraction: float = 0.9
    eval_num_query_samples: int = 10_000
    eval_ann_budget: int = 256
    sweep_dims: str = "8,16,32"
    sweep_depths: str = "2,3"
    sweep_families: str = "fat,funnel"
    sweep_losses: str = "triplet,prototypical"


def _key_name(field_name: str) -> str:
    """Dataclass field -> dotted config key (first underscore is the section dot)."""
    if field_name in ("seed", "threads"):
        return field_name
    section, rest = field_name.split("_", 1)
    return f"{section}.{rest}"


_KEY_TO_FIELD = {_key_name(f.name): f for f in fields(RunConfig)}


def _convert(key: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {target_type.__name__}") from exc


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        field = _KEY_TO_FIELD.get(key)
        if field is None:
            raise ConfigError(f"unknown config key: {key}")
        updates[field.name] = _convert(key, raw, type(getattr(cfg, field.name)))
    return replace(cfg, **updates)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config_text(f.read(), base)


def apply_env_overrides(cfg: RunConfig, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    updates = {}
    for key, field in _KEY_TO_FIELD.items():
        env_name = ENV_PREFIX + key.replace(".", "_").upper()
        if env_name in environ:
            updates[field.name] = _convert(key, environ[env_name],
                                           type(getattr(cfg, field.name)))
    return replace(cfg, **updates) if updates else cfg


def canonical_text(cfg: RunConfig) -> str:
    """Sorted key = value lines; the hashed identity of a run."""
    lines = [f"{key} = {getattr(cfg, field.name)!r}" for key, field in sorted(_KEY_TO_FIELD.items())]
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()[:16]


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.seed < 0:
        raise ConfigError("config key seed: must be >= 0")
    if cfg.threads < 1:
        raise ConfigError("config key threads: must be >= 1")
    if not 0.0 <= cfg.synth_bit_flip_prob < 0.5:
        raise ConfigError("config key synth.bit_flip_prob: must lie in [0, 0.5)")
    if cfg.synth_observations_min < 1 or cfg.synth_observations_max < cfg.synth_observations_min:
        raise ConfigError("config key synth.observations_min/max: invalid range")
    if cfg.arch_family not in ("fat", "funnel"):
        raise ConfigError("config key arch.family: must be 'fat' or 'funnel'")
    if cfg.train_loss not in ("triplet", "prototypical"):
        raise ConfigError("config key train.loss: must be 'triplet' or 'prototypical'")
    if not 0.0 < cfg.eval_support_fraction < 1.0:
        raise ConfigError("config key eval.support_fraction: must lie in (0, 1)")
    if cfg.eval_num_query_samples < 1:
        raise ConfigError("config key eval.num_query_samples: must be >= 1")
    return cfg


def parse_int_list(raw: str, key: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"config key {key}: expected comma-separated integers, got {raw!r}") from exc
