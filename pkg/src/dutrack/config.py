"""Plain-text run configuration: one `key = value` per line, `#` comments.

Unknown keys are rejected. The full schema is documented in docs/config.md.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .language_update import UpdatePolicy
from .model import ModelConfig
from .tracker import TrackConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model geometry
    width: int = 64
    heads: int = 4
    depth: int = 4
    n_lang: int = 16
    template_size: int = 64
    search_size: int = 128
    max_dynamic: int = 8
    # tracking
    topk: int = 3
    window_weight: float = 0.3
    search_factor: float = 4.0
    template_factor: float = 2.0
    tau_s: float = 0.8
    tau_d_strides: float = 1.0
    tau_c: float = 25.0
    symmetric_scale: bool = False
    displacement_from_corners: bool = False
    gate_capture_by_policy: bool = False
    jobs: int = 1
    diagnostics: bool = False
    captioner: str = ""
    # training
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    stage1_epochs: int = 50
    stage2_epochs: int = 20
    samples_per_epoch: int = 200
    batch_size: int = 8
    center_weight: float = 1.0
    reg_weight: float = 1.0
    attn_weight: float = 1.0
    jitter_center: float = 0.4
    jitter_scale: float = 0.25
    near_gap: int = 8
    caption_lag_max: int = 3
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            width=self.width,
            heads=self.heads,
            depth=self.depth,
            n_lang=self.n_lang,
            template_size=self.template_size,
            search_size=self.search_size,
            max_dynamic=self.max_dynamic,
        )

    def policy(self) -> UpdatePolicy:
        return UpdatePolicy.from_strides(
            self.tau_s, self.tau_d_strides, self.tau_c, symmetric_scale=self.symmetric_scale
        )

    def track_config(self) -> TrackConfig:
        return TrackConfig(
            topk=self.topk,
            window_weight=self.window_weight,
            search_factor=self.search_factor,
            template_factor=self.template_factor,
            policy=self.policy(),
            gate_capture_by_policy=self.gate_capture_by_policy,
            displacement_from_corners=self.displacement_from_corners,
        )

    def train_config(self, stage: str, epochs: int) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.adam_eps,
            epochs=epochs,
            samples_per_epoch=self.samples_per_epoch,
            batch_size=self.batch_size,
            center_weight=self.center_weight,
            reg_weight=self.reg_weight,
            attn_weight=self.attn_weight,
            seed=self.seed,
            stage=stage,
            topk=self.topk,
            jitter_center=self.jitter_center,
            jitter_scale=self.jitter_scale,
            near_gap=self.near_gap,
            caption_lag_max=self.caption_lag_max,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float("inf") if raw.lower() in ("inf", "infinity") else float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = RunConfig()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{lineno}: unknown config key '{key}'")
        setattr(cfg, key, _parse_value(key, raw))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.topk < 0 or cfg.topk > cfg.max_dynamic:
        raise ConfigError(f"topk={cfg.topk} must lie in [0, max_dynamic={cfg.max_dynamic}]")
    if not 0.0 <= cfg.window_weight < 1.0:
        raise ConfigError("window_weight must lie in [0, 1)")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    if min(cfg.tau_s, cfg.tau_d_strides) < 0 or cfg.tau_c < 0:
        raise ConfigError("policy thresholds must be non-negative")
    cfg.model_config()  # geometry checks


def save_config(cfg: RunConfig, path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
