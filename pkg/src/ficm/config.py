"""Dataclass configuration for environments, curiosity modules, and training runs.

A single ``ExperimentConfig`` is the source of truth for a run.  Configs
round-trip losslessly through YAML (``save_config`` / ``load_config``), and
``validate()`` raises :class:`~ficm.errors.ConfigError` naming the offending
field before any work starts.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

SPAWN_SETTINGS = ("sparse", "very_sparse")
CURIOSITY_KINDS = ("ficm-s", "ficm-c", "icm", "icm-pixels", "none")
TRAIN_MODES = ("sync", "async")


@dataclass
class WarpConfig:
    """Flow-scaled inverse warping settings.

    ``beta`` multiplies displacement vectors before sampling; ``border_mode``
    is fixed to clamping at the image border.
    """

    beta: float = 1.0
    border_mode: str = "clamp"

    def validate(self, prefix: str = "warp") -> None:
        if not math.isfinite(self.beta) or self.beta < 0:
            raise ConfigError(f"{prefix}.beta must be finite and >= 0, got {self.beta}")
        if self.border_mode != "clamp":
            raise ConfigError(f"{prefix}.border_mode: only 'clamp' is supported, got {self.border_mode!r}")


@dataclass
class CorrelationConfig:
    """Patch-correlation settings: displacements limited to +/- max_displacement."""

    max_displacement: int = 2
    patch_radius: int = 0

    @property
    def neighborhood_size(self) -> int:
        return 2 * self.max_displacement + 1

    def validate(self, prefix: str = "correlation") -> None:
        if self.max_displacement < 0:
            raise ConfigError(f"{prefix}.max_displacement must be >= 0, got {self.max_displacement}")
        if self.patch_radius < 0:
            raise ConfigError(f"{prefix}.patch_radius must be >= 0, got {self.patch_radius}")


@dataclass
class CuriosityConfig:
    """Intrinsic-reward module selection and scaling.

    ``zeta`` converts the flow reconstruction loss into a reward; ``eta``
    plays the same role for the feature/pixel prediction baselines.
    """

    module_kind: str = "ficm-s"
    zeta: float = 0.1
    eta: float = 1.0
    learning_rate: float = 1e-3
    warp: WarpConfig = field(default_factory=WarpConfig)
    correlation: CorrelationConfig = field(default_factory=CorrelationConfig)
    forward_loss_weight: float = 0.2
    inverse_loss_weight: float = 0.8
    normalize_rewards: bool = False

    def validate(self, prefix: str = "curiosity") -> None:
        if self.module_kind not in CURIOSITY_KINDS:
            raise ConfigError(
                f"{prefix}.module_kind must be one of {CURIOSITY_KINDS}, got {self.module_kind!r}"
            )
        if not math.isfinite(self.zeta) or self.zeta <= 0:
            raise ConfigError(f"{prefix}.zeta must be finite and > 0, got {self.zeta}")
        if not math.isfinite(self.eta) or self.eta <= 0:
            raise ConfigError(f"{prefix}.eta must be finite and > 0, got {self.eta}")
        if self.learning_rate < 0:
            raise ConfigError(f"{prefix}.learning_rate must be >= 0, got {self.learning_rate}")
        self.warp.validate(prefix + ".warp")
        self.correlation.validate(prefix + ".correlation")


@dataclass
class EnvConfig:
    """Maze environment settings: spawn difficulty, rendering, action repeat."""

    layout_seed: int = 0
    spawn_setting: str = "sparse"
    max_episode_steps: int = 500
    render_size: int = 42
    action_repeat: int = 4

    def validate(self, prefix: str = "env") -> None:
        if self.spawn_setting not in SPAWN_SETTINGS:
            raise ConfigError(f"{prefix}.spawn_setting must be one of {SPAWN_SETTINGS}, got {self.spawn_setting!r}")
        if self.max_episode_steps <= 0:
            raise ConfigError(f"{prefix}.max_episode_steps must be > 0, got {self.max_episode_steps}")
        if self.render_size < 16:
            raise ConfigError(f"{prefix}.render_size must be >= 16, got {self.render_size}")
        if self.action_repeat < 1:
            raise ConfigError(f"{prefix}.action_repeat must be >= 1, got {self.action_repeat}")


@dataclass
class TrainConfig:
    """Actor-critic training settings shared by sync and async modes."""

    workers: int = 8
    n_step: int = 20
    gamma: float = 0.99
    learning_rate: float = 1e-4
    entropy_weight: float = 0.01
    value_loss_weight: float = 0.5
    grad_clip_norm: float = 40.0
    total_env_steps: int = 1_000_000
    seed: int = 0
    mode: str = "sync"
    curiosity: CuriosityConfig = field(default_factory=CuriosityConfig)
    # Optional early stop once the rolling success rate clears this bar.
    early_stop_success: Optional[float] = None
    success_window: int = 100

    def validate(self, prefix: str = "train") -> None:
        if self.workers < 1:
            raise ConfigError(f"{prefix}.workers must be >= 1, got {self.workers}")
        if self.n_step < 1:
            raise ConfigError(f"{prefix}.n_step must be >= 1, got {self.n_step}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"{prefix}.gamma must be in (0, 1], got {self.gamma}")
        if self.total_env_steps <= 0:
            raise ConfigError(f"{prefix}.total_env_steps must be > 0, got {self.total_env_steps}")
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"{prefix}.mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.learning_rate < 0:
            raise ConfigError(f"{prefix}.learning_rate must be >= 0, got {self.learning_rate}")
        if self.success_window < 1:
            raise ConfigError(f"{prefix}.success_window must be >= 1, got {self.success_window}")
        if self.early_stop_success is not None and not 0.0 < self.early_stop_success <= 1.0:
            raise ConfigError(
                f"{prefix}.early_stop_success must be in (0, 1], got {self.early_stop_success}"
            )
        self.curiosity.validate(prefix + ".curiosity")


@dataclass
class ExperimentConfig:
    """Top-level run description: environment + training + artifact settings."""

    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run_id: str = "run"
    output_dir: str = "runs"
    log_every: int = 1
    checkpoint_every: int = 100_000

    @property
    def curiosity(self) -> CuriosityConfig:
        return self.train.curiosity

    def validate(self) -> None:
        if not self.run_id:
            raise ConfigError("run_id must be non-empty")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        self.env.validate()
        self.train.validate()


def _from_dict(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown field(s) for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if isinstance(ftype, str):
            ftype_name = ftype
        else:  # pragma: no cover - depends on annotations mode
            ftype_name = getattr(ftype, "__name__", str(ftype))
        nested = _NESTED.get(ftype_name)
        kwargs[name] = _from_dict(nested, value) if nested else value
    return cls(**kwargs)


_NESTED = {
    "WarpConfig": WarpConfig,
    "CorrelationConfig": CorrelationConfig,
    "CuriosityConfig": CuriosityConfig,
    "EnvConfig": EnvConfig,
    "TrainConfig": TrainConfig,
}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if data is None:
        raise ConfigError(f"config file is empty: {path}")
    return config_from_dict(data)
