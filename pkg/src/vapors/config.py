"""Configuration dataclasses and TOML loading.

Every tunable constant of the simulator, the latent model, the training
schedule and the planner lives here so that a single TOML file can pin a run.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


@dataclass(frozen=True)
class PlateConfig:
    """Plate geometry, item footprint and primitive dynamics constants.

    Lengths are meters in the plate frame.  Radii given as ``*_frac`` are
    fractions of ``plate_radius``.
    """

    plate_radius: float = 0.12
    plate_center: tuple[float, float] = (0.0, 0.0)
    footprint_radius: float = 0.01
    # Items settle so their centers keep this distance (a multiple of
    # footprint_radius); 0 lets items stack freely.
    min_separation_frac: float = 1.0
    settle_iterations: int = 100
    # Acquire
    acquire_radius_frac: float = 0.1
    acquire_prob: float = 0.9
    capacity: int = 5
    acquire_pitch: float = 80.0
    # Rearrange
    capture_radius_frac: float = 0.25
    push_fraction: float = 0.8
    push_noise_frac: float = 0.01
    # Initial distributions
    cluster_std_frac: float = 0.08
    half_spread_frac: float = 0.55
    # Reward
    alpha: float = 0.66

    @property
    def acquire_radius(self) -> float:
        return self.acquire_radius_frac * self.plate_radius

    @property
    def capture_radius(self) -> float:
        return self.capture_radius_frac * self.plate_radius

    @property
    def min_separation(self) -> float:
        return self.min_separation_frac * self.footprint_radius

    @property
    def push_noise(self) -> float:
        return self.push_noise_frac * self.plate_radius

    @property
    def item_limit_radius(self) -> float:
        """Largest center distance at which an item footprint still fits on the plate."""
        return self.plate_radius - self.footprint_radius

    def validate(self) -> None:
        if self.plate_radius <= 0 or self.footprint_radius <= 0:
            raise ConfigError("plate_radius and footprint_radius must be positive")
        if self.footprint_radius >= self.plate_radius:
            raise ConfigError("footprint_radius must be smaller than plate_radius")
        if not 0.0 <= self.acquire_prob <= 1.0:
            raise ConfigError(f"acquire_prob must lie in [0, 1], got {self.acquire_prob}")
        if self.capacity < 0:
            raise ConfigError("capacity must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.push_fraction <= 1.0:
            raise ConfigError("push_fraction must lie in [0, 1]")
        if self.min_separation_frac < 0 or self.settle_iterations < 0:
            raise ConfigError("min_separation_frac and settle_iterations must be non-negative")


@dataclass(frozen=True)
class RenderConfig:
    """Grid size, plate-to-pixel scale and synthetic grayscale appearance."""

    width: int = 64
    height: int = 64
    # Meters spanned by the full grid width; the plate diameter plus a margin.
    field_of_view: float = 0.264
    plate_height: float = 0.0
    background_level: float = 180.0
    background_gradient: float = 12.0
    background_noise: float = 2.0
    item_level: float = 60.0


@dataclass(frozen=True)
class PerceptionConfig:
    blur_sigma: float = 3.0
    crop_size: int = 15
    label_threshold: float = 20.0


@dataclass(frozen=True)
class ModelConfig:
    """Latent dynamics architecture.

    The encoder is two non-overlapping strided convolutions with patch sizes
    ``patch1`` and ``patch2``; the feature size is
    ``(grid / (patch1 * patch2))**2 * conv2_channels``.
    """

    grid: int = 64
    n_primitives: int = 2
    deter_dim: int = 64
    latent_dim: int = 30
    hidden_dim: int = 128
    patch1: int = 4
    patch2: int = 4
    conv1_channels: int = 8
    conv2_channels: int = 8
    min_logstd: float = -5.0
    max_logstd: float = 2.0
    overshooting: int = 1
    dtype: str = "float32"

    @property
    def feature_dim(self) -> int:
        cells = self.grid // (self.patch1 * self.patch2)
        return cells * cells * self.conv2_channels

    def validate(self) -> None:
        if self.grid % (self.patch1 * self.patch2):
            raise ConfigError("grid must be divisible by patch1 * patch2")
        if self.overshooting < 1:
            raise ConfigError("overshooting distance must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three loss components.

    Reconstruction is a sum over pixels (order 100) while per-step rewards
    are order 0.1, so the reward term needs a large weight to shape the
    latent space at all.

    ``reward_prior_share`` splits the reward term between the filtered
    (posterior) latents and the one-step prior latents the planner imagines
    with: ``(1 - s) * mse_posterior + s * mse_prior``.
    """

    recon: float = 1.0
    kl: float = 0.3
    reward: float = 3000.0
    reward_prior_share: float = 0.0

    def validate(self) -> None:
        if min(self.recon, self.kl, self.reward) < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0.0 <= self.reward_prior_share <= 1.0:
            raise ConfigError("reward_prior_share must lie in [0, 1]")


@dataclass(frozen=True)
class TrainSchedule:
    updates: int = 2250
    collect_every: int = 150
    seed_episodes: int = 200
    batch_size: int = 32
    seq_len: int = 8
    lr: float = 1e-3
    eps: float = 1e-4
    clip_norm: float = 1000.0
    beta1: float = 0.9
    beta2: float = 0.999
    explore_start: float = 0.3
    explore_end: float = 0.1
    checkpoint_every: int = 750
    n_items: int = 15
    episode_budget: int = 8
    augment: bool = True


@dataclass(frozen=True)
class PolicyConfig:
    horizon: int = 4
    budget: int = 8
    heuristic_threshold: float = 0.25

    def validate(self) -> None:
        if not 1 <= self.horizon <= self.budget:
            raise ConfigError(
                f"planning horizon must satisfy 1 <= H <= budget, got H={self.horizon}, "
                f"budget={self.budget}"
            )


@dataclass(frozen=True)
class Config:
    plate: PlateConfig = field(default_factory=PlateConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def validate(self) -> "Config":
        self.plate.validate()
        self.model.validate()
        self.loss.validate()
        self.policy.validate()
        if self.model.grid != self.render.width or self.model.grid != self.render.height:
            raise ConfigError("model grid must match the rendered observation size")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = {
    "plate": PlateConfig,
    "render": RenderConfig,
    "perception": PerceptionConfig,
    "model": ModelConfig,
    "loss": LossWeights,
    "train": TrainSchedule,
    "policy": PolicyConfig,
}


def _build_section(cls: type, values: dict[str, Any]) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for [{cls.__name__}]: {sorted(unknown)}")
    kwargs = {}
    for key, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any]) -> Config:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {name: _build_section(cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    return Config(**parts).validate()


def load_config(path: str | Path | None) -> Config:
    """Load a TOML config; ``None`` yields the defaults."""
    if path is None:
        return Config().validate()
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return config_from_dict(data)
