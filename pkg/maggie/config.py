"""
Run configuration.

A single `RunConfig` tree drives every command. Values come from (highest
priority first) explicit overrides, `MAGGIE_*` environment variables and an
optional TOML file.
"""

import hashlib
import json
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .errors import ConfigError

_TOML_PATH: ContextVar[Optional[Path]] = ContextVar("_TOML_PATH", default=None)


class ModelConfig(BaseModel):
    """Architecture settings; hashed for checkpoint compatibility"""
    embed_dim: int = Field(3, ge=1)               # C_e
    max_instances: int = Field(10, ge=1)          # N_max
    guidance_mode: Literal["embed", "stack"] = "embed"
    channels: Tuple[int, int, int, int] = (32, 32, 64, 128)  # C_1, C_2, C_4, C_8
    encoder_depth: int = Field(1, ge=0)
    attention_heads: int = Field(4, ge=1)
    attention_rounds: int = Field(2, ge=1)
    token_init: Literal["pooled", "slot"] = "pooled"
    mask_injection: Literal["key_embedding", "none"] = "key_embedding"
    uncertainty_eps: float = Field(1.0 / 255.0, ge=0.0, lt=0.5)
    prm_kernels: Tuple[int, int] = (30, 15)
    gate_kernel: int = Field(3, ge=1)
    gru: Literal["none", "forward", "bidirectional"] = "bidirectional"
    fusion: Literal["none", "forward", "bidirectional"] = "bidirectional"
    temporal_window: int = Field(3, ge=1)
    temporal_overlap: int = Field(2, ge=0)
    delta_threshold: float = Field(0.5, gt=0.0, lt=1.0)

    @field_validator("channels")
    @classmethod
    def _positive_channels(cls, v):
        if min(v) <= 0:
            raise ValueError("channel widths must be positive")
        return v

    @model_validator(mode="after")
    def _window_overlap(self):
        if self.temporal_overlap >= self.temporal_window:
            raise ValueError("temporal_overlap must be smaller than temporal_window")
        if self.channels[3] % self.attention_heads:
            raise ValueError("C_8 must be divisible by attention_heads")
        return self


class LossWeights(BaseModel):
    """Per-term loss weights (all non-negative)"""
    l1: float = Field(1.0, ge=0.0)
    lap: float = Field(1.0, ge=0.0)
    grad: float = Field(1.0, ge=0.0)
    att: float = Field(0.1, ge=0.0)
    sparse_l1: float = Field(1.0, ge=0.0)
    sparse_lap: float = Field(1.0, ge=0.0)
    dtssd: float = Field(1.0, ge=0.0)
    delta: float = Field(1.0, ge=0.0)


class LossConfig(BaseModel):
    weights: LossWeights = LossWeights()
    gamma: float = 2.0
    lap_levels: int = Field(5, ge=1)
    grad_sigma: float = Field(1.4, gt=0.0)
    delta_beta: float = Field(0.001, ge=0.0)


class OptimConfig(BaseModel):
    lr_image: float = Field(1.5e-4, gt=0.0)
    lr_video: float = Field(5e-5, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    warmup_steps: int = Field(50, ge=0)
    steps: int = Field(2000, ge=0)
    image_steps: int = Field(500, ge=0)
    batch_size: int = Field(2, ge=1)
    crop_size: int = Field(64, ge=8)
    clip_len: int = Field(3, ge=1)
    checkpoint_every: int = Field(500, ge=1)
    grad_clip: float = Field(1.0, ge=0.0)
    shuffle_masks: bool = True
    omit_prob: float = Field(0.1, ge=0.0, le=1.0)
    flip: bool = True

    @field_validator("crop_size")
    @classmethod
    def _crop_multiple_of_8(cls, v):
        if v % 8:
            raise ValueError("crop_size must be a multiple of 8")
        return v


class DataConfig(BaseModel):
    root: Path = Path("data")
    asset_root: Optional[Path] = None
    tier: Literal["easy", "medium", "hard", "image"] = "easy"
    count: int = Field(4, ge=0)
    height: int = Field(128, ge=8)
    width: int = Field(128, ge=8)
    frames: int = Field(30, ge=1)
    num_instances: Optional[int] = Field(None, ge=1)
    mask_mode: Literal["train", "eval"] = "train"
    kernel_range: Tuple[int, int] = (3, 30)
    dropout: float = Field(0.1, ge=0.0, le=1.0)
    max_retries: int = Field(200, ge=1)
    max_drift: float = Field(0.6, ge=0.0)

    @model_validator(mode="after")
    def _sizes(self):
        if self.height % 8 or self.width % 8:
            raise ValueError("height and width must be multiples of 8")
        if self.kernel_range[0] < 1 or self.kernel_range[0] > self.kernel_range[1]:
            raise ValueError("kernel_range must be an increasing pair of positive sizes")
        return self


class MetricsConfig(BaseModel):
    trimap_dilation: int = Field(15, ge=0)
    conn_step: float = Field(0.1, gt=0.0, le=1.0)
    grad_sigma: float = Field(1.4, gt=0.0)
    scale_mad: float = 1e3
    scale_mse: float = 1e3
    scale_sad: float = 1e-3
    scale_grad: float = 1e-3
    scale_conn: float = 1e-3
    scale_dtssd: float = 1e2
    scale_messddt: float = 1e3


class BenchConfig(BaseModel):
    resolution: int = Field(256, ge=8)
    instance_counts: List[int] = [1, 2, 4, 8]
    runs: int = Field(20, ge=1)
    warmup: int = Field(3, ge=0)
    max_ratio: float = Field(1.6, gt=0.0)
    min_sequential_ratio: float = Field(4.0, ge=0.0)


class RunConfig(BaseSettings):
    """Top-level configuration for every `maggie` command"""
    model_config = SettingsConfigDict(
        env_prefix="MAGGIE_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    model: ModelConfig = ModelConfig()
    loss: LossConfig = LossConfig()
    optim: OptimConfig = OptimConfig()
    data: DataConfig = DataConfig()
    metrics: MetricsConfig = MetricsConfig()
    bench: BenchConfig = BenchConfig()
    seed: int = 0
    device: str = "cpu"
    deterministic: bool = False
    out_dir: Path = Path("runs")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        sources: List[PydanticBaseSettingsSource] = [init_settings, env_settings]
        toml_path = _TOML_PATH.get()
        if toml_path is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=toml_path))
        return tuple(sources)

    def config_hash(self) -> str:
        """Hash of the architecture section; checkpoints are only compatible on equal hashes"""
        return _hash_json(self.model.model_dump(mode="json"))

    def full_hash(self) -> str:
        return _hash_json(self.model_dump(mode="json"))


def _hash_json(data: Dict[str, Any]) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_config(path: Optional[Path] = None, **overrides: Any) -> RunConfig:
    """
    Build a RunConfig from an optional TOML file plus keyword overrides.

    Raises:
        ConfigError: missing file or invalid values
    """
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    token = _TOML_PATH.set(Path(path) if path is not None else None)
    try:
        return RunConfig(**overrides)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    finally:
        _TOML_PATH.reset(token)
