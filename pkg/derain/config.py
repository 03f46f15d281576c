import logging
from pathlib import Path
from typing import Literal, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from derain.errors import ConfigError
from derain.schemas import DjrhrSpec, LossWeights, SrrSpec

logger = logging.getLogger(__name__)

load_dotenv()

# Weight decays used by the two training setups
DEFAULT_WEIGHT_DECAY = {"srr": 1e-6, "djrhr": 1e-4}


class RunConfig(BaseSettings):
    """
    Flat run configuration. Precedence: defaults < DERAIN_* environment / .env
    < config file < command-line flags. Unknown keys are rejected.
    """
    model_config = SettingsConfigDict(env_prefix="DERAIN_", env_file=".env", extra="forbid")

    # network
    model: Literal["srr", "djrhr"] = "djrhr"
    depth: int = Field(default=20, ge=2)
    width: int = Field(default=64, ge=1)
    blocks: int = Field(default=3, ge=1)
    growth: int = Field(default=12, ge=1)
    layers_per_block: int = Field(default=4, ge=1)
    alpha: float = Field(default=0.5, ge=0.0)

    # optimization
    lr: float = Field(default=1e-3, gt=0.0)
    lr_decay: float = Field(default=0.95, gt=0.0, le=1.0)
    weight_decay: Optional[float] = Field(default=None, ge=0.0)
    batch_size: int = Field(default=10, ge=1)
    epochs: int = Field(default=30, ge=0)
    patch_size: int = Field(default=64, ge=2)
    crops_per_image: int = Field(default=4, ge=1)
    seed: int = 0

    # synthesis
    mode: Literal["rain", "rain_haze"] = "rain_haze"
    count: int = Field(default=64, ge=1)
    image_size: int = Field(default=128, ge=2)
    split: Literal["train", "val", "test"] = "train"
    rain_layers: int = Field(default=2, ge=1)
    density: Optional[float] = Field(default=None, ge=0.0)
    intensity: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    beta_min: float = Field(default=0.2, ge=0.0)
    beta_max: float = Field(default=0.8, ge=0.0)
    airlight_min: float = Field(default=0.6, ge=0.6, le=1.0)
    airlight_max: float = Field(default=1.0, ge=0.6, le=1.0)
    depth_mode: Literal["ramp", "fractal", "constant"] = "ramp"
    depth_min: float = Field(default=0.5, gt=0.0)
    depth_max: float = Field(default=3.0, gt=0.0)
    depth_path: Optional[str] = None

    # paths
    hq_dir: Optional[str] = None
    out: Optional[str] = None
    manifest: Optional[str] = None
    val_manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    resume: Optional[str] = None
    input: Optional[str] = None
    pred_dir: Optional[str] = None
    gt_dir: Optional[str] = None
    report: Optional[str] = None

    # sweep
    sweep_growths: str = "8,10,12"
    sweep_blocks: str = "1,2,3"

    @model_validator(mode="after")
    def check_ranges(self):
        if self.beta_max < self.beta_min:
            raise ValueError("beta_max must be >= beta_min")
        if self.airlight_max < self.airlight_min:
            raise ValueError("airlight_max must be >= airlight_min")
        if self.depth_max < self.depth_min:
            raise ValueError("depth_max must be >= depth_min")
        if self.patch_size % 2:
            raise ValueError("patch_size must be even (Haar analysis works on 2x2 blocks)")
        return self

    @property
    def resolved_weight_decay(self) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return DEFAULT_WEIGHT_DECAY[self.model]

    def network_spec(self):
        if self.model == "srr":
            return SrrSpec(depth=self.depth, width=self.width)
        return DjrhrSpec(blocks=self.blocks, growth=self.growth, layers_per_block=self.layers_per_block)

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha)


def read_config_file(path) -> dict:
    """Flat UTF-8 `key = value` lines; '#' starts a comment"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path, encoding="utf-8")
    return {key.strip().lower(): value for key, value in values.items() if value is not None}


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    values = read_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = RunConfig(**values)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"invalid configuration: {problems}")
    logger.debug(f"Resolved configuration: {config.model_dump()}")
    return config
