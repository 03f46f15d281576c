from pydantic import BaseModel, ConfigDict, Field, field_validator
from typing import Literal, Optional, Union


class RainParams(BaseModel):
    """Parameters of one procedural rain-streak configuration"""
    model_config = ConfigDict(extra="forbid")

    angle: float = Field(default=0.0, ge=-20.0, le=20.0)  # degrees from vertical
    length: int = Field(default=15, ge=1)  # streak length in pixels
    density: float = Field(default=4.0, ge=0.0)  # expected streaks per 1000 pixels
    intensity: float = Field(default=0.8, gt=0.0, le=1.0)
    layers: int = Field(default=2, ge=1)  # the s of the layered rain model
    seed: int = 0


class HazeParams(BaseModel):
    """Atmospheric scattering parameters; the depth map itself is regenerated from depth_* fields"""
    model_config = ConfigDict(extra="forbid")

    airlight: float = Field(default=0.8, ge=0.6, le=1.0)  # gray A, replicated per channel
    beta: float = Field(default=0.8, ge=0.0)
    depth_mode: str = Field(default="ramp", pattern="^(ramp|fractal|constant|file)$")
    depth_min: float = Field(default=0.5, gt=0.0)
    depth_max: float = Field(default=3.0, gt=0.0)
    depth_seed: int = 0
    depth_path: Optional[str] = None

    @field_validator("depth_max")
    def validate_depth_range(cls, v, info):
        low = info.data.get("depth_min")
        if low is not None and v < low:
            raise ValueError("depth_max must be >= depth_min")
        return v


class ManifestRow(BaseModel):
    """One LQ/HQ pair of a synthesized dataset"""
    hq_path: str
    lq_path: str
    mode: Literal["rain", "rain_haze"]
    seed: int
    rain_params: RainParams
    haze_params: Optional[HazeParams] = None
    split: Literal["train", "val", "test"] = "train"


class SrrSpec(BaseModel):
    """Plain conv+ReLU residual network over the 12 subband channels"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["srr"] = "srr"
    depth: int = Field(default=20, ge=2)
    width: int = Field(default=64, ge=1)


class DjrhrSpec(BaseModel):
    """Dense-block residual network over subbands + dark channel (13 channels)"""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["djrhr"] = "djrhr"
    blocks: int = Field(default=3, ge=1)  # L
    growth: int = Field(default=12, ge=1)  # K
    layers_per_block: int = Field(default=4, ge=1)


NetworkSpec = Union[SrrSpec, DjrhrSpec]


class LossWeights(BaseModel):
    alpha: float = Field(default=0.5, ge=0.0)


class StepLog(BaseModel):
    """Per-step training record; l1/l2 are null for SRR-net"""
    kind: Literal["step"] = "step"
    epoch: int
    step: int
    lr: float
    total: float
    l1: Optional[float] = None
    l2: Optional[float] = None


class EpochLog(BaseModel):
    kind: Literal["epoch"] = "epoch"
    epoch: int
    steps: int
    lr: float
    total: float
    l1: Optional[float] = None
    l2: Optional[float] = None
    checkpoint: str
    val_psnr_db: Optional[Union[float, Literal["inf"]]] = None
    val_ssim: Optional[float] = None


class EvalConfig(BaseModel):
    peak: float = 1.0
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    color_space: Literal["rgb"] = "rgb"


class EvalRecord(BaseModel):
    id: str
    psnr_db: Union[float, Literal["inf"]]
    ssim: float = Field(ge=-1.0, le=1.0)
    niqe: None = None


class EvalAggregate(BaseModel):
    aggregate: Literal[True] = True
    count: int
    mean_psnr_db: Union[float, Literal["inf"]]
    mean_ssim: float
    niqe: None = None
    config: EvalConfig


class SweepRow(BaseModel):
    """One cell of the growth-rate / dense-block grid study"""
    growth: int
    blocks: int
    param_count: int
    input_psnr_db: Union[float, Literal["inf"]]
    mean_psnr_db: Union[float, Literal["inf"]]
    mean_ssim: float
