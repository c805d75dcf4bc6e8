"""Validated configuration and report records shared across the pipeline."""
import bisect
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class CompensationMode(str, Enum):
    NONE = "none"
    AVERAGE = "average"
    WEIGHTED = "weighted"


class EncoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_h: int = Field(default=64, gt=0, description="Input height in pixels")
    image_w: int = Field(default=64, gt=0, description="Input width in pixels")
    patch_size: int = Field(default=16, gt=0, description="Patch side P")
    in_channels: int = Field(default=3, gt=0, description="Image channels fed to the patch embedding")
    embed_dim: int = Field(default=32, gt=0, description="Token width C")
    num_layers: int = Field(default=8, gt=0, description="Transformer layers L")
    num_heads: int = Field(default=4, gt=0, description="Attention heads")
    mlp_ratio: float = Field(default=4.0, gt=0, allow_inf_nan=False, description="MLP hidden width / C")
    stage_boundaries: Tuple[int, ...] = Field(
        default=(2, 4, 6), description="Layer indices after which pruning occurs")

    @field_validator("stage_boundaries", mode="before")
    @classmethod
    def _coerce_boundaries(cls, value):
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        return tuple(int(v) for v in value)

    @model_validator(mode="after")
    def _check_geometry(self):
        if self.image_h % self.patch_size or self.image_w % self.patch_size:
            raise ValueError(
                f"image {self.image_h}x{self.image_w} not divisible by patch size {self.patch_size}")
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        bounds = self.stage_boundaries
        if list(bounds) != sorted(set(bounds)):
            raise ValueError(f"stage_boundaries must be strictly ascending, got {list(bounds)}")
        if bounds and (bounds[0] <= 0 or bounds[-1] >= self.num_layers):
            raise ValueError(
                f"stage_boundaries must lie strictly inside (0, {self.num_layers})")
        stages = len(bounds) + 1
        if self.num_layers % stages:
            raise ValueError(
                f"num_layers {self.num_layers} not divisible by {stages} stages")
        if int(round(self.mlp_ratio * self.embed_dim)) <= 0:
            raise ValueError("mlp_ratio * embed_dim must round to a positive width")
        return self

    @property
    def grid_h(self) -> int:
        return self.image_h // self.patch_size

    @property
    def grid_w(self) -> int:
        return self.image_w // self.patch_size

    @property
    def num_tokens(self) -> int:
        """T, the number of patch tokens."""
        return self.grid_h * self.grid_w

    @property
    def num_stages(self) -> int:
        return len(self.stage_boundaries) + 1

    def stage_span(self, stage: int) -> range:
        """0-based layer indices of a 1-based stage."""
        starts = (0,) + self.stage_boundaries
        ends = self.stage_boundaries + (self.num_layers,)
        return range(starts[stage - 1], ends[stage - 1])

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.in_channels

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))

    @property
    def decoder_dim(self) -> int:
        return max(self.embed_dim // 2, 8)

    def stage_of_layer(self, layer: int) -> int:
        """1-based stage containing a 0-based layer index."""
        return bisect.bisect_right(self.stage_boundaries, layer) + 1


class PruneThresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta_d: float = Field(default=0.3, ge=0.0, le=1.0, allow_inf_nan=False, description="Lower threshold")
    theta_u: float = Field(default=0.7, ge=0.0, le=1.0, allow_inf_nan=False, description="Upper threshold")
    tau: float = Field(default=10.0, gt=0.0, allow_inf_nan=False, description="Scoring temperature")
    stage_overrides: Optional[Tuple[Tuple[float, float], ...]] = Field(
        default=None, description="Optional (theta_d, theta_u) per pruning boundary")

    @model_validator(mode="after")
    def _check_order(self):
        if self.theta_d > self.theta_u:
            raise ValueError(f"theta_d {self.theta_d} must not exceed theta_u {self.theta_u}")
        for k, (low, high) in enumerate(self.stage_overrides or ()):
            if not (0.0 <= low <= high <= 1.0):
                raise ValueError(
                    f"stage threshold pair {k + 1} ({low}/{high}) must satisfy 0 <= theta_d <= theta_u <= 1")
        return self

    def for_boundary(self, boundary: int) -> Tuple[float, float]:
        """Thresholds for the 0-based pruning boundary."""
        if self.stage_overrides:
            return self.stage_overrides[boundary]
        return self.theta_d, self.theta_u


class StageCount(BaseModel):
    """Active tokens during one stage: patches plus the appended prototypes."""
    model_config = ConfigDict(frozen=True)

    patches: int = Field(ge=0)
    prototypes: int = Field(default=0, ge=0, le=2)

    @property
    def tokens(self) -> int:
        return self.patches + 1 + self.prototypes


class LayerCost(BaseModel):
    layer: int
    tokens: int
    flops: int


class CostReport(BaseModel):
    compensation_mode: CompensationMode
    per_layer: List[LayerCost]
    scoring_overhead: int
    total_pruned: int
    total_baseline: int
    reduction_ratio: float

    @model_validator(mode="after")
    def _check_totals(self):
        if self.total_pruned != sum(c.flops for c in self.per_layer) + self.scoring_overhead:
            raise ValueError("total_pruned must equal per-layer sum plus scoring overhead")
        return self


class SweepEntry(BaseModel):
    theta_d: float
    theta_u: float
    report: Optional[CostReport] = None
    stage_counts: List[StageCount] = Field(default_factory=list)
    error: Optional[str] = None


class LayoutEntry(BaseModel):
    stage_boundaries: List[int]
    report: Optional[CostReport] = None
    stage_counts: List[StageCount] = Field(default_factory=list)
    error: Optional[str] = None


class ModeEntry(BaseModel):
    compensation_mode: CompensationMode
    report: CostReport
    stage_counts: List[StageCount]
