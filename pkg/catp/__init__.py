"""Confidence-aware token pruning for a desk-scale vision transformer encoder."""
from catp.models import CompensationMode, CostReport, EncoderConfig, PruneThresholds, StageCount
from catp.pipeline import CatpModel, PipelineResult

__all__ = [
    "CatpModel",
    "CompensationMode",
    "CostReport",
    "EncoderConfig",
    "PipelineResult",
    "PruneThresholds",
    "StageCount",
]
