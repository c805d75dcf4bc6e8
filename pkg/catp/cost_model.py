"""Analytic FLOPs accounting for the staged encoder under token pruning.

Counts are exact integers: one unit per multiply-accumulate of every dense
product in a block (QKV and output projections, the two attention products,
the two MLP projections). Biases, norms and softmax are not charged.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from catp.errors import InvalidArgumentError
from catp.models import (CompensationMode, CostReport, EncoderConfig, LayerCost, LayoutEntry,
                         ModeEntry, PruneThresholds, StageCount, SweepEntry)
from catp.pruning import apply_keep_one_fallback, partition_tokens

logger = logging.getLogger("catp_cost_model")


def layer_flops(n_tokens: int, embed_dim: int, num_heads: int, mlp_ratio: float) -> int:
    """4nC^2 + 2n^2C + 2nC*hidden with hidden = round(mlp_ratio * C)."""
    if n_tokens < 0 or embed_dim <= 0 or num_heads <= 0 or mlp_ratio <= 0:
        raise InvalidArgumentError(
            f"invalid layer geometry n={n_tokens} C={embed_dim} heads={num_heads} r={mlp_ratio}")
    n, c = int(n_tokens), int(embed_dim)
    hidden = int(round(mlp_ratio * c))
    return 4 * n * c * c + 2 * n * n * c + 2 * n * c * hidden


def pipeline_flops(config: EncoderConfig, stage_counts: Sequence[StageCount],
                   compensation_mode: CompensationMode) -> CostReport:
    mode = CompensationMode(compensation_mode)
    if len(stage_counts) != config.num_stages:
        raise InvalidArgumentError(
            f"expected {config.num_stages} stage counts, got {len(stage_counts)}")
    if mode is CompensationMode.NONE and any(c.prototypes for c in stage_counts):
        raise InvalidArgumentError("compensation mode 'none' cannot carry prototype tokens")
    c = config.embed_dim
    per_layer = []
    for layer in range(config.num_layers):
        tokens = stage_counts[config.stage_of_layer(layer) - 1].tokens
        per_layer.append(LayerCost(
            layer=layer, tokens=tokens,
            flops=layer_flops(tokens, c, config.num_heads, config.mlp_ratio)))
    # each boundary scores the patches that were active in the stage before it
    scoring = sum(2 * stage_counts[s].patches * c for s in range(config.num_stages - 1))
    total = sum(p.flops for p in per_layer) + scoring
    baseline = config.num_layers * layer_flops(
        config.num_tokens + 1, c, config.num_heads, config.mlp_ratio)
    return CostReport(
        compensation_mode=mode,
        per_layer=per_layer,
        scoring_overhead=scoring,
        total_pruned=total,
        total_baseline=baseline,
        reduction_ratio=1.0 - total / baseline,
    )


class ConfidenceSource(Protocol):
    compensation_mode: CompensationMode

    def stage_counts(self, thresholds: PruneThresholds) -> List[StageCount]:
        ...


@dataclass
class ScoreTrace:
    """Per boundary, one confidence value for every grid position."""
    scores: np.ndarray  # boundaries x T

    @classmethod
    def from_result(cls, result, num_tokens: int) -> "ScoreTrace":
        """Capture the scores of a forward pass.

        Positions that had already left the sequence keep the last score
        they were given, so the trace can be replayed under wider bands.
        """
        rows = []
        last = np.full(num_tokens, 0.5)
        for record in result.records:
            row = last.copy()
            row[record.entering_index_map] = record.scores
            rows.append(row)
            last = row
        return cls(scores=np.array(rows).reshape(len(rows), num_tokens))


def simulate_counts(trace: ScoreTrace, thresholds: PruneThresholds,
                    mode: CompensationMode) -> List[StageCount]:
    """Replay partitioning on recorded scores without running the encoder."""
    mode = CompensationMode(mode)
    num_tokens = trace.scores.shape[1]
    active = np.arange(num_tokens)
    counts = [StageCount(patches=num_tokens)]
    for boundary in range(trace.scores.shape[0]):
        scores = trace.scores[boundary, active]
        theta_d, theta_u = thresholds.for_boundary(boundary)
        partition, _ = apply_keep_one_fallback(
            partition_tokens(scores, theta_d, theta_u), scores, active)
        protos = 0
        if mode is not CompensationMode.NONE:
            protos = int(partition.low.size > 0) + int(partition.high.size > 0)
        active = active[partition.mid]
        counts.append(StageCount(patches=len(active), prototypes=protos))
    return counts


@dataclass
class TraceSource:
    trace: ScoreTrace
    compensation_mode: CompensationMode = CompensationMode.WEIGHTED

    def stage_counts(self, thresholds: PruneThresholds) -> List[StageCount]:
        return simulate_counts(self.trace, thresholds, self.compensation_mode)


@dataclass
class ModelSource:
    """Runs the real forward pass of a model on one image for every query."""
    model: object
    image: np.ndarray
    compensation_mode: CompensationMode = CompensationMode.WEIGHTED

    def stage_counts(self, thresholds: PruneThresholds) -> List[StageCount]:
        return self.model.forward(self.image, thresholds, self.compensation_mode).stage_counts


def threshold_sweep(source: ConfidenceSource, grid: Sequence[Tuple[float, float]],
                    config: EncoderConfig, tau: float = 10.0) -> List[SweepEntry]:
    """One entry per (theta_d, theta_u) pair, in grid order; invalid pairs carry an error."""
    entries = []
    for theta_d, theta_u in grid:
        try:
            thresholds = PruneThresholds(theta_d=theta_d, theta_u=theta_u, tau=tau)
        except ValidationError as e:
            logger.warning(f"Skipping threshold pair {theta_d}/{theta_u}: {e.errors()[0]['msg']}")
            entries.append(SweepEntry(theta_d=theta_d, theta_u=theta_u,
                                      error=e.errors()[0]["msg"]))
            continue
        counts = source.stage_counts(thresholds)
        report = pipeline_flops(config, counts, source.compensation_mode)
        logger.debug(f"Sweep {theta_d}/{theta_u}: ratio {report.reduction_ratio:.4f}")
        entries.append(SweepEntry(theta_d=theta_d, theta_u=theta_u,
                                  report=report, stage_counts=counts))
    return entries


def boundary_sweep(source_for: Callable[[EncoderConfig], ConfidenceSource],
                   layouts: Sequence[Sequence[int]], config: EncoderConfig,
                   thresholds: Optional[PruneThresholds] = None) -> List[LayoutEntry]:
    """Cost of the same encoder under different pruning-boundary layouts."""
    thresholds = thresholds or PruneThresholds()
    entries = []
    for layout in layouts:
        try:
            layout_cfg = EncoderConfig(**{**config.model_dump(), "stage_boundaries": tuple(layout)})
        except ValidationError as e:
            msg = e.errors()[0]["msg"]
            logger.warning(f"Skipping boundary layout {list(layout)}: {msg}")
            entries.append(LayoutEntry(stage_boundaries=list(layout), error=msg))
            continue
        stage_thresholds = thresholds
        if thresholds.stage_overrides:
            stage_thresholds = thresholds.model_copy(update={"stage_overrides": None})
        source = source_for(layout_cfg)
        counts = source.stage_counts(stage_thresholds)
        entries.append(LayoutEntry(
            stage_boundaries=list(layout),
            report=pipeline_flops(layout_cfg, counts, source.compensation_mode),
            stage_counts=counts,
        ))
    return entries


def compensation_comparison(source_for: Callable[[CompensationMode], ConfidenceSource],
                            thresholds: PruneThresholds, config: EncoderConfig) -> List[ModeEntry]:
    """Costs under no compensation, average and probability-weighted prototypes."""
    entries = []
    for mode in (CompensationMode.NONE, CompensationMode.AVERAGE, CompensationMode.WEIGHTED):
        counts = source_for(mode).stage_counts(thresholds)
        entries.append(ModeEntry(compensation_mode=mode,
                                 report=pipeline_flops(config, counts, mode),
                                 stage_counts=counts))
    return entries
