"""End-to-end forward pass: staged encoder with pruning, refilling and decoding."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from catp.compensation import build_prototypes, rebuild_sequence
from catp.encoder import TokenSequence, assemble_input, patch_embed, run_stage
from catp.errors import InvalidArgumentError
from catp.models import CompensationMode, EncoderConfig, PruneThresholds, StageCount
from catp.pruning import (ScoringHead, StageRecord, apply_keep_one_fallback, gather_retained,
                          make_mask, partition_tokens, score_tokens)
from catp.refill import FeaturePyramid, decode, hierarchical_refill, snapshot_dense
from catp.weights import ModelWeights

logger = logging.getLogger("catp_pipeline")


@dataclass
class PipelineResult:
    records: List[StageRecord]
    stage_counts: List[StageCount]
    active_sets: List[np.ndarray]
    pyramid: FeaturePyramid
    prediction: np.ndarray

    @property
    def sequence_lengths(self) -> List[int]:
        return [c.tokens for c in self.stage_counts]


def prepare_image(image: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """Check geometry and broadcast grayscale input to the configured channels."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[:2] != (config.image_h, config.image_w):
        raise InvalidArgumentError(
            f"image is {img.shape[0]}x{img.shape[1]}, config expects "
            f"{config.image_h}x{config.image_w}")
    if img.shape[2] != config.in_channels:
        if img.shape[2] != 1:
            raise InvalidArgumentError(
                f"image has {img.shape[2]} channels, config expects {config.in_channels}")
        img = np.repeat(img, config.in_channels, axis=2)
    return img


def prune_at_boundary(seq: TokenSequence, head: ScoringHead, theta_d: float, theta_u: float,
                      tau: float, mode: CompensationMode, stage: int) -> Tuple[TokenSequence, StageRecord]:
    """Score, partition, mask, compensate and gather the tokens entering ``stage``."""
    scores = score_tokens(seq.patches, head, tau)
    partition = partition_tokens(scores, theta_d, theta_u)
    partition, fallback = apply_keep_one_fallback(partition, scores, seq.index_map)
    mask = make_mask(partition, seq.num_patches)
    prototypes = build_prototypes(seq.patches, scores, partition, mode)
    kept = gather_retained(seq, mask)
    by_origin = {p.origin: p for p in prototypes}
    rebuilt = rebuild_sequence(kept.cls, kept.patches, kept.index_map,
                               by_origin.get("low"), by_origin.get("high"))
    record = StageRecord(
        stage=stage,
        theta_d=theta_d,
        theta_u=theta_u,
        scores=scores,
        partition=partition,
        mask=mask,
        entering_index_map=seq.index_map.copy(),
        surviving_index_map=rebuilt.index_map.copy(),
        prototypes=prototypes,
        fallback_used=fallback,
    )
    low, mid, high = partition.counts()
    logger.debug(f"Boundary into stage {stage}: low={low} mid={mid} high={high} "
                 f"prototypes={len(prototypes)} fallback={fallback}")
    return rebuilt, record


class CatpModel:
    """Prunable encoder plus decoder bound to one configuration and weight set."""

    def __init__(self, config: EncoderConfig, weights: ModelWeights):
        self.config = config
        self.weights = weights

    def embed(self, image: np.ndarray) -> TokenSequence:
        enc = self.weights.encoder
        img = prepare_image(image, self.config)
        patches = patch_embed(img, enc.patch_weight, enc.patch_bias, self.config.patch_size)
        return assemble_input(patches, enc.cls_token, enc.pos_embed)

    def forward(self, image: np.ndarray, thresholds: Optional[PruneThresholds] = None,
                mode: CompensationMode = CompensationMode.WEIGHTED) -> PipelineResult:
        cfg = self.config
        thresholds = thresholds or PruneThresholds()
        mode = CompensationMode(mode)
        if thresholds.stage_overrides and len(thresholds.stage_overrides) != len(cfg.stage_boundaries):
            raise InvalidArgumentError(
                f"{len(thresholds.stage_overrides)} threshold pairs for "
                f"{len(cfg.stage_boundaries)} pruning boundaries")
        seq = self.embed(image)
        buffer = seq.patches.copy()
        records, counts, bases, active = [], [], [], []
        for stage in range(1, cfg.num_stages + 1):
            if stage > 1:
                boundary = stage - 2
                theta_d, theta_u = thresholds.for_boundary(boundary)
                seq, record = prune_at_boundary(
                    seq, self.weights.score_heads[boundary], theta_d, theta_u,
                    thresholds.tau, mode, stage)
                records.append(record)
            counts.append(StageCount(patches=seq.num_patches, prototypes=seq.num_prototypes))
            seq = run_stage(seq, stage, self.weights.encoder, cfg)
            buffer = snapshot_dense(buffer, seq)
            bases.append(buffer)
            active.append(seq.index_map.copy())
        pyramid = hierarchical_refill(bases, active, cfg.grid_h, cfg.grid_w)
        prediction = decode(pyramid, self.weights.decoder, cfg.patch_size)
        logger.info(f"Forward pass done; stage token counts {[c.tokens for c in counts]}")
        return PipelineResult(records=records, stage_counts=counts, active_sets=active,
                              pyramid=pyramid, prediction=prediction)
