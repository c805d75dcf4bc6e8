"""Dense snapshots, hierarchical token refilling and the pyramid decoder."""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from catp.encoder import TokenSequence
from catp.errors import InvalidArgumentError, InvariantError
from catp.numerics import as_matrix, matmul, sigmoid_temp
from catp.pruning import StageRecord

logger = logging.getLogger("catp_refill")


@dataclass
class FeaturePyramid:
    levels: List[np.ndarray]
    grid_h: int
    grid_w: int

    @property
    def num_tokens(self) -> int:
        return self.grid_h * self.grid_w

    def __post_init__(self):
        for s, level in enumerate(self.levels):
            if level.shape[0] != self.num_tokens:
                raise InvariantError(
                    f"pyramid level {s + 1} has {level.shape[0]} rows, expected {self.num_tokens}")


@dataclass
class DecoderWeights:
    level_weights: List[np.ndarray]   # one C x D projection per level
    level_biases: List[np.ndarray]
    head_weight: np.ndarray           # D x 1
    head_bias: np.ndarray


def snapshot_dense(running_buffer, stage_output: TokenSequence) -> np.ndarray:
    """Overwrite active grid rows with the stage's patch features; cls and prototypes are ignored."""
    base = as_matrix(running_buffer, "running_buffer").copy()
    positions = stage_output.index_map
    if positions.size and positions.max() >= base.shape[0]:
        raise InvalidArgumentError(
            f"index map position {positions.max()} outside buffer of {base.shape[0]} rows")
    base[positions] = stage_output.patches
    return base


def hierarchical_refill(bases: Sequence[np.ndarray], active_sets: Sequence[np.ndarray],
                        grid_h: int, grid_w: int) -> FeaturePyramid:
    """Deepest-first: rows of level s at positions active in stage s+1 take level s+1's rows."""
    if len(bases) != len(active_sets):
        raise InvalidArgumentError(
            f"{len(bases)} snapshots but {len(active_sets)} active sets")
    levels = [np.array(b, dtype=np.float64, copy=True) for b in bases]
    for s in range(len(levels) - 1):
        deeper = np.asarray(active_sets[s + 1], dtype=np.int64)
        if not np.isin(deeper, active_sets[s]).all():
            logger.error(f"Active set of stage {s + 2} is not contained in stage {s + 1}")
            raise InvariantError(
                f"active positions of stage {s + 2} are not a subset of stage {s + 1}")
    for s in range(len(levels) - 2, -1, -1):
        deeper = np.asarray(active_sets[s + 1], dtype=np.int64)
        levels[s][deeper] = levels[s + 1][deeper]
    return FeaturePyramid(levels=levels, grid_h=grid_h, grid_w=grid_w)


def _upsample_axis(n_in: int, scale: int):
    src = (np.arange(n_in * scale) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_upsample(grid: np.ndarray, scale: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize by an integer factor (corners not aligned)."""
    grid = as_matrix(grid, "grid")
    r0, r1, fr = _upsample_axis(grid.shape[0], scale)
    c0, c1, fc = _upsample_axis(grid.shape[1], scale)
    rows = grid[r0] * (1.0 - fr)[:, None] + grid[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc)[None, :] + rows[:, c1] * fc[None, :]


def decode(pyramid: FeaturePyramid, weights: DecoderWeights, patch_size: int) -> np.ndarray:
    """Project each level C->D, sum, project D->1, sigmoid, upsample to H x W."""
    if len(weights.level_weights) != len(pyramid.levels):
        raise InvalidArgumentError(
            f"decoder has {len(weights.level_weights)} level projections for "
            f"{len(pyramid.levels)} pyramid levels")
    fused = None
    for level, w, b in zip(pyramid.levels, weights.level_weights, weights.level_biases):
        proj = matmul(level, w) + np.asarray(b).reshape(1, -1)
        fused = proj if fused is None else fused + proj
    logits = matmul(fused, weights.head_weight) + np.asarray(weights.head_bias).reshape(1, -1)
    coarse = sigmoid_temp(logits.reshape(pyramid.grid_h, pyramid.grid_w), 1.0)
    return np.clip(bilinear_upsample(coarse, patch_size), 0.0, 1.0)


def confidence_heatmap(record: StageRecord, num_tokens: int,
                       earlier: Sequence[StageRecord] = ()) -> np.ndarray:
    """Scores at the entering tokens' grid positions.

    Positions pruned at earlier boundaries read 0 if they left as background
    and 1 if they left as foreground.
    """
    field = np.zeros(num_tokens, dtype=np.float64)
    for prev in earlier:
        field[prev.entering_index_map[prev.partition.low]] = 0.0
        field[prev.entering_index_map[prev.partition.high]] = 1.0
    field[record.entering_index_map] = record.scores
    return field


def retention_mask(record: StageRecord, num_tokens: int) -> np.ndarray:
    """Grid-level retained set after the record's boundary."""
    kept = np.zeros(num_tokens, dtype=bool)
    kept[record.surviving_index_map] = True
    return kept


def to_grey_levels(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to bytes as floor(255 v + 0.5)."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
