"""Confidence scoring, dual-threshold partitioning and token gathering."""
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Tuple

import numpy as np

from catp.encoder import TokenSequence
from catp.errors import InvalidArgumentError
from catp.numerics import as_matrix, sigmoid_temp

if TYPE_CHECKING:
    from catp.compensation import Prototype

logger = logging.getLogger("catp_pruning")


@dataclass
class ScoringHead:
    """Linear C -> 1 projection used at one pruning boundary."""
    weight: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        self.bias = float(np.asarray(self.bias, dtype=np.float64).reshape(-1)[0])

    def logits(self, patches) -> np.ndarray:
        patches = as_matrix(patches, "patches")
        if patches.shape[1] != self.weight.shape[0]:
            raise InvalidArgumentError(
                f"scoring head expects width {self.weight.shape[0]}, got {patches.shape[1]}")
        return patches @ self.weight + self.bias


@dataclass
class Partition:
    """Disjoint, sorted slot indices into the tokens entering a boundary."""
    low: np.ndarray
    mid: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.asarray(self.low, dtype=np.int64)
        self.mid = np.asarray(self.mid, dtype=np.int64)
        self.high = np.asarray(self.high, dtype=np.int64)

    def counts(self) -> Tuple[int, int, int]:
        return len(self.low), len(self.mid), len(self.high)


@dataclass
class DecisionMask:
    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def __len__(self) -> int:
        return self.bits.shape[0]


@dataclass
class StageRecord:
    """Everything produced at the boundary entering ``stage`` (2..S)."""
    stage: int
    theta_d: float
    theta_u: float
    scores: np.ndarray
    partition: Partition
    mask: DecisionMask
    entering_index_map: np.ndarray
    surviving_index_map: np.ndarray
    prototypes: List["Prototype"] = field(default_factory=list)
    fallback_used: bool = False

    @property
    def entering_count(self) -> int:
        return len(self.entering_index_map)

    @property
    def surviving_count(self) -> int:
        return len(self.surviving_index_map)

    def summary(self) -> dict:
        low, mid, high = self.partition.counts()
        on_threshold = int(np.sum((self.scores == self.theta_d) | (self.scores == self.theta_u)))
        return {
            "stage": self.stage,
            "theta_d": self.theta_d,
            "theta_u": self.theta_u,
            "entering": self.entering_count,
            "surviving": self.surviving_count,
            "low": low,
            "mid": mid,
            "high": high,
            "on_threshold": on_threshold,
            "mask_popcount": self.mask.popcount,
            "fallback_used": self.fallback_used,
            "prototypes": [{"origin": p.origin, "source_count": p.source_count}
                           for p in self.prototypes],
        }


def score_tokens(patches, head: ScoringHead, tau: float) -> np.ndarray:
    """p_t = sigmoid((x_t . w + b) / tau) for every patch row."""
    return sigmoid_temp(head.logits(patches), tau)


def partition_tokens(scores, theta_d: float, theta_u: float) -> Partition:
    if not (0.0 <= theta_d <= theta_u <= 1.0):
        raise InvalidArgumentError(f"invalid thresholds {theta_d}/{theta_u}")
    p = np.asarray(scores, dtype=np.float64).reshape(-1)
    low = p < theta_d
    high = p > theta_u
    mid = ~(low | high)
    return Partition(np.flatnonzero(low), np.flatnonzero(mid), np.flatnonzero(high))


def make_mask(partition: Partition, entering_count: int) -> DecisionMask:
    bits = np.zeros(entering_count, dtype=bool)
    for subset in (partition.low, partition.mid, partition.high):
        if subset.size and (subset.min() < 0 or subset.max() >= entering_count):
            raise InvalidArgumentError(
                f"partition index outside [0, {entering_count})")
    bits[partition.mid] = True
    return DecisionMask(bits)


def apply_keep_one_fallback(partition: Partition, scores, index_map) -> Tuple[Partition, bool]:
    """Keep the most ambiguous token when nothing lands in the mid band.

    Ties on |p - 0.5| go to the lowest grid position.
    """
    p = np.asarray(scores, dtype=np.float64).reshape(-1)
    if partition.mid.size or p.size == 0:
        return partition, False
    grid = np.asarray(index_map, dtype=np.int64).reshape(-1)
    keep = int(np.lexsort((grid, np.abs(p - 0.5)))[0])
    logger.debug(f"Empty mid band; keeping slot {keep} (grid {grid[keep]}, p={p[keep]:.6f})")
    return Partition(
        low=partition.low[partition.low != keep],
        mid=np.array([keep], dtype=np.int64),
        high=partition.high[partition.high != keep],
    ), True


def gather_retained(seq: TokenSequence, mask: DecisionMask) -> TokenSequence:
    """Survivors keep their relative order; old prototypes are dropped."""
    if len(mask) != seq.num_patches:
        raise InvalidArgumentError(
            f"mask length {len(mask)} != patch count {seq.num_patches}")
    return TokenSequence(
        cls=seq.cls.copy(),
        patches=seq.patches[mask.bits],
        index_map=seq.index_map[mask.bits],
    )


def score_jacobian(patches, head: ScoringHead, tau: float) -> np.ndarray:
    """Row t holds dp_t / dx_t = p_t (1 - p_t) w / tau; cross-token terms are zero."""
    p = score_tokens(patches, head, tau)
    return (p * (1.0 - p))[:, None] * head.weight[None, :] / tau


def finite_difference_jacobian(patches, head: ScoringHead, tau: float, step: float = 1e-6) -> np.ndarray:
    """Central differences of each score w.r.t. its own row."""
    patches = as_matrix(patches, "patches")
    jac = np.zeros_like(patches)
    for col in range(patches.shape[1]):
        plus = patches.copy()
        minus = patches.copy()
        plus[:, col] += step
        minus[:, col] -= step
        jac[:, col] = (score_tokens(plus, head, tau) - score_tokens(minus, head, tau)) / (2.0 * step)
    return jac


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
