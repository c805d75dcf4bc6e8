"""Dual-path feature compensation: prototype aggregation and sequence rebuild."""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from catp.encoder import TokenSequence
from catp.models import CompensationMode
from catp.numerics import as_matrix
from catp.pruning import Partition

logger = logging.getLogger("catp_compensation")


@dataclass
class Prototype:
    feature: np.ndarray
    origin: str
    source_count: int
    weight_vector: np.ndarray


def _aggregate(features, weights: np.ndarray, origin: str) -> Optional[Prototype]:
    x = as_matrix(features, "features")
    if x.shape[0] == 0:
        return None
    w = weights / weights.sum()
    return Prototype(feature=w @ x, origin=origin, source_count=x.shape[0], weight_vector=w)


def aggregate_low(features, scores) -> Optional[Prototype]:
    """Weights p_t / sum p: within the background group, the more ambiguous weigh more."""
    p = np.asarray(scores, dtype=np.float64).reshape(-1)
    return _aggregate(features, p, "low")


def aggregate_high(features, scores) -> Optional[Prototype]:
    """Inverse weighting with normalised (1 - p_t)."""
    p = np.asarray(scores, dtype=np.float64).reshape(-1)
    return _aggregate(features, 1.0 - p, "high")


def aggregate_average(features, scores, origin: str = "low") -> Optional[Prototype]:
    n = np.asarray(scores).reshape(-1).shape[0]
    return _aggregate(features, np.ones(n), origin)


def build_prototypes(patches: np.ndarray, scores: np.ndarray, partition: Partition,
                     mode: CompensationMode) -> List[Prototype]:
    """Prototypes for the pruned subsets, low before high; empty subsets are omitted."""
    mode = CompensationMode(mode)
    if mode is CompensationMode.NONE:
        return []
    out = []
    for origin, subset in (("low", partition.low), ("high", partition.high)):
        if subset.size == 0:
            continue
        feats, sub_scores = patches[subset], scores[subset]
        if mode is CompensationMode.AVERAGE:
            proto = aggregate_average(feats, sub_scores, origin)
        elif origin == "low":
            proto = aggregate_low(feats, sub_scores)
        else:
            proto = aggregate_high(feats, sub_scores)
        out.append(proto)
    return out


def rebuild_sequence(cls, mid_patches, index_map,
                     proto_low: Optional[Prototype] = None,
                     proto_high: Optional[Prototype] = None) -> TokenSequence:
    """[cls; X_mid; z_low?; z_high?] with the index map covering X_mid only."""
    present = [p for p in (proto_low, proto_high) if p is not None]
    width = np.asarray(cls).reshape(-1).shape[0]
    rows = np.vstack([p.feature.reshape(1, -1) for p in present]) if present else np.zeros((0, width))
    return TokenSequence(
        cls=cls,
        patches=mid_patches,
        index_map=index_map,
        prototypes=rows,
        prototype_origins=tuple(p.origin for p in present),
    )
