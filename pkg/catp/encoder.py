"""Patch embedding, input assembly and the staged pre-norm transformer encoder."""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np

from catp.errors import InvalidArgumentError
from catp.models import EncoderConfig
from catp.numerics import as_matrix, gelu, layer_norm, matmul, require_finite, softmax_rows

logger = logging.getLogger("catp_encoder")

PROTOTYPE_ORIGINS = ("low", "high")


@dataclass
class LayerWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    qkv_weight: np.ndarray   # C x 3C, columns ordered q | k | v
    qkv_bias: np.ndarray
    proj_weight: np.ndarray
    proj_bias: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    fc1_weight: np.ndarray
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray
    fc2_bias: np.ndarray

    @classmethod
    def zeros(cls, embed_dim: int, hidden_dim: int) -> "LayerWeights":
        """Unit layer norms, every projection zero: the block is a pure residual."""
        c, h = embed_dim, hidden_dim
        return cls(
            ln1_gamma=np.ones(c), ln1_beta=np.zeros(c),
            qkv_weight=np.zeros((c, 3 * c)), qkv_bias=np.zeros(3 * c),
            proj_weight=np.zeros((c, c)), proj_bias=np.zeros(c),
            ln2_gamma=np.ones(c), ln2_beta=np.zeros(c),
            fc1_weight=np.zeros((c, h)), fc1_bias=np.zeros(h),
            fc2_weight=np.zeros((h, c)), fc2_bias=np.zeros(c),
        )


@dataclass
class EncoderWeights:
    patch_weight: np.ndarray   # patch_dim x C
    patch_bias: np.ndarray
    cls_token: np.ndarray      # 1 x C
    pos_embed: np.ndarray      # (T+1) x C
    layers: List[LayerWeights] = field(default_factory=list)

    @classmethod
    def zeros(cls, config: EncoderConfig) -> "EncoderWeights":
        c = config.embed_dim
        return cls(
            patch_weight=np.zeros((config.patch_dim, c)),
            patch_bias=np.zeros(c),
            cls_token=np.zeros((1, c)),
            pos_embed=np.zeros((config.num_tokens + 1, c)),
            layers=[LayerWeights.zeros(c, config.hidden_dim) for _ in range(config.num_layers)],
        )


@dataclass
class TokenSequence:
    """Active tokens at one point of the encoder.

    Row order of ``tokens()`` is always [cls; patches; prototypes]. The
    index map ties each patch row to its original grid position and stays
    strictly increasing.
    """
    cls: np.ndarray
    patches: np.ndarray
    index_map: np.ndarray
    prototypes: np.ndarray = None
    prototype_origins: Tuple[str, ...] = ()

    def __post_init__(self):
        self.cls = np.asarray(self.cls, dtype=np.float64).reshape(-1)
        width = self.cls.shape[0]
        self.patches = np.asarray(self.patches, dtype=np.float64).reshape(-1, width)
        self.index_map = np.asarray(self.index_map, dtype=np.int64).reshape(-1)
        if self.prototypes is None:
            self.prototypes = np.zeros((0, width))
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64).reshape(-1, width)
        self.prototype_origins = tuple(self.prototype_origins)
        if self.index_map.shape[0] != self.patches.shape[0]:
            raise InvalidArgumentError(
                f"index map has {self.index_map.shape[0]} entries for {self.patches.shape[0]} patches")
        if np.any(np.diff(self.index_map) <= 0):
            raise InvalidArgumentError("index map must be strictly increasing")
        if self.index_map.size and self.index_map[0] < 0:
            raise InvalidArgumentError("index map entries must be non-negative")
        if self.prototypes.shape[0] > 2 or self.prototypes.shape[0] != len(self.prototype_origins):
            raise InvalidArgumentError(
                f"{self.prototypes.shape[0]} prototypes with origins {self.prototype_origins}")
        if any(o not in PROTOTYPE_ORIGINS for o in self.prototype_origins):
            raise InvalidArgumentError(f"unknown prototype origin in {self.prototype_origins}")

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def num_prototypes(self) -> int:
        return self.prototypes.shape[0]

    def __len__(self) -> int:
        return 1 + self.num_patches + self.num_prototypes

    def tokens(self) -> np.ndarray:
        return np.vstack([self.cls[None, :], self.patches, self.prototypes])

    def with_tokens(self, tokens: np.ndarray) -> "TokenSequence":
        """Same layout and index map, new row contents."""
        if tokens.shape[0] != len(self):
            raise InvalidArgumentError(
                f"expected {len(self)} token rows, got {tokens.shape[0]}")
        n = self.num_patches
        return replace(
            self,
            cls=tokens[0],
            patches=tokens[1:1 + n],
            prototypes=tokens[1 + n:],
        )


def patch_embed(image: np.ndarray, weight, bias, patch_size: int) -> np.ndarray:
    """Project non-overlapping P x P patches, row-major over the grid, to C dims."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise InvalidArgumentError(f"image must be H x W x channels, got shape {img.shape}")
    h, w, ch = img.shape
    p = patch_size
    if p <= 0 or h % p or w % p:
        raise InvalidArgumentError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    flat = img.reshape(gh, p, gw, p, ch).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p * ch)
    weight = as_matrix(weight, "patch_embed.weight")
    if weight.shape[0] != flat.shape[1]:
        raise InvalidArgumentError(
            f"patch_embed weight expects {weight.shape[0]} inputs, patches have {flat.shape[1]}")
    return matmul(flat, weight) + np.asarray(bias, dtype=np.float64).reshape(1, -1)


def assemble_input(patch_tokens, cls_embedding, pos_embedding) -> TokenSequence:
    """X0 = [cls; patches] + E_pos, with the identity index map."""
    patches = as_matrix(patch_tokens, "patch_tokens")
    cls = np.asarray(cls_embedding, dtype=np.float64).reshape(1, -1)
    pos = as_matrix(pos_embedding, "pos_embedding")
    t, c = patches.shape
    if cls.shape[1] != c:
        raise InvalidArgumentError(f"cls embedding width {cls.shape[1]} != token width {c}")
    if pos.shape != (t + 1, c):
        raise InvalidArgumentError(
            f"positional embedding must be {(t + 1, c)}, got {pos.shape}")
    x0 = np.vstack([cls, patches]) + pos
    return TokenSequence(cls=x0[0], patches=x0[1:], index_map=np.arange(t))


def self_attention(h: np.ndarray, lw: LayerWeights, num_heads: int, return_weights: bool = False):
    """Multi-head self-attention over every row of ``h`` (already normalised)."""
    n, c = h.shape
    if c % num_heads:
        raise InvalidArgumentError(f"width {c} not divisible by {num_heads} heads")
    d = c // num_heads
    qkv = matmul(h, lw.qkv_weight) + lw.qkv_bias
    q, k, v = (qkv[:, i * c:(i + 1) * c].reshape(n, num_heads, d).transpose(1, 0, 2)
               for i in range(3))
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d)
    weights = softmax_rows(scores.reshape(num_heads * n, n)).reshape(num_heads, n, n)
    heads = weights @ v
    merged = heads.transpose(1, 0, 2).reshape(n, c)
    out = matmul(merged, lw.proj_weight) + lw.proj_bias
    if return_weights:
        return out, weights
    return out


def encoder_block(x: np.ndarray, lw: LayerWeights, num_heads: int) -> np.ndarray:
    """Pre-norm block: x + MHSA(LN(x)), then + MLP(LN(.))."""
    x = as_matrix(x, "tokens")
    x = x + self_attention(layer_norm(x, lw.ln1_gamma, lw.ln1_beta), lw, num_heads)
    hidden = gelu(matmul(layer_norm(x, lw.ln2_gamma, lw.ln2_beta), lw.fc1_weight) + lw.fc1_bias)
    x = x + matmul(hidden, lw.fc2_weight) + lw.fc2_bias
    return require_finite(x, "encoder_block")


def transformer_layer(seq: TokenSequence, lw: LayerWeights, num_heads: int) -> TokenSequence:
    """One block over cls, patches and prototypes jointly; the index map is untouched."""
    return seq.with_tokens(encoder_block(seq.tokens(), lw, num_heads))


def stage_layer_range(config: EncoderConfig, stage_index: int) -> range:
    if not 1 <= stage_index <= config.num_stages:
        raise InvalidArgumentError(
            f"stage_index {stage_index} outside [1, {config.num_stages}]")
    return config.stage_span(stage_index)


def run_stage(seq: TokenSequence, stage_index: int, weights: EncoderWeights,
              config: EncoderConfig) -> TokenSequence:
    layers = stage_layer_range(config, stage_index)
    for layer in layers:
        seq = transformer_layer(seq, weights.layers[layer], config.num_heads)
    logger.debug(f"Stage {stage_index}: layers {layers.start}-{layers.stop - 1} over {len(seq)} tokens")
    return seq
