"""CATPW1 weight files and resolution of canonical tensor names.

Layout (little-endian): magic ``CATPW1\\n``, u32 tensor count, then per
tensor u32 name length, UTF-8 name, u32 rank, u32 dims, float32 payload in
row-major order.
"""
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from catp.encoder import EncoderWeights, LayerWeights
from catp.errors import WeightLoadError
from catp.models import EncoderConfig
from catp.numerics import DEFAULT_INIT_STD, Rng, gaussian_init
from catp.pruning import ScoringHead
from catp.refill import DecoderWeights

logger = logging.getLogger("catp_weights")

MAGIC = b"CATPW1\n"
SCORE_HEAD_INIT_STD = 4.0

_BLOCK_PARAMS = (
    ("ln1.gamma", "ln1_gamma"), ("ln1.beta", "ln1_beta"),
    ("attn.qkv.weight", "qkv_weight"), ("attn.qkv.bias", "qkv_bias"),
    ("attn.proj.weight", "proj_weight"), ("attn.proj.bias", "proj_bias"),
    ("ln2.gamma", "ln2_gamma"), ("ln2.beta", "ln2_beta"),
    ("mlp.fc1.weight", "fc1_weight"), ("mlp.fc1.bias", "fc1_bias"),
    ("mlp.fc2.weight", "fc2_weight"), ("mlp.fc2.bias", "fc2_bias"),
)


@dataclass
class ModelWeights:
    encoder: EncoderWeights
    score_heads: List[ScoringHead]
    decoder: DecoderWeights

    def to_tensors(self) -> Dict[str, np.ndarray]:
        out = {
            "patch_embed.weight": self.encoder.patch_weight,
            "patch_embed.bias": self.encoder.patch_bias,
            "cls_token": self.encoder.cls_token,
            "pos_embed": self.encoder.pos_embed,
        }
        for i, layer in enumerate(self.encoder.layers):
            for name, attr in _BLOCK_PARAMS:
                out[f"blocks.{i}.{name}"] = getattr(layer, attr)
        for b, head in enumerate(self.score_heads):
            out[f"score_heads.{b}.weight"] = head.weight.reshape(-1, 1)
            out[f"score_heads.{b}.bias"] = np.array([head.bias])
        for s, (w, bias) in enumerate(zip(self.decoder.level_weights, self.decoder.level_biases)):
            out[f"decoder.levels.{s}.weight"] = w
            out[f"decoder.levels.{s}.bias"] = bias
        out["decoder.head.weight"] = self.decoder.head_weight
        out["decoder.head.bias"] = self.decoder.head_bias
        return out


def canonical_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    """Every tensor the pipeline needs, in file order."""
    c, h, d = config.embed_dim, config.hidden_dim, config.decoder_dim
    shapes = {
        "patch_embed.weight": (config.patch_dim, c),
        "patch_embed.bias": (c,),
        "cls_token": (1, c),
        "pos_embed": (config.num_tokens + 1, c),
    }
    block = {
        "ln1.gamma": (c,), "ln1.beta": (c,),
        "attn.qkv.weight": (c, 3 * c), "attn.qkv.bias": (3 * c,),
        "attn.proj.weight": (c, c), "attn.proj.bias": (c,),
        "ln2.gamma": (c,), "ln2.beta": (c,),
        "mlp.fc1.weight": (c, h), "mlp.fc1.bias": (h,),
        "mlp.fc2.weight": (h, c), "mlp.fc2.bias": (c,),
    }
    for i in range(config.num_layers):
        for name, _ in _BLOCK_PARAMS:
            shapes[f"blocks.{i}.{name}"] = block[name]
    for b in range(len(config.stage_boundaries)):
        shapes[f"score_heads.{b}.weight"] = (c, 1)
        shapes[f"score_heads.{b}.bias"] = (1,)
    for s in range(config.num_stages):
        shapes[f"decoder.levels.{s}.weight"] = (c, d)
        shapes[f"decoder.levels.{s}.bias"] = (d,)
    shapes["decoder.head.weight"] = (d, 1)
    shapes["decoder.head.bias"] = (1,)
    return shapes


def init_tensor(name: str, shape: Tuple[int, ...], seed: int) -> np.ndarray:
    """Seeded fallback for a tensor missing from the weight file."""
    if name.endswith("gamma"):
        return np.ones(shape)
    if name.endswith("beta") or name.endswith("bias"):
        return np.zeros(shape)
    std = SCORE_HEAD_INIT_STD if name.startswith("score_heads.") else DEFAULT_INIT_STD
    rows = shape[0]
    cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    return gaussian_init(Rng(seed).derive(name), rows, cols, std).reshape(shape)


def write_weight_file(path, tensors: Dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))
    logger.info(f"Wrote {len(tensors)} tensors to {path}")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightLoadError(f"truncated weight file while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def read_weight_file(path) -> Dict[str, np.ndarray]:
    """Parse a whole file; nothing is returned unless every tensor is intact."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC), "magic") != MAGIC:
        raise WeightLoadError(f"{path} is not a CATPW1 weight file (bad magic)")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32("tensor count")):
        try:
            name = reader.take(reader.u32("name length"), "name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightLoadError(f"tensor name is not valid UTF-8: {e}") from e
        if name in tensors:
            raise WeightLoadError(f"duplicate tensor name {name!r}")
        rank = reader.u32(f"rank of {name}")
        dims = tuple(reader.u32(f"dims of {name}") for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        payload = reader.take(4 * count, f"payload of {name}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    if reader.pos != len(reader.data):
        raise WeightLoadError(f"{len(reader.data) - reader.pos} trailing bytes after last tensor")
    return tensors


def resolve_weights(tensors: Dict[str, np.ndarray], config: EncoderConfig, seed: int) -> ModelWeights:
    shapes = canonical_shapes(config)
    for name in sorted(set(tensors) - set(shapes)):
        logger.warning(f"Ignoring unknown tensor {name!r}")
    resolved: Dict[str, np.ndarray] = {}
    missing = []
    for name, shape in shapes.items():
        if name in tensors:
            value = np.asarray(tensors[name], dtype=np.float64)
            if value.shape != shape:
                raise WeightLoadError(
                    f"tensor {name!r} has shape {value.shape}, expected {shape}")
            resolved[name] = value
        else:
            missing.append(name)
            resolved[name] = init_tensor(name, shape, seed)
    if missing:
        logger.info(f"Initialised {len(missing)} missing tensors from seed {seed}")
        logger.debug(f"Seeded tensors: {missing}")
    return _assemble(resolved, config)


def _assemble(t: Dict[str, np.ndarray], config: EncoderConfig) -> ModelWeights:
    layers = [
        LayerWeights(**{attr: t[f"blocks.{i}.{name}"] for name, attr in _BLOCK_PARAMS})
        for i in range(config.num_layers)
    ]
    encoder = EncoderWeights(
        patch_weight=t["patch_embed.weight"],
        patch_bias=t["patch_embed.bias"],
        cls_token=t["cls_token"],
        pos_embed=t["pos_embed"],
        layers=layers,
    )
    heads = [ScoringHead(weight=t[f"score_heads.{b}.weight"], bias=t[f"score_heads.{b}.bias"])
             for b in range(len(config.stage_boundaries))]
    decoder = DecoderWeights(
        level_weights=[t[f"decoder.levels.{s}.weight"] for s in range(config.num_stages)],
        level_biases=[t[f"decoder.levels.{s}.bias"] for s in range(config.num_stages)],
        head_weight=t["decoder.head.weight"],
        head_bias=t["decoder.head.bias"],
    )
    return ModelWeights(encoder=encoder, score_heads=heads, decoder=decoder)


def load_weights(path: Optional[str], config: EncoderConfig, seed: int) -> ModelWeights:
    if path is None:
        logger.info("No weight file given; using seeded initialisation")
        return resolve_weights({}, config, seed)
    try:
        tensors = read_weight_file(path)
    except Exception as e:
        logger.error(f"Failed to load weights from {path}: {str(e)}")
        raise
    logger.info(f"Loaded {len(tensors)} tensors from {path}")
    return resolve_weights(tensors, config, seed)
