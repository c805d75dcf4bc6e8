"""Dense float64 kernels and the seeded SplitMix64 generator.

Every tensor in the pipeline is a numpy float64 array. The kernels here are
thin wrappers that validate shapes, keep results finite and fix the exact
formulas used everywhere else, so tests can compare against closed forms.
"""
import hashlib
import logging

import numpy as np

from catp.errors import InvalidArgumentError, InvariantError

logger = logging.getLogger("catp_numerics")

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
LAYER_NORM_EPS = 1e-6
DEFAULT_INIT_STD = 0.02

# tanh-approximate GELU: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))
_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715

_P_MIN = np.nextafter(0.0, 1.0)
_P_MAX = np.nextafter(1.0, 0.0)


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array or fail with an invalid-argument error."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def require_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        logger.error(f"Non-finite values produced by {what}")
        raise InvariantError(f"{what} produced non-finite values")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(
            f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return require_finite(a @ b, "matmul")


def layer_norm(x, gamma, beta, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    x = as_matrix(x, "x")
    gamma = np.asarray(gamma, dtype=np.float64).reshape(-1)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise InvalidArgumentError(
            f"layer_norm expects gamma/beta of length {x.shape[1]}, "
            f"got {gamma.shape[0]}/{beta.shape[0]}")
    if eps <= 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    out = centered / np.sqrt(var + eps) * gamma + beta
    return require_finite(out, "layer_norm")


def softmax_rows(x) -> np.ndarray:
    x = as_matrix(x, "x")
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid_temp(x, tau: float) -> np.ndarray:
    """Temperature-scaled logistic, clamped to the open interval (0, 1)."""
    if not tau > 0:
        raise InvalidArgumentError(f"tau must be positive, got {tau}")
    z = np.asarray(x, dtype=np.float64) / tau
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, _P_MIN, _P_MAX)


def gelu(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_K * x ** 3)))


def name_digest(name: str) -> int:
    """Stable 64-bit digest of a tensor name, used to derive per-tensor seeds."""
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


class Rng:
    """SplitMix64 stream. Single owner; every draw advances the state."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def derive(self, label: str) -> "Rng":
        """Independent stream keyed by a label, without advancing this one."""
        return Rng(self.state ^ name_digest(label))

    def next_u64(self) -> int:
        return int(self.u64_block(1)[0])

    def u64_block(self, n: int) -> np.ndarray:
        if n < 0:
            raise InvalidArgumentError(f"cannot draw {n} values")
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
        z = steps + np.uint64(self.state)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1) from the top 53 bits of each draw."""
        bits = self.u64_block(n) >> np.uint64(11)
        return bits.astype(np.float64) * (1.0 / (1 << 53))

    def normal(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller, both outputs of each pair used."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]


def gaussian_init(rng: Rng, rows: int, cols: int, std: float = DEFAULT_INIT_STD) -> np.ndarray:
    if std < 0:
        raise InvalidArgumentError(f"std must be non-negative, got {std}")
    if rows < 0 or cols < 0:
        raise InvalidArgumentError(f"invalid shape {rows}x{cols}")
    values = rng.normal(rows * cols).reshape(rows, cols)
    if std == 0:
        return np.zeros((rows, cols), dtype=np.float64)
    return values * std
