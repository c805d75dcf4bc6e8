"""Seeded synthetic inputs: centred disks on textured backgrounds."""
import numpy as np

from catp.numerics import Rng


def disk_mask(height: int, width: int, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    return ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius ** 2


def disk_image(height: int, width: int, rng: Rng, channels: int = 3,
               radius: float = None, contrast: float = 0.6, noise: float = 0.05) -> np.ndarray:
    """High-contrast centred disk plus uniform noise, values clipped to [0, 1]."""
    radius = radius if radius is not None else min(height, width) / 3.0
    inside = disk_mask(height, width, radius)
    base = np.where(inside, 0.5 + contrast / 2.0, 0.5 - contrast / 2.0)
    jitter = (rng.uniform(height * width * channels).reshape(height, width, channels) - 0.5) * 2 * noise
    return np.clip(base[:, :, None] + jitter, 0.0, 1.0)


def random_image(height: int, width: int, rng: Rng, channels: int = 3) -> np.ndarray:
    return rng.uniform(height * width * channels).reshape(height, width, channels)
