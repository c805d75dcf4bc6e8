"""8-bit PGM/PPM input and PGM output through Pillow."""
import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from catp.errors import ImageFormatError
from catp.refill import to_grey_levels

logger = logging.getLogger("catp_netpbm")

CHANNELS = {b"P5": 1, b"P6": 3}
MAXVAL = 255


class NetpbmHeader(NamedTuple):
    magic: bytes
    width: int
    height: int
    maxval: int
    offset: int

    @property
    def payload_size(self) -> int:
        return self.width * self.height * CHANNELS[self.magic]


def read_header(data: bytes, path="<bytes>") -> NetpbmHeader:
    """Parse the P5/P6 header: magic, width, height, maxval, then one whitespace byte."""
    magic = data[:2]
    if magic not in CHANNELS:
        raise ImageFormatError(f"{path}: expected a P5/P6 netpbm file, got magic {magic!r}")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: malformed netpbm header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: malformed netpbm header")
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: empty image {width}x{height}")
    return NetpbmHeader(magic, width, height, maxval, pos + 1)


def read_image(path) -> np.ndarray:
    """Return H x W x channels floats in [0, 1] (1 channel for P5, 3 for P6)."""
    data = Path(path).read_bytes()
    header = read_header(data, path)
    if header.maxval != MAXVAL:
        raise ImageFormatError(f"{path}: maxval {header.maxval} unsupported, expected {MAXVAL}")
    if len(data) - header.offset < header.payload_size:
        raise ImageFormatError(
            f"{path}: payload has {len(data) - header.offset} bytes, header "
            f"{header.width}x{header.height} needs {header.payload_size}")
    try:
        with Image.open(path) as img:
            img.load()
            pixels = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as e:
        raise ImageFormatError(f"{path}: {e}") from e
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    logger.debug(f"Read {path}: {pixels.shape}")
    return pixels.astype(np.float64) / 255.0


def write_pgm(path, values: np.ndarray) -> None:
    """Write a [0, 1] field as P5 with maxval 255, floor(255 v + 0.5) per pixel."""
    Image.fromarray(to_grey_levels(np.asarray(values)), mode="L").save(path, format="PPM")


def write_ppm(path, values: np.ndarray) -> None:
    Image.fromarray(to_grey_levels(np.asarray(values)), mode="RGB").save(path, format="PPM")
