"""Grayscale PGM codec (P2 ASCII and P5 binary, 8 or 16 bit)."""

from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..core.errors import PGMFormatError
from ..core.grids import ImageGrid
from ..utils.file_handler import FileHandler


def _header_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """First ``count`` whitespace-separated tokens, skipping # comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    tokens: List[bytes] = []
    pos = 0
    size = len(data)
    while len(tokens) < count:
        while pos < size and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= size:
            raise PGMFormatError("Truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < size and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < size and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path: Path) -> ImageGrid:
    """Read a PGM file and normalize pixels to [0, 1] by the declared maxval."""
    path = Path(path)
    if not path.exists():
        raise PGMFormatError(f"File not found: {path}")
    data = path.read_bytes()
    tokens, offset = _header_tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise PGMFormatError(f"Unsupported magic number {magic!r}; only P2 and P5 are read")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise PGMFormatError("Non-integer value in PGM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise PGMFormatError(f"Invalid PGM geometry {width}x{height} with maxval {maxval}")

    count = width * height
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[offset:offset + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise PGMFormatError(f"Expected {count} pixels, file is truncated")
        values = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    else:
        try:
            values = np.array([int(t) for t in data[offset:].split()[:count]], dtype=np.float64)
        except ValueError:
            raise PGMFormatError("Non-integer pixel in P2 data") from None
        if values.size < count:
            raise PGMFormatError(f"Expected {count} pixels, found {values.size}")
    if np.any(values > maxval):
        raise PGMFormatError(f"Pixel value exceeds maxval {maxval}")
    return ImageGrid(values.reshape(height, width) / maxval)


def encode_pgm(img: ImageGrid, maxval: int = 255, binary: bool = True) -> bytes:
    """Quantize [0, 1] pixels by rounding to nearest and encode as P5 or P2."""
    if not 0 < maxval < 65536:
        raise PGMFormatError(f"maxval must lie in 1..65535, got {maxval}")
    levels = np.rint(np.clip(img.pixels, 0.0, 1.0) * maxval).astype(np.int64)
    header = f"{'P5' if binary else 'P2'}\n{img.N} {img.M}\n{maxval}\n".encode("ascii")
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + levels.astype(dtype).tobytes()
    rows = "\n".join(" ".join(str(v) for v in row) for row in levels)
    return header + rows.encode("ascii") + b"\n"


def write_pgm(path: Path, img: ImageGrid, maxval: int = 255, binary: bool = True) -> Path:
    return FileHandler.atomic_write_bytes(Path(path), encode_pgm(img, maxval, binary))
