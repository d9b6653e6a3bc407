"""Deterministic piecewise-constant test image."""

import numpy as np

from ..core.errors import ConfigError
from ..core.grids import ImageGrid


def synthetic_phantom(size: int) -> ImageGrid:
    """size x size image: a rectangle, two discs and a wedge on a dark background."""
    if size < 2:
        raise ConfigError(f"phantom size must be at least 2, got {size}")
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.full((size, size), 0.1)

    img[(rows > 0.15) & (rows < 0.45) & (cols > 0.1) & (cols < 0.55)] = 0.8
    img[(rows - 0.65) ** 2 + (cols - 0.35) ** 2 < 0.18 ** 2] = 0.5
    img[(rows - 0.3) ** 2 + (cols - 0.75) ** 2 < 0.12 ** 2] = 0.95
    img[(rows > 0.6) & (cols > 0.6) & (rows - cols > -0.15)] = 0.3
    return ImageGrid(img)


def parse_image_source(source: str):
    """Size for ``synthetic:<N>`` sources, ``None`` for file paths."""
    if not source.startswith("synthetic:"):
        return None
    try:
        return int(source.split(":", 1)[1])
    except ValueError:
        raise ConfigError(f"Invalid synthetic image source '{source}'; expected synthetic:<size>") from None
