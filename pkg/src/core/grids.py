"""Image and gradient-field containers.

Vectorization is row-major. A gradient field flattens to the vertical
differences p followed by the horizontal differences q.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError


@dataclass(frozen=True)
class ImageGrid:
    """M x N grayscale image with normalized pixel values."""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2 or min(pixels.shape) < 1:
            raise ValueError(f"Image must be a non-empty 2-D array, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ValueError("Image contains non-finite pixels")
        object.__setattr__(self, "pixels", pixels)

    @property
    def M(self) -> int:
        return self.pixels.shape[0]

    @property
    def N(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def size(self) -> int:
        return self.pixels.size

    def flatten(self) -> np.ndarray:
        return self.pixels.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vec: np.ndarray, shape) -> "ImageGrid":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != shape[0] * shape[1]:
            raise DimensionMismatchError(shape[0] * shape[1], vec.size, "image")
        return cls(vec.reshape(shape))

    @classmethod
    def constant(cls, value: float, shape) -> "ImageGrid":
        return cls(np.full(shape, float(value)))


@dataclass(frozen=True)
class GradientField:
    """Pairs (p_ij, q_ij) on an M x N grid."""
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        if p.shape != q.shape or p.ndim != 2:
            raise ValueError(f"Field components must share a 2-D shape, got {p.shape} and {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("Gradient field contains non-finite entries")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def shape(self):
        return self.p.shape

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.p ** 2 + self.q ** 2)

    def cross_norm(self) -> float:
        """sum_ij sqrt(p_ij^2 + q_ij^2)."""
        return float(np.sum(self.magnitude()))

    def inner(self, other: "GradientField") -> float:
        return float(np.sum(self.p * other.p) + np.sum(self.q * other.q))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.p.reshape(-1), self.q.reshape(-1)])

    @classmethod
    def from_flat(cls, vec: np.ndarray, shape) -> "GradientField":
        vec = np.asarray(vec, dtype=np.float64)
        n = shape[0] * shape[1]
        if vec.size != 2 * n:
            raise DimensionMismatchError(2 * n, vec.size, "gradient field")
        return cls(vec[:n].reshape(shape), vec[n:].reshape(shape))
