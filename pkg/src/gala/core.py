"""Shared domain types and the similarity primitives everything else builds on.

Conventions used across the package:

* Images are float32 RGB arrays of shape (H, W, 3) with values in [0, 1].
  File loaders convert at the boundary; nothing downstream deals in uint8.
* Masks are binary uint8 arrays of shape (H, W) with values in {0, 1}.
* Boxes are (left, top, width, height) in integer pixels of the stored image.
* Embeddings are unit-norm float32 vectors; similarity is the cosine, and the
  "sensitivity" distance between unit vectors is d = 2 - 2s (the squared
  euclidean distance).

All types are immutable after construction (backing arrays are marked
read-only), so instances are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ImageTensor",
    "SegMask",
    "BoundingBox",
    "ForegroundInstance",
    "BackgroundQuery",
    "Embedding",
    "l2_normalize",
    "cosine_similarity",
    "sensitivity_distance",
]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """An RGB image: (H, W, 3) float32 in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must have height >= 1 and width >= 1")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


@dataclass(frozen=True)
class SegMask:
    """A binary segmentation mask: (H, W) uint8 in {0, 1}."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {data.shape}")
        data = (data != 0).astype(np.uint8)
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def area(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return not bool(self.data.any())

    def tight_box(self) -> "BoundingBox":
        """Tight bounding rectangle of the foreground pixels."""
        if self.is_empty():
            raise ValueError("empty instance")
        rows = np.flatnonzero(self.data.any(axis=1))
        cols = np.flatnonzero(self.data.any(axis=0))
        top, bottom = int(rows[0]), int(rows[-1])
        left, right = int(cols[0]), int(cols[-1])
        return BoundingBox(left, top, right - left + 1, bottom - top + 1)


@dataclass(frozen=True)
class BoundingBox:
    """(left, top, width, height) in integer pixels."""

    left: int
    top: int
    width: int
    height: int

    def __post_init__(self):
        for name in ("left", "top", "width", "height"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"box must have positive size, got {self}")

    @property
    def right(self) -> int:
        return self.left + self.width

    @property
    def bottom(self) -> int:
        return self.top + self.height

    def area(self) -> int:
        return self.width * self.height

    def aspect_ratio(self) -> float:
        return self.width / self.height

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.left and 0 <= self.top and self.right <= width and self.bottom <= height

    def clamped(self, width: int, height: int) -> "BoundingBox":
        """Translate the box (size preserved) so it lies inside a width x height image."""
        if self.width > width or self.height > height:
            raise ValueError(f"box {self} larger than {width}x{height} image")
        left = min(max(self.left, 0), width - self.width)
        top = min(max(self.top, 0), height - self.height)
        return BoundingBox(left, top, self.width, self.height)

    def as_list(self) -> list[int]:
        return [self.left, self.top, self.width, self.height]


@dataclass(frozen=True)
class ForegroundInstance:
    """A segmented object cutout on a white background, padded square.

    ``image`` and ``mask`` have identical (square) spatial size; pixels outside
    the mask are white.
    """

    id: str
    image: ImageTensor
    mask: SegMask
    category: str = ""
    source_image_id: str = ""

    def __post_init__(self):
        if self.image.height != self.image.width:
            raise ValueError("foreground image must be square")
        if (self.mask.height, self.mask.width) != (self.image.height, self.image.width):
            raise ValueError("mask and image sizes differ")
        if self.mask.is_empty():
            raise ValueError("empty instance")

    @property
    def side(self) -> int:
        return self.image.height


@dataclass(frozen=True)
class BackgroundQuery:
    """A background image with an optional query box (None marks a non-box query)."""

    id: str
    image: ImageTensor
    box: BoundingBox | None = None
    source_image_id: str = ""

    def __post_init__(self):
        if self.box is not None:
            if not self.box.inside(self.image.width, self.image.height):
                raise ValueError(f"box {self.box} outside {self.image.width}x{self.image.height} image")
            frac = self.box.area() / (self.image.width * self.image.height)
            if not 0.0 < frac <= 1.0:
                raise ValueError("box area fraction must lie in (0, 1]")


@dataclass(frozen=True)
class Embedding:
    """A unit-norm feature vector."""

    values: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if values.size == 0:
            raise ValueError("embedding must be non-empty")
        norm = float(np.linalg.norm(values))
        if abs(norm - 1.0) > 1e-5:
            raise ValueError(f"embedding norm {norm} not within 1e-5 of 1")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "dim", int(values.size))


def l2_normalize(v: np.ndarray) -> Embedding:
    """Scale a vector to unit L2 norm, preserving direction.

    Raises ValueError("degenerate embedding") on a zero vector.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("degenerate embedding")
    return Embedding((v / norm).astype(np.float32))


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Dot product of two unit-norm embeddings, clipped to [-1, 1]."""
    if a.dim != b.dim:
        raise ValueError(f"embedding dims differ: {a.dim} vs {b.dim}")
    s = float(np.dot(a.values.astype(np.float64), b.values.astype(np.float64)))
    return min(1.0, max(-1.0, s))


def sensitivity_distance(a: Embedding, b: Embedding) -> float:
    """Squared euclidean distance between unit embeddings: d = 2 - 2s, in [0, 4]."""
    return 2.0 - 2.0 * cosine_similarity(a, b)
