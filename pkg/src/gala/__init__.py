"""Compositing-aware foreground object search.

Two image towers embed background queries (images with a mean-filled hole) and
foreground cutouts (white-padded squares) into one cosine space; training uses
in-batch triplets plus self-transformed negatives with an alternating
schedule, and the same embeddings drive retrieval, automatic placement, and
the HTTP service.
"""

from .core import (
    BackgroundQuery,
    BoundingBox,
    Embedding,
    ForegroundInstance,
    ImageTensor,
    SegMask,
    cosine_similarity,
    l2_normalize,
    sensitivity_distance,
)

__version__ = "0.1.0"

__all__ = [
    "BackgroundQuery",
    "BoundingBox",
    "Embedding",
    "ForegroundInstance",
    "ImageTensor",
    "SegMask",
    "cosine_similarity",
    "l2_normalize",
    "sensitivity_distance",
    "__version__",
]
