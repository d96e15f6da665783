"""Gallery embedding, a persistent flat index, and exact top-k cosine search.

Search is exhaustive by design; the index file is a small header plus an
mmap-friendly float32 matrix and a JSON id/meta block:
``GIDX`` magic, u32 version, u32 dim, u32 count, count*dim little-endian
float32 rows, then UTF-8 JSON to EOF.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .core import BackgroundQuery, Embedding, ForegroundInstance
from .encoder import TowerWeights, embed_background, embed_batch

INDEX_MAGIC = b"GIDX"
INDEX_VERSION = 1


@dataclass
class GalleryIndex:
    ids: list[str]
    embeddings: np.ndarray
    meta: dict[str, dict]

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.ids):
            raise ValueError("embedding row count must match id count")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in gallery")
        norms = np.linalg.norm(self.embeddings.astype(np.float64), axis=1)
        if self.ids and not np.allclose(norms, 1.0, atol=1e-5):
            raise ValueError("index rows must be unit-norm")

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def row(self, object_id: str) -> np.ndarray:
        return self.embeddings[self.ids.index(object_id)]


@dataclass(frozen=True)
class RetrievalResult:
    ranked: list[tuple[str, float]]
    query_id: str = ""


def build_index(
    gallery: list[ForegroundInstance],
    weights: TowerWeights,
    extra_meta: dict[str, dict] | None = None,
) -> GalleryIndex:
    """Embed every instance with the foreground tower; meta keeps the category
    and the mask-tight aspect ratio (plus any caller-supplied fields)."""
    if not gallery:
        raise ValueError("gallery is empty")
    ids = [fg.id for fg in gallery]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in gallery")

    embeddings = embed_batch([fg.image for fg in gallery], weights)
    meta: dict[str, dict] = {}
    for fg in gallery:
        tight = fg.mask.tight_box()
        entry = {"category": fg.category, "aspect_ratio": tight.width / tight.height, "thumbnail_path": ""}
        if extra_meta and fg.id in extra_meta:
            entry.update(extra_meta[fg.id])
        meta[fg.id] = entry
    return GalleryIndex(ids=ids, embeddings=embeddings, meta=meta)


def rank_all(query: Embedding, index: GalleryIndex) -> list[tuple[str, float]]:
    """Full ranking by cosine similarity, ties broken by ascending id."""
    scores = index.embeddings.astype(np.float64) @ query.values.astype(np.float64)
    order = sorted(range(index.size), key=lambda i: (-scores[i], index.ids[i]))
    return [(index.ids[i], float(scores[i])) for i in order]


def query_topk(bg: BackgroundQuery, index: GalleryIndex, k: int, weights: TowerWeights) -> RetrievalResult:
    """Top-k gallery items by cosine similarity to the encoded background query."""
    if index.size == 0:
        raise ValueError("index is empty")
    if not 1 <= k <= index.size:
        raise ValueError(f"k must lie in [1, {index.size}]")
    query = embed_background(bg, weights)
    return RetrievalResult(ranked=rank_all(query, index)[:k], query_id=bg.id)


def query_topk_by_embedding(query: Embedding, index: GalleryIndex, k: int, query_id: str = "") -> RetrievalResult:
    if index.size == 0:
        raise ValueError("index is empty")
    if not 1 <= k <= index.size:
        raise ValueError(f"k must lie in [1, {index.size}]")
    return RetrievalResult(ranked=rank_all(query, index)[:k], query_id=query_id)


def save_index(index: GalleryIndex, path) -> None:
    payload = json.dumps({"ids": index.ids, "meta": index.meta}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<III", INDEX_VERSION, index.dim, index.size))
        fh.write(np.ascontiguousarray(index.embeddings, dtype="<f4").tobytes())
        fh.write(payload)


def load_index(path, expect_dim: int | None = None) -> GalleryIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != INDEX_MAGIC:
        raise ValueError("not a gallery index (bad magic)")
    version, dim, count = struct.unpack("<III", blob[4:16])
    if version != INDEX_VERSION:
        raise ValueError(f"unsupported index version {version}")
    if expect_dim is not None and dim != expect_dim:
        raise ValueError(f"index dim {dim} does not match expected {expect_dim}")
    matrix_bytes = dim * count * 4
    if len(blob) < 16 + matrix_bytes:
        raise ValueError("truncated index (matrix)")
    matrix = np.frombuffer(blob, dtype="<f4", count=dim * count, offset=16).reshape(count, dim).copy()
    try:
        tail = json.loads(blob[16 + matrix_bytes :].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError("truncated index (metadata)") from exc
    if len(tail.get("ids", [])) != count:
        raise ValueError("index id count mismatch")
    return GalleryIndex(ids=tail["ids"], embeddings=matrix, meta=tail["meta"])
