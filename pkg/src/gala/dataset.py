"""Corpus ingestion: turn images + instance masks into (background, foreground) pairs.

A corpus is a directory with a ``corpus.jsonl`` file listing one record per
image; each record names an image file and its instances (mask image or
polygon, category, detector confidence). Ingestion filters instances, extracts
pairs, writes the pair images to disk, and emits a line-delimited manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import BackgroundQuery, BoundingBox, ForegroundInstance, ImageTensor, SegMask
from . import imops

MANIFEST_KEYS = ("pair_id", "bg_path", "fg_path", "mask_path", "box", "category", "split")


@dataclass(frozen=True)
class InstanceAnnotation:
    """One object in a corpus image: a mask (file or polygon) + category + confidence."""

    category: str
    confidence: float
    mask_path: str | None = None
    polygon: list | None = None

    def __post_init__(self):
        if (self.mask_path is None) == (self.polygon is None):
            raise ValueError("instance needs exactly one of mask_path or polygon")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    def decode_mask(self, height: int, width: int) -> SegMask:
        if self.mask_path is not None:
            data = imops.load_mask(self.mask_path)
            if data.shape != (height, width):
                raise ValueError(f"mask {self.mask_path} is {data.shape}, image is {(height, width)}")
        else:
            data = imops.rasterize_polygon(self.polygon, height, width)
        return SegMask(data)


@dataclass(frozen=True)
class CorpusRecord:
    image_id: str
    image_path: str
    instances: tuple[InstanceAnnotation, ...]


@dataclass(frozen=True)
class PairRecord:
    """A materialized training pair; background and foreground share a source image."""

    pair_id: str
    background: BackgroundQuery
    foreground: ForegroundInstance
    split: str = "train"

    def __post_init__(self):
        if self.background.source_image_id != self.foreground.source_image_id:
            raise ValueError("pair crosses source images")
        if self.split not in ("train", "eval"):
            raise ValueError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class ManifestEntry:
    """One manifest line: file paths + box + labels for a stored pair."""

    pair_id: str
    bg_path: str
    fg_path: str
    mask_path: str
    box: BoundingBox
    category: str = ""
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps(
            {
                "pair_id": self.pair_id,
                "bg_path": self.bg_path,
                "fg_path": self.fg_path,
                "mask_path": self.mask_path,
                "box": self.box.as_list(),
                "category": self.category,
                "split": self.split,
            }
        )

    @staticmethod
    def from_json(line: str) -> "ManifestEntry":
        obj = json.loads(line)
        missing = [k for k in MANIFEST_KEYS if k not in obj]
        if missing:
            raise ValueError(f"manifest line missing keys {missing}")
        l, t, w, h = obj["box"]
        return ManifestEntry(
            pair_id=obj["pair_id"],
            bg_path=obj["bg_path"],
            fg_path=obj["fg_path"],
            mask_path=obj["mask_path"],
            box=BoundingBox(l, t, w, h),
            category=obj["category"],
            split=obj["split"],
        )


@dataclass
class DatasetManifest:
    version: int = 1
    records: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.pair_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate pair_ids in manifest")

    @property
    def stats(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.category] = counts.get(r.category, 0) + 1
        return counts

    def split_records(self, split: str) -> list[ManifestEntry]:
        return [r for r in self.records if r.split == split]


def extract_pair(
    image: ImageTensor,
    mask: SegMask,
    pair_id: str = "",
    source_image_id: str = "",
    category: str = "",
) -> tuple[BackgroundQuery, ForegroundInstance]:
    """Split one annotated object into a (background query, foreground instance) pair.

    The foreground is the mask-tight crop with non-object pixels set to white,
    then white-padded to a centered square. The background is the original
    image with the tight rectangle filled by the per-channel mean of the whole
    image; the query box equals the fill rectangle.
    """
    if mask.is_empty():
        raise ValueError("empty instance")
    if (mask.height, mask.width) != (image.height, image.width):
        raise ValueError("mask and image sizes differ")

    box = mask.tight_box()
    crop = image.data[box.top : box.bottom, box.left : box.right].copy()
    mcrop = mask.data[box.top : box.bottom, box.left : box.right]
    crop[mcrop == 0] = imops.WHITE

    side = max(box.width, box.height)
    fg_img = np.full((side, side, 3), imops.WHITE, dtype=np.float32)
    fg_mask = np.zeros((side, side), dtype=np.uint8)
    oy = (side - box.height) // 2
    ox = (side - box.width) // 2
    fg_img[oy : oy + box.height, ox : ox + box.width] = crop
    fg_mask[oy : oy + box.height, ox : ox + box.width] = mcrop

    fill = image.data.reshape(-1, 3).mean(axis=0)
    bg_img = image.data.copy()
    bg_img[box.top : box.bottom, box.left : box.right] = fill

    background = BackgroundQuery(
        id=pair_id or source_image_id,
        image=ImageTensor(bg_img),
        box=box,
        source_image_id=source_image_id,
    )
    foreground = ForegroundInstance(
        id=pair_id or source_image_id,
        image=ImageTensor(fg_img),
        mask=SegMask(fg_mask),
        category=category,
        source_image_id=source_image_id,
    )
    return background, foreground


def filter_corpus(
    records: list[CorpusRecord],
    min_conf: float = 0.6,
    area_range: tuple[float, float] = (0.05, 0.50),
) -> list[CorpusRecord]:
    """Keep instances with confidence > min_conf and mask-tight box area fraction
    inside [area_lo, area_hi]. Records losing all instances are dropped."""
    area_lo, area_hi = area_range
    if not 0.0 <= min_conf <= 1.0:
        raise ValueError("min_conf must lie in [0, 1]")
    if not 0.0 < area_lo < area_hi <= 1.0:
        raise ValueError("need 0 < area_lo < area_hi <= 1")

    kept: list[CorpusRecord] = []
    for record in records:
        from PIL import Image

        with Image.open(record.image_path) as im:
            width, height = im.size
        survivors = []
        for inst in record.instances:
            if inst.confidence <= min_conf:
                continue
            mask = inst.decode_mask(height, width)
            if mask.is_empty():
                continue
            frac = mask.tight_box().area() / (width * height)
            if area_lo <= frac <= area_hi:
                survivors.append(inst)
        if survivors:
            kept.append(replace(record, instances=tuple(survivors)))
    return kept


def split_dataset(manifest: DatasetManifest, train_fraction: float, seed: int) -> DatasetManifest:
    """Assign train/eval splits by a seeded shuffle; |train| = round(fraction * total)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(manifest.records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(train_fraction * n + 0.5))
    train_idx = set(order[:n_train].tolist())
    records = [
        replace(r, split="train" if i in train_idx else "eval") for i, r in enumerate(manifest.records)
    ]
    return DatasetManifest(version=manifest.version, records=records)


def preprocess(image, target: int, mean: tuple[float, float, float] = (0.5, 0.5, 0.5)) -> np.ndarray:
    """Bilinear-resize to target x target and subtract the per-channel mean.

    Returns a raw float32 array (values are centered, no longer in [0, 1]).
    """
    data = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float32)
    out = imops.resize_bilinear(data, target, target)
    return out - np.asarray(mean, dtype=np.float32)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in manifest.records:
            fh.write(record.to_json() + "\n")


def load_manifest(path) -> DatasetManifest:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ManifestEntry.from_json(line))
    return DatasetManifest(records=records)


def load_corpus(corpus_dir) -> list[CorpusRecord]:
    """Read corpus.jsonl, resolving paths relative to the corpus directory."""
    corpus_dir = Path(corpus_dir)
    listing = corpus_dir / "corpus.jsonl"
    records: list[CorpusRecord] = []
    with open(listing, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            instances = tuple(
                InstanceAnnotation(
                    category=inst.get("category", ""),
                    confidence=float(inst.get("confidence", 1.0)),
                    mask_path=str(corpus_dir / inst["mask_path"]) if "mask_path" in inst else None,
                    polygon=inst.get("polygon"),
                )
                for inst in obj["instances"]
            )
            records.append(
                CorpusRecord(
                    image_id=obj["image_id"],
                    image_path=str(corpus_dir / obj["image_path"]),
                    instances=instances,
                )
            )
    return records


def load_pair(entry: ManifestEntry, root) -> PairRecord:
    """Materialize a manifest entry from disk."""
    root = Path(root)
    bg_img = ImageTensor(imops.load_image(root / entry.bg_path))
    fg_img = ImageTensor(imops.load_image(root / entry.fg_path))
    fg_mask = SegMask(imops.load_mask(root / entry.mask_path))
    background = BackgroundQuery(
        id=entry.pair_id, image=bg_img, box=entry.box, source_image_id=entry.pair_id.split("#")[0]
    )
    foreground = ForegroundInstance(
        id=entry.pair_id,
        image=fg_img,
        mask=fg_mask,
        category=entry.category,
        source_image_id=entry.pair_id.split("#")[0],
    )
    return PairRecord(pair_id=entry.pair_id, background=background, foreground=foreground, split=entry.split)


def load_pairs(manifest: DatasetManifest, root, split: str | None = None) -> list[PairRecord]:
    entries = manifest.records if split is None else manifest.split_records(split)
    return [load_pair(e, root) for e in entries]


def ingest_corpus(
    corpus_dir,
    out_manifest,
    min_conf: float = 0.6,
    area_range: tuple[float, float] = (0.05, 0.50),
    train_fraction: float = 0.9,
    seed: int = 0,
) -> DatasetManifest:
    """Full ingestion: filter the corpus, extract pairs, write images + manifest.

    Pair images land in a ``pairs/`` directory next to the manifest; manifest
    paths are relative to the manifest's directory. Foregrounds and masks are
    stored as PNG to preserve exact white padding.
    """
    out_manifest = Path(out_manifest)
    root = out_manifest.parent
    pair_dir = root / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)

    records = filter_corpus(load_corpus(corpus_dir), min_conf=min_conf, area_range=area_range)
    entries: list[ManifestEntry] = []
    for record in records:
        image = ImageTensor(imops.load_image(record.image_path))
        for k, inst in enumerate(record.instances):
            pair_id = f"{record.image_id}#{k}"
            mask = inst.decode_mask(image.height, image.width)
            background, foreground = extract_pair(
                image, mask, pair_id=pair_id, source_image_id=record.image_id, category=inst.category
            )
            stem = pair_id.replace("#", "_")
            bg_path = f"pairs/{stem}_bg.png"
            fg_path = f"pairs/{stem}_fg.png"
            mask_path = f"pairs/{stem}_mask.png"
            imops.save_image(root / bg_path, background.image.data)
            imops.save_image(root / fg_path, foreground.image.data)
            imops.save_mask(root / mask_path, foreground.mask.data)
            entries.append(
                ManifestEntry(
                    pair_id=pair_id,
                    bg_path=bg_path,
                    fg_path=fg_path,
                    mask_path=mask_path,
                    box=background.box,
                    category=inst.category,
                )
            )

    manifest = split_dataset(DatasetManifest(records=entries), train_fraction, seed)
    save_manifest(manifest, out_manifest)
    return manifest
