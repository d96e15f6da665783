"""Non-box pipeline: pick a default object by random-seed search, locate it by
sliding-window grid scoring, and size it by a geometric scale sweep.

Every candidate box is scored the same way: fill the box with the image's
per-channel mean (the same hole convention used at training time), encode with
the background tower, and take the cosine against the foreground embedding.
Grid cell centers span exactly the positions that keep the window inside the
image, so the heatmap covers the feasible placements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, Embedding, ForegroundInstance, ImageTensor
from .encoder import TowerWeights, embed_batch
from .retrieval import GalleryIndex
from .training import TowerPair
from . import imops


@dataclass(frozen=True)
class PlacementConfig:
    n_seeds: int = 10
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    seed_scales: tuple[float, ...] = (1 / 50, 1 / 25, 1 / 10)
    grid_k: int = 10
    init_area_fraction: float = 1 / 25
    scale_ratio: float = 1.2
    scale_count: int = 9
    scale_center: int = 4

    def __post_init__(self):
        if self.grid_k < 2:
            raise ValueError("grid_k must be >= 2")
        for frac in (self.init_area_fraction, *self.seed_scales):
            if not 0.0 < frac < 1.0:
                raise ValueError("area fractions must lie in (0, 1)")

    def scales(self) -> list[float]:
        return [self.scale_ratio ** (k - self.scale_center) for k in range(self.scale_count)]


@dataclass(frozen=True)
class PlacementResult:
    object_id: str
    box: BoundingBox
    heatmap: np.ndarray
    grid_scores: np.ndarray
    scale_scores: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class GridResult:
    grid_scores: np.ndarray
    heatmap: np.ndarray
    best_cell: tuple[int, int]
    boxes: list[BoundingBox] = field(repr=False, default_factory=list)
    degenerate: bool = False


@dataclass(frozen=True)
class ScaleResult:
    box: BoundingBox
    scores: np.ndarray
    scale: float
    index: int


class EmbeddingBoxScorer:
    """Scores candidate boxes: mean-fill the box, encode, cosine with the target."""

    def __init__(self, background_weights: TowerWeights, fg_embedding: np.ndarray | Embedding):
        self.weights = background_weights
        values = fg_embedding.values if isinstance(fg_embedding, Embedding) else np.asarray(fg_embedding)
        self.target = values.astype(np.float64)

    def masked_images(self, image: ImageTensor, boxes: list[BoundingBox]) -> list[np.ndarray]:
        fill = image.data.reshape(-1, 3).mean(axis=0)
        out = []
        for box in boxes:
            arr = image.data.copy()
            arr[box.top : box.bottom, box.left : box.right] = fill
            out.append(arr)
        return out

    def score_many(self, image: ImageTensor, boxes: list[BoundingBox]) -> np.ndarray:
        embs = embed_batch(self.masked_images(image, boxes), self.weights)
        return embs.astype(np.float64) @ self.target


def window_dims(image_w: int, image_h: int, aspect: float, area_fraction: float) -> tuple[int, int]:
    """Integer (w, h) with w/h = aspect and area ~= area_fraction of the image."""
    area = area_fraction * image_w * image_h
    w = max(1, int(round(math.sqrt(area * aspect))))
    h = max(1, int(round(math.sqrt(area / aspect))))
    if w > image_w or h > image_h:
        raise ValueError(f"window {w}x{h} larger than {image_w}x{image_h} image")
    return w, h


def _grid_boxes(image_w: int, image_h: int, win_w: int, win_h: int, k: int) -> list[BoundingBox]:
    """k x k window positions (row-major) whose centers uniformly span the
    feasible center range."""
    if win_w > image_w or win_h > image_h:
        raise ValueError(f"window {win_w}x{win_h} larger than {image_w}x{image_h} image")
    lefts = np.round(np.linspace(0, image_w - win_w, k)).astype(int)
    tops = np.round(np.linspace(0, image_h - win_h, k)).astype(int)
    return [BoundingBox(int(l), int(t), win_w, win_h) for t in tops for l in lefts]


def grid_scores_for_window(
    image: ImageTensor, window: tuple[int, int], scorer, k: int
) -> tuple[np.ndarray, list[BoundingBox]]:
    win_w, win_h = window
    boxes = _grid_boxes(image.width, image.height, win_w, win_h, k)
    scores = np.asarray(scorer.score_many(image, boxes), dtype=np.float64).reshape(k, k)
    return scores, boxes


def grid_heatmap(
    bg_image: ImageTensor,
    fg: ForegroundInstance | None,
    weights: TowerPair | None,
    cfg: PlacementConfig,
    window_size: tuple[int, int] | None = None,
    scorer=None,
) -> GridResult:
    """Score a k x k sliding-window grid and upsample it to an image-size heatmap.

    The window keeps the foreground's aspect ratio at the configured initial
    area unless ``window_size`` pins it (the fixed-scale evaluation mode).
    The best cell is the argmax; exact ties go to the smallest row-major index.
    """
    if scorer is None:
        if fg is None or weights is None:
            raise ValueError("need either a scorer or (fg, weights)")
        fg_emb = embed_batch([fg.image], weights.foreground)[0]
        scorer = EmbeddingBoxScorer(weights.background, fg_emb)
    if window_size is None:
        if fg is None:
            raise ValueError("need fg to derive the window aspect ratio")
        tight = fg.mask.tight_box()
        window_size = window_dims(bg_image.width, bg_image.height, tight.width / tight.height, cfg.init_area_fraction)

    grid, boxes = grid_scores_for_window(bg_image, window_size, scorer, cfg.grid_k)
    flat_best = int(np.argmax(grid))
    best_cell = (flat_best // cfg.grid_k, flat_best % cfg.grid_k)

    lo, hi = float(grid.min()), float(grid.max())
    degenerate = hi == lo
    normalized = np.ones_like(grid) if degenerate else (grid - lo) / (hi - lo)
    heatmap = imops.upsample_align_corners(normalized, bg_image.height, bg_image.width)
    return GridResult(grid_scores=grid, heatmap=heatmap, best_cell=best_cell, boxes=boxes, degenerate=degenerate)


def seed_select(
    bg_image: ImageTensor,
    index: GalleryIndex,
    weights: TowerPair,
    cfg: PlacementConfig,
    seed: int = 0,
) -> str:
    """Pick the default object: random box proposals, each queried against the
    gallery; the globally best cosine wins (ties: earlier box, then lower id)."""
    if index.size == 0:
        raise ValueError("index is empty")
    rng = np.random.default_rng(seed)
    w, h = bg_image.width, bg_image.height

    boxes: list[BoundingBox] = []
    for _ in range(cfg.n_seeds):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        for aspect in cfg.aspect_ratios:
            for frac in cfg.seed_scales:
                try:
                    bw, bh = window_dims(w, h, aspect, frac)
                except ValueError:
                    continue
                box = BoundingBox(int(round(cx - bw / 2)), int(round(cy - bh / 2)), bw, bh).clamped(w, h)
                boxes.append(box)
    if not boxes:
        raise ValueError("no valid candidate boxes")

    fill = bg_image.data.reshape(-1, 3).mean(axis=0)
    masked = []
    for box in boxes:
        arr = bg_image.data.copy()
        arr[box.top : box.bottom, box.left : box.right] = fill
        masked.append(arr)
    embs = embed_batch(masked, weights.background).astype(np.float64)
    scores = embs @ index.embeddings.astype(np.float64).T  # (boxes, gallery)

    best = float(scores.max())
    box_i, gal_j = np.nonzero(scores == best)
    candidates = sorted(zip(box_i.tolist(), [index.ids[j] for j in gal_j.tolist()]))
    return candidates[0][1]


def scale_select(
    bg_image: ImageTensor,
    fg: ForegroundInstance | None,
    center: tuple[float, float],
    weights: TowerPair | None,
    cfg: PlacementConfig,
    scorer=None,
    init_window: tuple[int, int] | None = None,
) -> ScaleResult:
    """Score the geometric scale sweep at a fixed center; ties pick the smaller scale."""
    if scorer is None:
        if fg is None or weights is None:
            raise ValueError("need either a scorer or (fg, weights)")
        fg_emb = embed_batch([fg.image], weights.foreground)[0]
        scorer = EmbeddingBoxScorer(weights.background, fg_emb)
    if init_window is None:
        if fg is None:
            raise ValueError("need fg to derive the window aspect ratio")
        tight = fg.mask.tight_box()
        init_window = window_dims(bg_image.width, bg_image.height, tight.width / tight.height, cfg.init_area_fraction)

    base_w, base_h = init_window
    cx, cy = center
    scales = cfg.scales()
    boxes: list[BoundingBox | None] = []
    for scale in scales:
        bw = max(1, int(round(base_w * scale)))
        bh = max(1, int(round(base_h * scale)))
        if bw > bg_image.width or bh > bg_image.height:
            boxes.append(None)
            continue
        box = BoundingBox(int(round(cx - bw / 2)), int(round(cy - bh / 2)), bw, bh)
        boxes.append(box.clamped(bg_image.width, bg_image.height))

    valid = [b for b in boxes if b is not None]
    if not valid:
        raise ValueError("all scaled boxes fall outside the image")
    raw = scorer.score_many(bg_image, valid)
    scores = np.full(len(scales), -np.inf)
    scores[[i for i, b in enumerate(boxes) if b is not None]] = raw
    best = int(np.argmax(scores))  # first max = smallest scale on ties
    return ScaleResult(box=boxes[best], scores=scores, scale=scales[best], index=best)


def refine_location(
    bg_image: ImageTensor,
    fg: ForegroundInstance | None,
    best_cell: tuple[int, int],
    weights: TowerPair | None,
    cfg: PlacementConfig,
    scorer=None,
    window_size: tuple[int, int] | None = None,
) -> tuple[tuple[float, float], float]:
    """Second pass around the winning cell at stride / grid_k resolution.

    Returns (center, score); the input cell center is always a candidate, so
    the refined score never drops below the coarse one.
    """
    if scorer is None:
        if fg is None or weights is None:
            raise ValueError("need either a scorer or (fg, weights)")
        fg_emb = embed_batch([fg.image], weights.foreground)[0]
        scorer = EmbeddingBoxScorer(weights.background, fg_emb)
    if window_size is None:
        if fg is None:
            raise ValueError("need fg to derive the window aspect ratio")
        tight = fg.mask.tight_box()
        window_size = window_dims(bg_image.width, bg_image.height, tight.width / tight.height, cfg.init_area_fraction)

    win_w, win_h = window_size
    k = cfg.grid_k
    stride_x = (bg_image.width - win_w) / (k - 1)
    stride_y = (bg_image.height - win_h) / (k - 1)
    row, col = best_cell
    cx = win_w / 2 + col * stride_x
    cy = win_h / 2 + row * stride_y

    def center_range(c, stride, half_win, limit):
        if stride <= 0:
            return [c]
        fine = stride / k
        lo, hi = c - stride, c + stride
        values = np.arange(lo, hi + fine / 2, fine)
        return np.clip(values, half_win, limit - half_win).tolist()

    xs = center_range(cx, stride_x, win_w / 2, bg_image.width)
    ys = center_range(cy, stride_y, win_h / 2, bg_image.height)
    centers = [(cx, cy)] + [(x, y) for y in ys for x in xs if (x, y) != (cx, cy)]

    boxes = [
        BoundingBox(int(round(x - win_w / 2)), int(round(y - win_h / 2)), win_w, win_h).clamped(
            bg_image.width, bg_image.height
        )
        for x, y in centers
    ]
    scores = np.asarray(scorer.score_many(bg_image, boxes), dtype=np.float64)
    best = int(np.argmax(scores))  # index 0 is the input center: ties keep it
    return centers[best], float(scores[best])


def place_auto(
    bg_image: ImageTensor,
    index: GalleryIndex,
    weights: TowerPair,
    cfg: PlacementConfig,
    seed: int = 0,
    refine: bool = False,
) -> PlacementResult:
    """Full non-box pipeline: object choice, location heatmap, scale sweep."""
    object_id = seed_select(bg_image, index, weights, cfg, seed=seed)
    fg_emb = index.row(object_id)
    scorer = EmbeddingBoxScorer(weights.background, fg_emb)
    aspect = float(index.meta[object_id].get("aspect_ratio", 1.0))
    window = window_dims(bg_image.width, bg_image.height, aspect, cfg.init_area_fraction)

    grid = grid_heatmap(bg_image, None, None, cfg, window_size=window, scorer=scorer)
    row, col = grid.best_cell
    stride_x = (bg_image.width - window[0]) / (cfg.grid_k - 1)
    stride_y = (bg_image.height - window[1]) / (cfg.grid_k - 1)
    center = (window[0] / 2 + col * stride_x, window[1] / 2 + row * stride_y)
    if refine:
        center, _ = refine_location(bg_image, None, grid.best_cell, None, cfg, scorer=scorer, window_size=window)

    result = scale_select(bg_image, None, center, None, cfg, scorer=scorer, init_window=window)
    return PlacementResult(
        object_id=object_id,
        box=result.box,
        heatmap=grid.heatmap,
        grid_scores=grid.grid_scores,
        scale_scores=result.scores,
        degenerate=grid.degenerate,
    )
