"""Retrieval and placement metrics: AP / mAP / mAP-n, Recall@k, the
transform-sensitivity protocol, normalized similarity for location heatmaps,
and box IOU.

Ranking ties are broken by ascending id everywhere except the sensitivity
ranking, where the original is inserted at a seeded-random position among its
transformed copies so that exact ties resolve uniformly instead of favoring a
fixed rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox
from .dataset import PairRecord
from .encoder import embed_background, embed_batch
from .retrieval import GalleryIndex, RetrievalResult, build_index, query_topk
from .training import TowerPair
from . import transforms

NS_THRESHOLDS = (0.99, 0.95, 0.90)
IOU_THRESHOLDS = (0.90, 0.75, 0.50)


def average_precision(ranked: list[str], relevant: set[str]) -> float:
    """Mean of precision-at-rank over the relevant items, over the full ranking."""
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranked, start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def map_at_n(
    results: list[RetrievalResult],
    judgments: dict[str, set[str]],
    n: int | None = None,
) -> float:
    """Mean AP with rankings truncated to the top n (n=None means no truncation).

    The AP denominator stays the full relevant count, so the value is monotone
    non-decreasing in n. Queries with empty judgments are skipped.
    """
    values = []
    for result in results:
        relevant = judgments.get(result.query_id, set())
        if not relevant:
            continue
        ranked = [item for item, _ in result.ranked]
        if n is not None and not math.isinf(n):
            ranked = ranked[: int(n)]
        values.append(average_precision(ranked, relevant))
    return float(np.mean(values)) if values else 0.0


def map_report(
    results: list[RetrievalResult],
    judgments: dict[str, set[str]],
    n: int | None = None,
    categories: dict[str, str] | None = None,
) -> dict:
    """Overall mAP plus per-category means when query categories are known."""
    overall = map_at_n(results, judgments, n)
    per_category: dict[str, float] = {}
    if categories:
        groups: dict[str, list[RetrievalResult]] = {}
        for result in results:
            groups.setdefault(categories.get(result.query_id, ""), []).append(result)
        per_category = {cat: map_at_n(group, judgments, n) for cat, group in sorted(groups.items())}
    return {"overall": overall, "per_category": per_category}


def recall_at_k(results: list[RetrievalResult], ground_truth: dict[str, str], k: int) -> float:
    """Fraction of queries whose single ground-truth item ranks <= k."""
    hits = 0
    total = 0
    for result in results:
        gt = ground_truth.get(result.query_id)
        if gt is None:
            continue
        total += 1
        top = [item for item, _ in result.ranked[:k]]
        if gt in top:
            hits += 1
    return hits / total if total else 0.0


def k_for_percent(gallery_size: int, percent: float = 1.0) -> int:
    return max(1, math.ceil(percent / 100.0 * gallery_size))


@dataclass(frozen=True)
class SensitivityReport:
    kind: str
    mean_sensitivity: float
    recall_at: dict[int, float]
    degenerate: bool = False


def sensitivity_eval(
    pairs: list[PairRecord],
    towers: TowerPair,
    kind: str,
    m_transforms: int = 50,
    ks: tuple[int, ...] = (5, 10, 15),
    seed: int = 0,
    sample_size: int = 2000,
) -> SensitivityReport:
    """Transform-sensitivity protocol for one transform kind.

    For each sampled pair: embed the original foreground and ``m_transforms``
    transformed copies, accumulate the squared embedding distance, and rank
    {original + copies} by cosine similarity to the encoded background.
    Recall@k is the fraction of originals ranking <= k.
    """
    rng = np.random.default_rng(seed)
    if len(pairs) > sample_size:
        chosen = rng.choice(len(pairs), size=sample_size, replace=False)
        pairs = [pairs[i] for i in chosen]
    donors = [(p.pair_id, p.background.image) for p in pairs]

    distances: list[float] = []
    ranks: list[int] = []
    for pair in pairs:
        fg = pair.foreground
        copies = []
        for _ in range(m_transforms):
            tseed = int(rng.integers(2**31))
            for attempt in range(5):
                try:
                    tfg, _ = transforms.sample_transform(fg, donors, seed=tseed + attempt, kind=kind)
                    break
                except ValueError:
                    continue
            else:
                tfg = fg
            copies.append(tfg)

        embs = embed_batch([fg.image] + [c.image for c in copies], towers.foreground)
        orig, rest = embs[0], embs[1:]
        distances.extend((2.0 - 2.0 * (rest.astype(np.float64) @ orig.astype(np.float64))).tolist())

        query = embed_background(pair.background, towers.background).values.astype(np.float64)
        scores_rest = rest.astype(np.float64) @ query
        score_orig = float(orig.astype(np.float64) @ query)
        insert_at = int(rng.integers(m_transforms + 1))
        scores = np.insert(scores_rest, insert_at, score_orig)
        order = np.argsort(-scores, kind="stable")
        ranks.append(int(np.where(order == insert_at)[0][0]) + 1)

    mean_sensitivity = float(np.mean(distances)) if distances else 0.0
    recall = {k: float(np.mean([r <= k for r in ranks])) for k in ks}
    return SensitivityReport(
        kind=kind,
        mean_sensitivity=mean_sensitivity,
        recall_at=recall,
        degenerate=mean_sensitivity < 1e-9,
    )


def normalized_similarity(grid_scores: np.ndarray, s_gt: float) -> float:
    """(s_gt - min) / (max - min) over the grid; 1.0 when the grid is constant.

    Not clamped: values above 1 mean the ground-truth cell beats every grid cell.
    """
    grid = np.asarray(grid_scores, dtype=np.float64)
    lo, hi = float(grid.min()), float(grid.max())
    if hi == lo:
        return 1.0
    return (s_gt - lo) / (hi - lo)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area of two boxes."""
    ix = max(0, min(a.right, b.right) - max(a.left, b.left))
    iy = max(0, min(a.bottom, b.bottom) - max(a.top, b.top))
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union if union else 0.0


def threshold_fractions(values: list[float], thresholds: tuple[float, ...]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {f">{t}": 0.0 for t in thresholds}
    return {f">{t}": float(np.mean(arr > t)) for t in thresholds}


def retrieval_eval(
    eval_pairs: list[PairRecord],
    towers: TowerPair,
    ks: tuple[int, ...] = (1, 5, 10),
    map_n: int | None = None,
) -> dict:
    """Single-ground-truth protocol: gallery = eval foregrounds, one query per pair."""
    gallery = [p.foreground for p in eval_pairs]
    index = build_index(gallery, towers.foreground)
    results = [query_topk(p.background, index, index.size, towers.background) for p in eval_pairs]
    judgments = {p.pair_id: {p.pair_id} for p in eval_pairs}
    ground_truth = {p.pair_id: p.pair_id for p in eval_pairs}
    categories = {p.pair_id: p.foreground.category for p in eval_pairs}
    report = map_report(results, judgments, map_n, categories)
    return {
        "map": report["overall"],
        "per_category": report["per_category"],
        "recall": {k: recall_at_k(results, ground_truth, k) for k in ks},
        "recall_1pct": recall_at_k(results, ground_truth, k_for_percent(index.size)),
        "gallery_size": index.size,
    }


def placement_eval(
    eval_pairs: list[PairRecord],
    towers: TowerPair,
    placement_cfg=None,
    max_queries: int | None = None,
) -> dict:
    """Location (NS) and scale (IOU) metrics against the annotated pair boxes.

    Location: sliding-window grid with the window fixed at the annotated box
    size; NS is the annotated location's score normalized by the grid range.
    Scale: the ratio sweep centered on the annotated box center, scored against
    the annotated box by IOU.
    """
    from .placement import PlacementConfig, EmbeddingBoxScorer, grid_scores_for_window, scale_select

    cfg = placement_cfg or PlacementConfig()
    pairs = eval_pairs[:max_queries] if max_queries else eval_pairs
    ns_values: list[float] = []
    iou_values: list[float] = []
    degenerate = 0
    for pair in pairs:
        bg, fg = pair.background, pair.foreground
        fg_emb = embed_batch([fg.image], towers.foreground)[0]
        scorer = EmbeddingBoxScorer(towers.background, fg_emb)
        box = bg.box
        grid, _boxes = grid_scores_for_window(bg.image, (box.width, box.height), scorer, cfg.grid_k)
        gt_clamped = box.clamped(bg.image.width, bg.image.height)
        s_gt = scorer.score_many(bg.image, [gt_clamped])[0]
        if float(grid.max()) == float(grid.min()):
            degenerate += 1
        ns_values.append(normalized_similarity(grid, s_gt))

        center = (box.left + box.width / 2.0, box.top + box.height / 2.0)
        result = scale_select(bg.image, fg, center, towers, cfg, scorer=scorer)
        iou_values.append(iou(result.box, box))

    return {
        "ns": ns_values,
        "iou": iou_values,
        "ns_thresholds": threshold_fractions(ns_values, NS_THRESHOLDS),
        "iou_thresholds": threshold_fractions(iou_values, IOU_THRESHOLDS),
        "degenerate_grids": degenerate,
    }
