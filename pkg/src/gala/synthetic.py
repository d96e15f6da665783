"""Procedural scenes for desk-scale experiments: colored shapes on gradient
backgrounds, shaded by a shared directional light, with perspective-consistent
shear tied to a central vanishing point.

Masks are exact by construction (the rendered pixels ARE the mask), every
instance's tight box stays within 5..45% of the canvas area, and flipping a
shape reverses the sign of its shading gradient, so geometry and lighting
self-transformations produce genuinely informative negatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ImageTensor, SegMask
from . import imops

CANVAS_DEFAULT = 128
SHAPES = ("quad", "ellipse", "triangle")
AREA_LO, AREA_HI = 0.055, 0.45
MAX_SHEAR = 0.45


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: tuple[float, float, float]
    center: tuple[float, float]
    size: float
    aspect: float
    shear: float


@dataclass(frozen=True)
class SceneSpec:
    canvas: int
    light_angle: float
    floor_horizon: float
    objects: tuple[ObjectSpec, ...]


def _light_dir(angle: float) -> np.ndarray:
    return np.array([np.cos(angle), np.sin(angle)])


def _shade(color, xs, ys, center, size, direction) -> np.ndarray:
    """Linear luminance ramp across the object along the light direction."""
    proj = ((xs - center[0]) * direction[0] + (ys - center[1]) * direction[1]) / (2.0 * size)
    factor = np.clip(0.7 + 0.6 * proj, 0.35, 1.0)
    return np.clip(np.asarray(color)[None, :] * factor[:, None], 0.0, 1.0)


def _object_mask(obj: ObjectSpec, canvas: int) -> np.ndarray:
    cx, cy = obj.center
    a = obj.size * obj.aspect
    b = obj.size / obj.aspect
    shear = obj.shear
    if obj.shape == "ellipse":
        ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
        # invert the shear before the axis-aligned inside test
        x0 = (xs - cx) - shear * (ys - cy)
        y0 = ys - cy
        return (((x0 / a) ** 2 + (y0 / b) ** 2) <= 1.0).astype(np.uint8)

    if obj.shape == "quad":
        base = np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
    else:  # triangle
        base = np.array([[0.0, -b], [a, b], [-a, b]])
    pts = base.copy()
    pts[:, 0] += shear * pts[:, 1]
    pts[:, 0] += cx
    pts[:, 1] += cy
    return imops.rasterize_polygon(pts, canvas, canvas)


def _background(spec: SceneSpec) -> np.ndarray:
    canvas = spec.canvas
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    sky = np.array([0.55, 0.70, 0.90])
    sky_deep = np.array([0.30, 0.45, 0.75])
    floor = np.array([0.55, 0.45, 0.35])
    floor_deep = np.array([0.35, 0.28, 0.22])

    horizon = spec.floor_horizon * canvas
    t_sky = np.clip(ys / max(horizon, 1.0), 0.0, 1.0)
    t_floor = np.clip((ys - horizon) / max(canvas - horizon, 1.0), 0.0, 1.0)
    img = np.where(
        (ys < horizon)[:, :, None],
        sky[None, None, :] * (1 - t_sky[:, :, None]) + sky_deep[None, None, :] * t_sky[:, :, None],
        floor[None, None, :] * (1 - t_floor[:, :, None]) + floor_deep[None, None, :] * t_floor[:, :, None],
    )

    # global brightness ramp along the light direction makes the illumination
    # readable from the background alone
    d = _light_dir(spec.light_angle)
    proj = xs * d[0] + ys * d[1]
    proj = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-9)
    img *= (0.7 + 0.3 * proj)[:, :, None]
    return np.clip(img, 0.0, 1.0)


def sample_scene_spec(seed: int, canvas: int = CANVAS_DEFAULT, n_objects: int | None = None) -> SceneSpec:
    rng = np.random.default_rng(seed)
    light_angle = rng.uniform(-0.9, 0.9)  # keep a strong horizontal component
    horizon = rng.uniform(0.45, 0.7)
    count = int(n_objects) if n_objects is not None else int(rng.integers(1, 4))

    objects: list[ObjectSpec] = []
    occupied: list[tuple[float, float, float]] = []
    attempts = 0
    while len(objects) < count and attempts < 200:
        attempts += 1
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        size = rng.uniform(0.14, 0.20) * canvas
        aspect = rng.uniform(0.75, 1.35)
        margin = size * 1.6
        cx = rng.uniform(margin, canvas - margin)
        cy = rng.uniform(margin, canvas - margin)
        if any(np.hypot(cx - ox, cy - oy) < (size + osz) * 1.7 for ox, oy, osz in occupied):
            continue
        shear = MAX_SHEAR * (cx - canvas / 2.0) / (canvas / 2.0)
        hue = rng.uniform(0.0, 1.0)
        color = _hsv_to_rgb(hue, rng.uniform(0.6, 0.9), rng.uniform(0.7, 1.0))
        obj = ObjectSpec(shape, color, (cx, cy), size, aspect, shear)
        mask = _object_mask(obj, canvas)
        if not mask.any():
            continue
        frac = SegMask(mask).tight_box().area() / (canvas * canvas)
        if not AREA_LO <= frac <= AREA_HI:
            continue
        objects.append(obj)
        occupied.append((cx, cy, size))
    if not objects:
        raise RuntimeError(f"could not place any object for seed {seed}")
    return SceneSpec(canvas=canvas, light_angle=light_angle, floor_horizon=horizon, objects=tuple(objects))


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    import colorsys

    return tuple(colorsys.hsv_to_rgb(h % 1.0, s, v))


def render_scene(spec: SceneSpec) -> tuple[ImageTensor, list[tuple[SegMask, str]]]:
    canvas = spec.canvas
    img = _background(spec)
    direction = _light_dir(spec.light_angle)
    instances: list[tuple[SegMask, str]] = []
    for obj in spec.objects:
        mask = _object_mask(obj, canvas)
        rows, cols = np.nonzero(mask)
        img[rows, cols] = _shade(obj.color, cols.astype(np.float64), rows.astype(np.float64), obj.center, obj.size, direction)
        instances.append((SegMask(mask), obj.shape))
    return ImageTensor(img.astype(np.float32)), instances


def generate_scene(
    seed: int, canvas: int = CANVAS_DEFAULT, n_objects: int | None = None
) -> tuple[ImageTensor, list[tuple[SegMask, str]]]:
    """Deterministic per seed: sample a spec and render it."""
    return render_scene(sample_scene_spec(seed, canvas=canvas, n_objects=n_objects))


def write_corpus(out_dir, n: int, seed: int, canvas: int = CANVAS_DEFAULT) -> Path:
    """Render n scenes into the standard corpus layout consumed by ingestion."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)

    scene_seeds = np.random.SeedSequence(seed).generate_state(n)
    lines = []
    for i in range(n):
        image_id = f"scene_{i:05d}"
        image, instances = generate_scene(int(scene_seeds[i]), canvas=canvas)
        image_path = f"images/{image_id}.png"
        imops.save_image(out_dir / image_path, image.data)
        entry_instances = []
        for k, (mask, category) in enumerate(instances):
            mask_path = f"masks/{image_id}_{k}.png"
            imops.save_mask(out_dir / mask_path, mask.data)
            entry_instances.append({"mask_path": mask_path, "category": category, "confidence": 1.0})
        lines.append(json.dumps({"image_id": image_id, "image_path": image_path, "instances": entry_instances}))

    with open(out_dir / "corpus.jsonl", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_dir / "corpus.jsonl"
