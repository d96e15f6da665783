"""Self-transformations used to mint geometry/lighting negatives, plus the
mask augmentations that stop the model from keying on hole/cutout edges.

A geometry transform perturbs the four corners of the square cutout by random
fractions of the side length (homography solved by DLT) and optionally flips
left-right. A lighting transform multiplies the object by a smooth
illumination map derived from a blurred donor image, exponentiated so the
brightest point of the map gains exactly ``peak_gain``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BackgroundQuery, ForegroundInstance, ImageTensor, SegMask
from . import imops

RHO_MAX_DEFAULT = 0.25
PEAK_GAIN_DEFAULT = 5.0
BLUR_RADIUS_DEFAULT = 100
ERODE_FRAC_DEFAULT = 0.03
EXTEND_FRAC_DEFAULT = 0.10


@dataclass(frozen=True)
class GeometryParams:
    """Corner offsets (4 x 2, fractions of side length) + optional left-right flip."""

    corner_offsets: tuple
    flip: bool = False

    def __post_init__(self):
        arr = np.asarray(self.corner_offsets, dtype=np.float64)
        if arr.shape != (4, 2):
            raise ValueError("corner_offsets must be 4 (dx, dy) pairs")
        object.__setattr__(self, "corner_offsets", tuple(map(tuple, arr.tolist())))

    @staticmethod
    def identity() -> "GeometryParams":
        return GeometryParams(((0.0, 0.0),) * 4, flip=False)


@dataclass(frozen=True)
class LightingParams:
    source_image_id: str = ""
    blur_radius: int = BLUR_RADIUS_DEFAULT
    peak_gain: float = PEAK_GAIN_DEFAULT

    def __post_init__(self):
        if self.peak_gain <= 1.0:
            raise ValueError("peak_gain must exceed 1")


@dataclass(frozen=True)
class TransformRecord:
    """Reproducibility record: kind + params + the seed that drew them."""

    kind: str
    params: object
    rng_seed: int

    def to_json(self) -> str:
        def encode(p):
            if isinstance(p, GeometryParams):
                return {"corner_offsets": p.corner_offsets, "flip": p.flip}
            if isinstance(p, LightingParams):
                return {
                    "source_image_id": p.source_image_id,
                    "blur_radius": p.blur_radius,
                    "peak_gain": p.peak_gain,
                }
            return {k: encode(v) for k, v in p.items()}

        return json.dumps({"kind": self.kind, "params": encode(self.params), "seed": self.rng_seed})


def geometry_transform(fg: ForegroundInstance, params: GeometryParams) -> ForegroundInstance:
    """Warp the cutout (and its mask) by the corner-offset homography, then flip."""
    side = fg.side
    src = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    dst = src + np.asarray(params.corner_offsets, dtype=np.float64) * side
    matrix = imops.homography_from_corners(src, dst)

    image = imops.warp_homography(fg.image.data, matrix, fill=imops.WHITE)
    mask = imops.warp_homography(fg.mask.data.astype(np.float32), matrix, fill=0.0) >= 0.5
    if params.flip:
        image = image[:, ::-1]
        mask = mask[:, ::-1]
    image = np.clip(image, 0.0, 1.0)
    image[~mask] = imops.WHITE
    return ForegroundInstance(
        id=fg.id,
        image=ImageTensor(image),
        mask=SegMask(mask.astype(np.uint8)),
        category=fg.category,
        source_image_id=fg.source_image_id,
    )


def lighting_multiplier_map(donor: ImageTensor, side: int, params: LightingParams) -> np.ndarray:
    """Per-pixel gain map in [1, peak_gain]; all-ones when the donor is degenerate.

    Pipeline: donor luminance -> large-radius Gaussian blur -> bilinear resize
    to the cutout size -> min-max normalize -> pointwise peak_gain ** m.
    """
    lum = imops.to_luminance(donor.data)
    blurred = imops.gaussian_blur(lum, params.blur_radius)
    resized = imops.resize_bilinear(blurred, side, side).astype(np.float64)
    lo, hi = float(resized.min()), float(resized.max())
    # near-constant maps are float noise, not structure: treat as degenerate
    if hi - lo <= 1e-6 * max(abs(hi), abs(lo), 1.0):
        return np.ones((side, side), dtype=np.float64)
    normalized = (resized - lo) / (hi - lo)
    return np.power(params.peak_gain, normalized)


def lighting_transform(
    fg: ForegroundInstance, donor: ImageTensor, params: LightingParams
) -> ForegroundInstance:
    """Relight the cutout by the donor-derived gain map; pixels outside the mask stay put."""
    gain = lighting_multiplier_map(donor, fg.side, params)
    image = fg.image.data.copy()
    inside = fg.mask.data != 0
    lit = np.clip(fg.image.data * gain[:, :, None].astype(np.float32), 0.0, 1.0)
    image[inside] = lit[inside]
    return ForegroundInstance(
        id=fg.id,
        image=ImageTensor(image),
        mask=fg.mask,
        category=fg.category,
        source_image_id=fg.source_image_id,
    )


def augment_masks(
    fg: ForegroundInstance,
    bg: BackgroundQuery,
    seed: int,
    erode_frac: float = ERODE_FRAC_DEFAULT,
    extend_frac: float = EXTEND_FRAC_DEFAULT,
) -> tuple[ForegroundInstance, BackgroundQuery]:
    """Randomly erode the cutout mask and extend the background fill rectangle.

    Erosion radius is uniform in [0, erode_frac * tight-box diagonal]; each side
    of the background box extends by an independent uniform margin in
    [0, extend_frac * side length], clamped to the image. Deterministic per seed.
    """
    if bg.box is None:
        raise ValueError("background query has no box")
    rng = np.random.default_rng(seed)

    tight = fg.mask.tight_box()
    r_max = erode_frac * float(np.hypot(tight.width, tight.height))
    radius = int(round(rng.uniform(0.0, r_max))) if r_max > 0 else 0
    eroded = imops.erode_mask(fg.mask.data, radius)
    retries = 0
    while not eroded.any():
        if retries >= 3:
            raise ValueError("mask augmentation emptied the mask")
        radius //= 2
        eroded = imops.erode_mask(fg.mask.data, radius)
        retries += 1
    fg_img = fg.image.data.copy()
    fg_img[eroded == 0] = imops.WHITE
    new_fg = ForegroundInstance(
        id=fg.id,
        image=ImageTensor(fg_img),
        mask=SegMask(eroded),
        category=fg.category,
        source_image_id=fg.source_image_id,
    )

    box = bg.box
    ml = int(round(rng.uniform(0.0, extend_frac * box.width)))
    mr = int(round(rng.uniform(0.0, extend_frac * box.width)))
    mt = int(round(rng.uniform(0.0, extend_frac * box.height)))
    mb = int(round(rng.uniform(0.0, extend_frac * box.height)))
    left = max(box.left - ml, 0)
    top = max(box.top - mt, 0)
    right = min(box.right + mr, bg.image.width)
    bottom = min(box.bottom + mb, bg.image.height)

    # the hole is uniform by construction, so its first pixel IS the fill color
    fill = bg.image.data[box.top, box.left].copy()
    bg_img = bg.image.data.copy()
    bg_img[top:bottom, left:right] = fill
    from .core import BoundingBox

    new_bg = BackgroundQuery(
        id=bg.id,
        image=ImageTensor(bg_img),
        box=BoundingBox(left, top, right - left, bottom - top),
        source_image_id=bg.source_image_id,
    )
    return new_fg, new_bg


def sample_transform(
    fg: ForegroundInstance,
    donor_pool: Sequence[tuple[str, ImageTensor]],
    seed: int,
    rho_max: float = RHO_MAX_DEFAULT,
    peak_gain: float = PEAK_GAIN_DEFAULT,
    blur_radius: int = BLUR_RADIUS_DEFAULT,
    kind: str | None = None,
    compose: bool = False,
) -> tuple[ForegroundInstance, TransformRecord]:
    """Draw and apply one random self-transformation.

    The kind is uniform over {geometry, lighting} unless forced via ``kind``;
    with ``compose=True`` both are applied in sequence (geometry first).
    """
    if not donor_pool:
        raise ValueError("donor pool is empty")
    rng = np.random.default_rng(seed)

    def draw_geometry() -> GeometryParams:
        offsets = rng.uniform(-rho_max, rho_max, size=(4, 2))
        return GeometryParams(tuple(map(tuple, offsets.tolist())), flip=bool(rng.random() < 0.5))

    def draw_lighting() -> tuple[LightingParams, ImageTensor]:
        donor_id, donor = donor_pool[int(rng.integers(len(donor_pool)))]
        return LightingParams(donor_id, blur_radius, peak_gain), donor

    if compose:
        gp = draw_geometry()
        lp, donor = draw_lighting()
        out = lighting_transform(geometry_transform(fg, gp), donor, lp)
        return out, TransformRecord("composite", {"geometry": gp, "lighting": lp}, seed)

    chosen = kind if kind is not None else ("geometry" if rng.random() < 0.5 else "lighting")
    if chosen == "geometry":
        gp = draw_geometry()
        return geometry_transform(fg, gp), TransformRecord("geometry", gp, seed)
    if chosen == "lighting":
        lp, donor = draw_lighting()
        return lighting_transform(fg, donor, lp), TransformRecord("lighting", lp, seed)
    raise ValueError(f"unknown transform kind {chosen!r}")
