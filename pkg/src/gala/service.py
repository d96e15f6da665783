"""HTTP query service: retrieval with or without a box, composite previews,
thumbnails, health.

The index and the background tower are loaded once at startup and never
mutated; inference runs through a bounded semaphore so concurrent requests
cannot oversubscribe the CPU. Non-box requests seed their random search from a
hash of the request content, so replaying a request reproduces the response
byte for byte (timing field aside).
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .core import BackgroundQuery, BoundingBox, ImageTensor
from .encoder import TowerWeights, load_checkpoint
from .placement import PlacementConfig, place_auto
from .retrieval import GalleryIndex, load_index, query_topk
from .training import TowerPair
from . import imops

K_CAP = 50


@dataclass
class ServiceState:
    index: GalleryIndex | None = None
    background: TowerWeights | None = None
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    root: Path = Path(".")
    max_workers: int = 2

    def __post_init__(self):
        self._gate = threading.BoundedSemaphore(self.max_workers)

    @property
    def loaded(self) -> bool:
        return self.index is not None and self.background is not None

    def towers(self) -> TowerPair:
        return TowerPair(background=self.background, foreground=self.background)


def state_from_env(env=os.environ) -> ServiceState:
    """Build service state from GALA_INDEX / GALA_WEIGHTS / GALA_GRID_K."""
    state = ServiceState()
    index_path = env.get("GALA_INDEX")
    weights_dir = env.get("GALA_WEIGHTS")
    grid_k = int(env.get("GALA_GRID_K", PlacementConfig().grid_k))
    state.placement = PlacementConfig(grid_k=grid_k)
    if index_path:
        state.index = load_index(index_path)
        state.root = Path(index_path).resolve().parent
    if weights_dir:
        state.background = load_checkpoint(Path(weights_dir) / "background.gala")
    return state


def _mean_fill(image: ImageTensor, box: BoundingBox) -> ImageTensor:
    arr = image.data.copy()
    arr[box.top : box.bottom, box.left : box.right] = image.data.reshape(-1, 3).mean(axis=0)
    return ImageTensor(arr)


def compose_onto(background: np.ndarray, fg_image: np.ndarray, fg_mask: np.ndarray, box: BoundingBox) -> np.ndarray:
    """Paste the mask-tight crop of a cutout into the box (mask-aware, bilinear)."""
    from .core import SegMask

    tight = SegMask(fg_mask).tight_box()
    crop = fg_image[tight.top : tight.bottom, tight.left : tight.right]
    mcrop = fg_mask[tight.top : tight.bottom, tight.left : tight.right].astype(np.float32)
    crop_r = imops.resize_bilinear(crop, box.height, box.width)
    mask_r = imops.resize_bilinear(mcrop, box.height, box.width) >= 0.5

    out = background.copy()
    region = out[box.top : box.bottom, box.left : box.right]
    region[mask_r] = crop_r[mask_r]
    out[box.top : box.bottom, box.left : box.right] = region
    return out


async def _parse_query_payload(request: Request) -> dict:
    content_type = request.headers.get("content-type", "")
    if content_type.startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("image")
        if upload is None:
            raise ValueError("missing image upload")
        payload: dict = {"image_bytes": await upload.read()}
        if form.get("box"):
            payload["box"] = json.loads(form["box"])
        if form.get("k"):
            payload["k"] = int(form["k"])
        if form.get("object_id"):
            payload["object_id"] = form["object_id"]
        return payload
    body = await request.json()
    payload = dict(body)
    if "image" in payload:
        try:
            payload["image_bytes"] = base64.b64decode(payload.pop("image"))
        except Exception as exc:
            raise ValueError("image is not valid base64") from exc
    return payload


def _decode_image(payload: dict) -> ImageTensor:
    blob = payload.get("image_bytes")
    if not blob:
        raise ValueError("missing image")
    try:
        return ImageTensor(imops.decode_image_bytes(blob))
    except Exception as exc:
        raise ValueError("image bytes are not a decodable PNG/JPEG") from exc


def _parse_box(payload: dict, image: ImageTensor) -> BoundingBox | None:
    raw = payload.get("box")
    if raw is None:
        return None
    try:
        l, t, w, h = (int(v) for v in raw)
        box = BoundingBox(l, t, w, h)
    except Exception as exc:
        raise ValueError("box must be [left, top, width, height] with positive size") from exc
    if not box.inside(image.width, image.height):
        raise ValueError("box lies outside the image")
    return box


def create_app(state: ServiceState | None = None, ui_dir=None) -> FastAPI:
    state = state if state is not None else state_from_env()
    app = FastAPI(title="gala", version="0.1.0")
    app.state.service = state

    def results_payload(ranked) -> list[dict]:
        return [
            {"id": oid, "score": score, "thumbnail_url": f"/v1/objects/{oid}/thumbnail"}
            for oid, score in ranked
        ]

    @app.get("/v1/health")
    def health():
        if not state.loaded:
            return JSONResponse({"status": "unavailable"}, status_code=503)
        return {"status": "ok", "index_size": state.index.size, "embed_dim": state.index.dim}

    @app.post("/v1/query")
    async def query(request: Request):
        if not state.loaded:
            return JSONResponse({"error": "index not loaded"}, status_code=503)
        started = time.perf_counter()
        try:
            payload = await _parse_query_payload(request)
            image = _decode_image(payload)
            box = _parse_box(payload, image)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)

        k = max(1, min(int(payload.get("k", 10)), K_CAP, state.index.size))
        with state._gate:
            if box is not None:
                bg = BackgroundQuery(id="query", image=_mean_fill(image, box), box=box)
                result = query_topk(bg, state.index, k, state.background)
                body = {"results": results_payload(result.ranked)}
            else:
                seed = int.from_bytes(hashlib.sha256(payload["image_bytes"]).digest()[:4], "little")
                placed = place_auto(image, state.index, state.towers(), state.placement, seed=seed)
                bg = BackgroundQuery(id="query", image=_mean_fill(image, placed.box), box=placed.box)
                result = query_topk(bg, state.index, k, state.background)
                body = {
                    "results": results_payload(result.ranked),
                    "box": placed.box.as_list(),
                    "heatmap_png_b64": base64.b64encode(imops.encode_png(placed.heatmap)).decode(),
                }
        body["elapsed_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
        return JSONResponse(body)

    @app.post("/v1/composite")
    async def composite(request: Request):
        if not state.loaded:
            return JSONResponse({"error": "index not loaded"}, status_code=503)
        try:
            payload = await _parse_query_payload(request)
            image = _decode_image(payload)
            box = _parse_box(payload, image)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        if box is None:
            return JSONResponse({"error": "composite needs a box"}, status_code=400)
        object_id = payload.get("object_id", "")
        meta = state.index.meta.get(object_id)
        if meta is None:
            return JSONResponse({"error": f"unknown object {object_id!r}"}, status_code=404)
        fg_path = state.root / meta.get("thumbnail_path", "")
        mask_path = state.root / meta.get("mask_path", "")
        if not fg_path.is_file() or not mask_path.is_file():
            return JSONResponse({"error": f"no stored pixels for {object_id!r}"}, status_code=404)

        fg_image = imops.load_image(fg_path)
        fg_mask = imops.load_mask(mask_path)
        out = compose_onto(image.data, fg_image, fg_mask, box)
        return Response(content=imops.encode_png(out), media_type="image/png")

    @app.get("/v1/objects/{object_id}/thumbnail")
    def thumbnail(object_id: str):
        if not state.loaded:
            return JSONResponse({"error": "index not loaded"}, status_code=503)
        meta = state.index.meta.get(object_id)
        if meta is None or not meta.get("thumbnail_path"):
            return JSONResponse({"error": f"unknown object {object_id!r}"}, status_code=404)
        path = state.root / meta["thumbnail_path"]
        if not path.is_file():
            return JSONResponse({"error": f"missing thumbnail for {object_id!r}"}, status_code=404)
        return Response(content=path.read_bytes(), media_type="image/png")

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
