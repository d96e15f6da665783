"""HTTP service contracts: endpoints, determinism, error codes."""

import base64
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gala import imops, synthetic
from gala.core import BoundingBox, ImageTensor
from gala.dataset import extract_pair
from gala.encoder import create_tower
from gala.placement import PlacementConfig
from gala.retrieval import build_index
from gala.service import ServiceState, compose_onto, create_app


@pytest.fixture(scope="module")
def service_env(tmp_path_factory, tiny_encoder_config):
    root = tmp_path_factory.mktemp("gallery")
    fg_tower = create_tower(tiny_encoder_config, seed=21)
    bg_tower = create_tower(tiny_encoder_config, seed=20)

    fgs, extra, sources = [], {}, {}
    for s in range(4):
        image, instances = synthetic.generate_scene(500 + s, n_objects=1)
        bg, fg = extract_pair(image, instances[0][0], pair_id=f"obj{s}", source_image_id=f"obj{s}")
        fgs.append(fg)
        imops.save_image(root / f"obj{s}_fg.png", fg.image.data)
        imops.save_mask(root / f"obj{s}_mask.png", fg.mask.data)
        extra[fg.id] = {"thumbnail_path": f"obj{s}_fg.png", "mask_path": f"obj{s}_mask.png"}
        sources[fg.id] = (image, bg.box)

    index = build_index(fgs, fg_tower, extra_meta=extra)
    state = ServiceState(index=index, background=bg_tower, placement=PlacementConfig(grid_k=3, n_seeds=2), root=root)
    return TestClient(create_app(state)), sources


@pytest.fixture(scope="module")
def client(service_env):
    return service_env[0]


def png_b64(image: ImageTensor) -> str:
    return base64.b64encode(imops.encode_png(image.data)).decode()


@pytest.fixture(scope="module")
def query_image():
    image, _ = synthetic.generate_scene(600)
    return image


class TestHealth:
    def test_unloaded_returns_503(self):
        app = create_app(ServiceState())
        assert TestClient(app).get("/v1/health").status_code == 503

    def test_loaded(self, client):
        body = client.get("/v1/health").json()
        assert body["status"] == "ok"
        assert body["index_size"] == 4
        assert body["embed_dim"] == 16


class TestQuery:
    def test_box_query_returns_k_results(self, client, query_image):
        resp = client.post(
            "/v1/query", json={"image": png_b64(query_image), "box": [10, 10, 40, 30], "k": 3}
        )
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["results"]) == 3
        scores = [r["score"] for r in body["results"]]
        assert scores == sorted(scores, reverse=True)
        assert body["results"][0]["thumbnail_url"].startswith("/v1/objects/")

    def test_replay_identical_minus_timing(self, client, query_image):
        payload = {"image": png_b64(query_image), "box": [5, 5, 50, 40], "k": 4}
        bodies = []
        for _ in range(2):
            body = client.post("/v1/query", json=payload).json()
            body.pop("elapsed_ms")
            bodies.append(json.dumps(body, sort_keys=True))
        assert bodies[0] == bodies[1]

    def test_k_capped_at_50_and_index_size(self, client, query_image):
        resp = client.post("/v1/query", json={"image": png_b64(query_image), "box": [0, 0, 30, 30], "k": 999})
        assert len(resp.json()["results"]) == 4  # index smaller than the cap

    def test_non_box_query_carries_box_and_heatmap(self, client, query_image):
        resp = client.post("/v1/query", json={"image": png_b64(query_image), "k": 2})
        assert resp.status_code == 200
        body = resp.json()
        l, t, w, h = body["box"]
        assert BoundingBox(l, t, w, h).inside(query_image.width, query_image.height)
        heat = imops.decode_image_bytes(base64.b64decode(body["heatmap_png_b64"]))
        assert heat.shape[:2] == (query_image.height, query_image.width)

    def test_malformed_image_400(self, client):
        resp = client.post("/v1/query", json={"image": base64.b64encode(b"junk").decode(), "k": 1})
        assert resp.status_code == 400

    def test_box_outside_image_400(self, client, query_image):
        resp = client.post("/v1/query", json={"image": png_b64(query_image), "box": [120, 120, 50, 50]})
        assert resp.status_code == 400

    def test_multipart_accepted(self, client, query_image):
        files = {"image": ("bg.png", imops.encode_png(query_image.data), "image/png")}
        resp = client.post("/v1/query", files=files, data={"box": "[10, 10, 30, 30]", "k": "2"})
        assert resp.status_code == 200
        assert len(resp.json()["results"]) == 2


class TestComposite:
    def test_round_trip_reproduces_source(self, client, service_env):
        _, sources = service_env
        source, box = sources["obj1"]
        resp = client.post(
            "/v1/composite",
            json={"image": png_b64(source), "object_id": "obj1", "box": box.as_list()},
        )
        assert resp.status_code == 200
        out = imops.decode_image_bytes(resp.content)
        # exact up to the 8-bit quantization of the transport format
        expected = imops.decode_image_bytes(imops.encode_png(source.data))
        np.testing.assert_array_equal(out, expected)

    def test_one_pixel_box(self, client, query_image):
        resp = client.post(
            "/v1/composite",
            json={"image": png_b64(query_image), "object_id": "obj0", "box": [3, 3, 1, 1]},
        )
        assert resp.status_code == 200

    def test_unknown_object_404(self, client, query_image):
        resp = client.post(
            "/v1/composite",
            json={"image": png_b64(query_image), "object_id": "nope", "box": [0, 0, 10, 10]},
        )
        assert resp.status_code == 404


class TestThumbnails:
    def test_square_thumbnail(self, client):
        resp = client.get("/v1/objects/obj2/thumbnail")
        assert resp.status_code == 200
        img = imops.decode_image_bytes(resp.content)
        assert img.shape[0] == img.shape[1]

    def test_unknown_404(self, client):
        assert client.get("/v1/objects/ghost/thumbnail").status_code == 404


class TestComposeOnto:
    def test_masked_paste_keeps_background_outside_mask(self):
        bg = np.zeros((20, 20, 3), dtype=np.float32)
        fg = np.ones((8, 8, 3), dtype=np.float32) * 0.5
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[2:6, 2:6] = 1
        out = compose_onto(bg, fg, mask, BoundingBox(5, 5, 4, 4))
        assert np.all(out[5:9, 5:9] == 0.5)  # the tight crop resized onto the box
        assert np.all(out[:5] == 0.0) and np.all(out[9:] == 0.0)
