"""Pair extraction, corpus filtering, splits, preprocessing, manifests."""

import json

import numpy as np
import pytest

from gala import imops, synthetic
from gala.core import BoundingBox, ImageTensor, SegMask
from gala.dataset import (
    CorpusRecord,
    DatasetManifest,
    InstanceAnnotation,
    ManifestEntry,
    extract_pair,
    filter_corpus,
    ingest_corpus,
    load_corpus,
    load_manifest,
    load_pairs,
    preprocess,
    save_manifest,
    split_dataset,
)


def checkerboard(h, w):
    ys, xs = np.mgrid[0:h, 0:w]
    img = np.zeros((h, w, 3), dtype=np.float32)
    img[..., 0] = ((ys // 4 + xs // 4) % 2) * 0.8 + 0.1
    img[..., 1] = 0.3
    img[..., 2] = 1.0 - img[..., 0]
    return ImageTensor(img)


class TestExtractPair:
    def test_hand_computed_rectangle(self):
        image = checkerboard(100, 100)
        mask = np.zeros((100, 100))
        mask[20:40, 10:50] = 1  # rows 20..39, cols 10..49
        bg, fg = extract_pair(image, SegMask(mask), pair_id="p", source_image_id="s")

        assert bg.box == BoundingBox(10, 20, 40, 20)
        assert fg.image.data.shape == (40, 40, 3)
        # the 20-row crop is centered vertically inside the 40px square
        assert np.all(fg.image.data[:10] == 1.0) and np.all(fg.image.data[30:] == 1.0)
        assert fg.mask.data[:10].sum() == 0 and fg.mask.data[10:30].sum() == 20 * 40

    def test_full_coverage_mask(self):
        image = checkerboard(16, 16)
        bg, fg = extract_pair(image, SegMask(np.ones((16, 16))), source_image_id="s")
        mean = image.data.reshape(-1, 3).mean(axis=0)
        np.testing.assert_allclose(bg.image.data, np.broadcast_to(mean, (16, 16, 3)), atol=1e-6)
        assert bg.box == BoundingBox(0, 0, 16, 16)

    def test_empty_mask_raises(self):
        with pytest.raises(ValueError, match="empty instance"):
            extract_pair(checkerboard(8, 8), SegMask(np.zeros((8, 8))))

    def test_crop_paste_round_trip(self):
        """Pasting the original box content over the filled background restores
        the original image exactly: fill and crop partition the rectangle."""
        image = checkerboard(64, 48)
        mask = np.zeros((64, 48))
        mask[10:30, 5:25] = 1
        mask[12, 7] = 0  # non-rectangular interior
        bg, _fg = extract_pair(image, SegMask(mask), source_image_id="s")
        box = bg.box
        restored = bg.image.data.copy()
        restored[box.top : box.bottom, box.left : box.right] = image.data[
            box.top : box.bottom, box.left : box.right
        ]
        assert np.array_equal(restored, image.data)

    def test_white_outside_mask(self):
        image = checkerboard(32, 32)
        mask = np.zeros((32, 32))
        mask[8:24, 8:24] = 1
        mask[8, 8] = 0
        _bg, fg = extract_pair(image, SegMask(mask))
        assert np.all(fg.image.data[fg.mask.data == 0] == 1.0)


def _write_instance_corpus(tmp_path, entries):
    """entries: list of (image h, w, mask slice or None, confidence)."""
    images = tmp_path / "images"
    masks = tmp_path / "masks"
    images.mkdir(), masks.mkdir()
    lines = []
    for i, (h, w, sl, conf) in enumerate(entries):
        image_id = f"img{i}"
        imops.save_image(images / f"{image_id}.png", np.full((h, w, 3), 0.5, dtype=np.float32))
        mask = np.zeros((h, w), dtype=np.uint8)
        if sl is not None:
            mask[sl] = 1
        imops.save_mask(masks / f"{image_id}.png", mask)
        lines.append(
            json.dumps(
                {
                    "image_id": image_id,
                    "image_path": f"images/{image_id}.png",
                    "instances": [
                        {"mask_path": f"masks/{image_id}.png", "category": "thing", "confidence": conf}
                    ],
                }
            )
        )
    (tmp_path / "corpus.jsonl").write_text("\n".join(lines) + "\n")
    return load_corpus(tmp_path)


class TestFilterCorpus:
    def test_confidence_and_area_rules(self, tmp_path):
        records = _write_instance_corpus(
            tmp_path,
            [
                (100, 100, np.s_[10:50, 10:60], 0.59),  # conf below threshold
                (100, 100, np.s_[0:20, 0:20], 0.9),  # 4% area, too small
                (100, 100, np.s_[10:50, 10:60], 0.9),  # 20% area, kept
                (100, 100, np.s_[10:50, 10:60], 0.6),  # boundary: strictly greater required
            ],
        )
        kept = filter_corpus(records)
        assert [r.image_id for r in kept] == ["img2"]

    def test_idempotent(self, tmp_path):
        records = _write_instance_corpus(
            tmp_path,
            [(100, 100, np.s_[10:50, 10:60], 0.9), (100, 100, np.s_[0:10, 0:10], 0.9)],
        )
        once = filter_corpus(records)
        twice = filter_corpus(once)
        assert once == twice

    def test_area_invariant(self, tmp_path):
        records = _write_instance_corpus(
            tmp_path,
            [(100, 100, np.s_[i * 2 : i * 2 + 20 + i * 5, 10 : 40 + i * 10], 0.9) for i in range(5)],
        )
        for record in filter_corpus(records):
            for inst in record.instances:
                frac = inst.decode_mask(100, 100).tight_box().area() / 10_000
                assert 0.05 <= frac <= 0.50

    def test_polygon_instances(self, tmp_path):
        images = tmp_path / "images"
        images.mkdir()
        imops.save_image(images / "p.png", np.full((100, 100, 3), 0.5, dtype=np.float32))
        (tmp_path / "corpus.jsonl").write_text(
            json.dumps(
                {
                    "image_id": "p",
                    "image_path": "images/p.png",
                    "instances": [
                        {"polygon": [[10, 10], [60, 10], [60, 50], [10, 50]], "category": "poly", "confidence": 0.95}
                    ],
                }
            )
            + "\n"
        )
        kept = filter_corpus(load_corpus(tmp_path))
        assert len(kept) == 1 and kept[0].instances[0].polygon is not None


class TestSplitDataset:
    @staticmethod
    def _manifest(n):
        return DatasetManifest(
            records=[
                ManifestEntry(f"p{i}", "b.png", "f.png", "m.png", BoundingBox(0, 0, 2, 2)) for i in range(n)
            ]
        )

    def test_ninety_ten(self):
        out = split_dataset(self._manifest(10), 0.9, seed=1)
        assert len(out.split_records("train")) == 9
        assert len(out.split_records("eval")) == 1

    def test_deterministic(self):
        a = split_dataset(self._manifest(20), 0.8, seed=5)
        b = split_dataset(self._manifest(20), 0.8, seed=5)
        assert [r.split for r in a.records] == [r.split for r in b.records]

    def test_half_of_four(self):
        out = split_dataset(self._manifest(4), 0.5, seed=0)
        assert len(out.split_records("train")) == 2

    def test_every_record_assigned(self):
        out = split_dataset(self._manifest(13), 0.7, seed=2)
        assert all(r.split in ("train", "eval") for r in out.records)
        assert abs(len(out.split_records("train")) - 0.7 * 13) <= 1


class TestPreprocess:
    def test_resize_shape(self):
        out = preprocess(checkerboard(448, 448), 224)
        assert out.shape == (224, 224, 3)

    def test_mean_subtraction_zeroes_uniform(self):
        img = ImageTensor(np.full((64, 64, 3), 0.5, dtype=np.float32))
        np.testing.assert_allclose(preprocess(img, 32, mean=(0.5, 0.5, 0.5)), 0.0, atol=1e-7)

    def test_same_size_identity_up_to_shift(self):
        img = checkerboard(32, 32)
        out = preprocess(img, 32, mean=(0.1, 0.2, 0.3))
        np.testing.assert_allclose(out, img.data - np.array([0.1, 0.2, 0.3], dtype=np.float32), atol=1e-7)


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        manifest = DatasetManifest(
            records=[
                ManifestEntry("a#0", "pairs/a_bg.png", "pairs/a_fg.png", "pairs/a_m.png", BoundingBox(1, 2, 3, 4), "cat", "train"),
                ManifestEntry("b#0", "pairs/b_bg.png", "pairs/b_fg.png", "pairs/b_m.png", BoundingBox(5, 6, 7, 8), "dog", "eval"),
            ]
        )
        path = tmp_path / "manifest.jsonl"
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        assert loaded.records == manifest.records
        assert loaded.stats == {"cat": 1, "dog": 1}

    def test_duplicate_ids_rejected(self):
        entry = ManifestEntry("a", "b.png", "f.png", "m.png", BoundingBox(0, 0, 1, 1))
        with pytest.raises(ValueError, match="duplicate"):
            DatasetManifest(records=[entry, entry])

    def test_missing_key_rejected(self):
        with pytest.raises(ValueError, match="missing keys"):
            ManifestEntry.from_json('{"pair_id": "x"}')


class TestIngest:
    def test_synthetic_corpus_end_to_end(self, tmp_path):
        corpus = tmp_path / "corpus"
        synthetic.write_corpus(corpus, n=6, seed=11)
        manifest_path = tmp_path / "data" / "manifest.jsonl"
        manifest = ingest_corpus(corpus, manifest_path, train_fraction=0.75, seed=3)

        assert len(manifest.records) >= 6
        loaded = load_manifest(manifest_path)
        pairs = load_pairs(loaded, manifest_path.parent)
        assert len(pairs) == len(manifest.records)
        pair = pairs[0]
        assert pair.background.box is not None
        assert pair.foreground.image.height == pair.foreground.image.width
        # white padding survived the PNG round trip exactly
        assert np.all(pair.foreground.image.data[pair.foreground.mask.data == 0] == 1.0)
