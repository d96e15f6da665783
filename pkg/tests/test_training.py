"""Loss math against brute-force oracles, and the training-loop contracts."""

import numpy as np
import pytest
import torch

from gala.encoder import checkpoint_hash, create_tower
from gala.training import (
    TowerPair,
    TrainConfig,
    TrainingDiverged,
    TripletBatch,
    alternating_train,
    batch_loss,
    batch_loss_torch,
    scaled_lr,
    stage_schedule,
    train_model,
    train_stage,
    triplet_loss,
)


def brute_force_loss(anchors, positives, transformed, margin_t, margin_c):
    """Independent double-loop oracle over the similarity matrix."""
    a = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)
    p = positives / np.linalg.norm(positives, axis=1, keepdims=True)
    b = a.shape[0]
    terms = []
    for i in range(b):
        s_pos = float(a[i] @ p[i])
        for j in range(b):
            if j != i:
                terms.append(max(0.0, float(a[i] @ p[j]) - s_pos + margin_t))
    loss_t = float(np.mean(terms))
    loss_c = 0.0
    if transformed is not None:
        t = transformed / np.linalg.norm(transformed, axis=1, keepdims=True)
        loss_c = float(np.mean([max(0.0, float(a[i] @ t[i]) - float(a[i] @ p[i]) + margin_c) for i in range(b)]))
    return loss_t + loss_c


class TestTripletLoss:
    def test_equal_similarities_give_margin(self):
        assert triplet_loss(0.5, 0.5, 0.3) == pytest.approx(0.3)

    def test_hinged_to_zero(self):
        assert triplet_loss(0.9, 0.2, 0.3) == 0.0

    def test_active(self):
        assert triplet_loss(0.2, 0.9, 0.3) == pytest.approx(1.0)


class TestBatchLoss:
    def test_all_identical_embeddings(self, random_unit_rows):
        row = random_unit_rows(1, 8, 1)[0]
        mat = np.tile(row, (4, 1))
        batch = TripletBatch(anchors=mat, positives=mat, transformed=mat)
        assert batch_loss(batch, TrainConfig()) == pytest.approx(0.4, abs=1e-7)

    def test_separated_batch_is_zero(self):
        eye = np.eye(8)
        batch = TripletBatch(anchors=eye[:4], positives=eye[:4], transformed=eye[4:8])
        assert batch_loss(batch, TrainConfig()) == 0.0

    def test_b2_hand_computation(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        p = np.array([[0.8, 0.6], [0.6, 0.8]])
        batch = TripletBatch(anchors=a, positives=p)
        # s(a0,p0)=0.8 s(a0,p1)=0.6 s(a1,p1)=0.8 s(a1,p0)=0.6
        # each hinge: 0.6 - 0.8 + 0.3 = 0.1; mean = 0.1
        assert batch_loss(batch, TrainConfig()) == pytest.approx(0.1, abs=1e-7)

    def test_matches_brute_force(self, random_unit_rows):
        rng = np.random.default_rng(0)
        for trial in range(20):
            b = int(rng.integers(2, 10))
            d = int(rng.choice([4, 16]))
            anchors = random_unit_rows(b, d, 100 + trial)
            positives = random_unit_rows(b, d, 200 + trial)
            transformed = random_unit_rows(b, d, 300 + trial) if trial % 2 else None
            batch = TripletBatch(anchors=anchors, positives=positives, transformed=transformed)
            ours = batch_loss(batch, TrainConfig())
            oracle = brute_force_loss(anchors, positives, transformed, 0.3, 0.1)
            assert ours == pytest.approx(oracle, abs=1e-6)

    def test_rejects_singleton_batch(self):
        one = np.array([[1.0, 0.0]])
        with pytest.raises(ValueError, match="at least 2"):
            batch_loss(TripletBatch(anchors=one, positives=one), TrainConfig())

    def test_identity_transform_contributes_nothing(self, random_unit_rows):
        mat = random_unit_rows(5, 8, 3)
        anchors = random_unit_rows(5, 8, 4)
        with_t = TripletBatch(anchors=anchors, positives=mat, transformed=mat.copy())
        without = TripletBatch(anchors=anchors, positives=mat)
        cfg = TrainConfig(margin_c=0.0)
        assert batch_loss(with_t, cfg) == pytest.approx(batch_loss(without, cfg), abs=1e-12)

    def test_non_negative(self, random_unit_rows):
        for seed in range(10):
            batch = TripletBatch(
                anchors=random_unit_rows(6, 8, seed),
                positives=random_unit_rows(6, 8, seed + 50),
                transformed=random_unit_rows(6, 8, seed + 99),
            )
            assert batch_loss(batch, TrainConfig()) >= 0.0

    def test_hardest_negative_flag(self, random_unit_rows):
        anchors = random_unit_rows(4, 8, 7)
        positives = random_unit_rows(4, 8, 8)
        a = anchors
        p = positives
        hardest = []
        for i in range(4):
            s_pos = float(a[i] @ p[i])
            hardest.append(max(max(0.0, float(a[i] @ p[j]) - s_pos + 0.3) for j in range(4) if j != i))
        expected = float(np.mean(hardest))
        cfg = TrainConfig(hardest_negative=True)
        got = batch_loss(TripletBatch(anchors=anchors, positives=positives), cfg)
        assert got == pytest.approx(expected, abs=1e-7)

    def test_gradient_matches_finite_differences(self, random_unit_rows):
        anchors = torch.tensor(random_unit_rows(4, 6, 11), requires_grad=True)
        positives = torch.tensor(random_unit_rows(4, 6, 12), requires_grad=True)
        transformed = torch.tensor(random_unit_rows(4, 6, 13), requires_grad=True)
        total, _, _ = batch_loss_torch(anchors, positives, transformed, 0.3, 0.1)
        total.backward()

        rng = np.random.default_rng(0)
        for tensor in (anchors, positives, transformed):
            flat = tensor.detach().view(-1)
            grad = tensor.grad.view(-1)
            for idx in rng.choice(flat.numel(), size=6, replace=False):
                h = 1e-6
                orig = flat[idx].item()
                with torch.no_grad():
                    flat[idx] = orig + h
                    up = batch_loss_torch(anchors, positives, transformed, 0.3, 0.1)[0].item()
                    flat[idx] = orig - h
                    down = batch_loss_torch(anchors, positives, transformed, 0.3, 0.1)[0].item()
                    flat[idx] = orig
                fd = (up - down) / (2 * h)
                assert abs(fd - grad[idx].item()) <= 1e-3 * max(abs(fd), abs(grad[idx].item()), 1e-8)


class TestSchedule:
    def test_one_round_is_background_then_foreground(self):
        assert stage_schedule(1) == ["background", "foreground"]

    def test_zero_rounds_trains_background_only(self):
        assert stage_schedule(0) == ["background"]

    def test_two_rounds(self):
        assert stage_schedule(2) == ["background", "foreground", "background"]

    def test_reverse_order(self):
        assert stage_schedule(1, reverse_order=True) == ["foreground", "background"]


def small_cfg(tiny_encoder_config, **kw):
    defaults = dict(epochs=2, batch_size=4, lr=1e-3, encoder=tiny_encoder_config)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrainStage:
    def test_zero_epochs_leaves_weights_unchanged(self, eight_pairs, tiny_encoder_config):
        towers = TowerPair(
            background=create_tower(tiny_encoder_config, seed=0),
            foreground=create_tower(tiny_encoder_config, seed=1),
        )
        before = checkpoint_hash(towers.background)
        train_stage("background", towers, eight_pairs, small_cfg(tiny_encoder_config, epochs=0), seed=0)
        assert checkpoint_hash(towers.background) == before

    def test_frozen_tower_untouched(self, eight_pairs, tiny_encoder_config):
        towers = TowerPair(
            background=create_tower(tiny_encoder_config, seed=0),
            foreground=create_tower(tiny_encoder_config, seed=1),
        )
        fg_before = checkpoint_hash(towers.foreground)
        bg_before = checkpoint_hash(towers.background)
        train_stage("background", towers, eight_pairs, small_cfg(tiny_encoder_config), seed=0)
        assert checkpoint_hash(towers.foreground) == fg_before
        assert checkpoint_hash(towers.background) != bg_before

    def test_deterministic_given_seed(self, eight_pairs, tiny_encoder_config):
        hashes = []
        for _ in range(2):
            towers = TowerPair(
                background=create_tower(tiny_encoder_config, seed=0),
                foreground=create_tower(tiny_encoder_config, seed=1),
            )
            train_stage("background", towers, eight_pairs, small_cfg(tiny_encoder_config), seed=9)
            hashes.append(checkpoint_hash(towers.background))
        assert hashes[0] == hashes[1]

    def test_loss_decreases_on_small_set(self, tiny_encoder_config):
        from conftest import make_pairs

        pairs = make_pairs(16, seed0=400)
        cfg = small_cfg(tiny_encoder_config, epochs=13, batch_size=8, lr=2e-3)  # 26 steps
        log = []
        towers = TowerPair(
            background=create_tower(tiny_encoder_config, seed=0),
            foreground=create_tower(tiny_encoder_config, seed=1),
        )
        train_stage("background", towers, pairs, cfg, seed=1, log=log)
        first = np.mean([r["total"] for r in log[:2]])
        last = np.mean([r["total"] for r in log[-2:]])
        assert last < first

    def test_divergence_aborts(self, eight_pairs, tiny_encoder_config, monkeypatch):
        import gala.training as training_mod

        def poisoned(*args, **kwargs):
            nan = torch.tensor(float("nan"))
            return nan, nan, nan

        monkeypatch.setattr(training_mod, "batch_loss_torch", poisoned)
        towers = TowerPair(
            background=create_tower(tiny_encoder_config, seed=0),
            foreground=create_tower(tiny_encoder_config, seed=1),
        )
        with pytest.raises(TrainingDiverged, match="diverged"):
            train_stage("background", towers, eight_pairs, small_cfg(tiny_encoder_config), seed=0)


class TestAlternatingTrain:
    def test_zero_rounds_keeps_foreground_at_init(self, eight_pairs, tiny_encoder_config):
        cfg = small_cfg(tiny_encoder_config, rounds=0, epochs=1)
        towers = alternating_train(eight_pairs, cfg, seed=5)
        init_fg = create_tower(tiny_encoder_config, seed=5 + 1)
        assert checkpoint_hash(towers.foreground) == checkpoint_hash(init_fg)

    def test_one_round_trains_both(self, eight_pairs, tiny_encoder_config):
        cfg = small_cfg(tiny_encoder_config, rounds=1, epochs=1)
        log = []
        towers = alternating_train(eight_pairs, cfg, seed=5, log=log)
        stages = [r["stage"] for r in log]
        assert stages[0].endswith("background") and stages[-1].endswith("foreground")
        assert checkpoint_hash(towers.foreground) != checkpoint_hash(create_tower(tiny_encoder_config, seed=6))

    def test_joint_mode(self, eight_pairs, tiny_encoder_config):
        cfg = small_cfg(tiny_encoder_config, alternating=False, epochs=1)
        log = []
        towers = train_model(eight_pairs, cfg, seed=5, log=log)
        assert all(r["stage"].endswith("both") for r in log)
        assert checkpoint_hash(towers.background) != checkpoint_hash(create_tower(tiny_encoder_config, seed=5))


class TestScaledLr:
    def test_reference_setup_identity(self):
        assert scaled_lr(8e-5, 8, 40) == pytest.approx(8e-5)

    def test_single_device(self):
        assert scaled_lr(8e-5, 1, 40) == pytest.approx(1e-5)
