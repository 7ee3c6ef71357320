"""Synthetic data generation, IDX parsing, partitioning, and evaluation."""

import struct

import numpy as np
import pytest

from fedfreeze.data import (IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, IdxFormatError,
                            encode_idx, generate_synthetic_dataset, load_idx,
                            nearest_template_labels, partition_data, write_idx)
from fedfreeze.engine import model_forward, plan_evaluation
from fedfreeze.evaluate import evaluate_accuracy
from fedfreeze.model import init_model

from conftest import random_batch, tiny_topology


class TestSynthetic:
    def test_noiseless_samples_equal_templates(self):
        rng = np.random.default_rng(0)
        x, y, templates = generate_synthetic_dataset(2, 20, 8, 1, 1.5, 0.0, rng)
        np.testing.assert_array_equal(x, templates[y])
        assert (nearest_template_labels(x, templates) == y).all()

    def test_labels_balanced_within_one(self):
        rng = np.random.default_rng(1)
        _, y, _ = generate_synthetic_dataset(7, 100, 8, 1, 1.0, 0.5, rng)
        counts = np.bincount(y, minlength=7)
        assert counts.max() - counts.min() <= 1

    def test_nearest_template_oracle_accuracy(self):
        rng = np.random.default_rng(2)
        x, y, templates = generate_synthetic_dataset(10, 1000, 16, 1, 2.0, 0.5, rng)
        acc = (nearest_template_labels(x, templates) == y).mean()
        assert acc >= 0.99

    def test_deterministic_per_seed(self):
        a = generate_synthetic_dataset(3, 30, 8, 1, 1.0, 0.4, np.random.default_rng(9))
        b = generate_synthetic_dataset(3, 30, 8, 1, 1.0, 0.4, np.random.default_rng(9))
        assert a[0].tobytes() == b[0].tobytes()
        assert (a[1] == b[1]).all()

    def test_invalid_params_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            generate_synthetic_dataset(1, 10, 8, 1, 1.0, 0.1, rng)
        with pytest.raises(ValueError):
            generate_synthetic_dataset(2, 0, 8, 1, 1.0, 0.1, rng)


class TestIdx:
    def test_hand_built_two_image_pair(self, tmp_path):
        images = struct.pack(">iiii", IDX_IMAGE_MAGIC, 2, 2, 2) + bytes(
            [0, 64, 128, 255, 10, 20, 30, 40])
        labels = struct.pack(">ii", IDX_LABEL_MAGIC, 2) + bytes([1, 0])
        ip, lp = tmp_path / "imgs", tmp_path / "lbls"
        ip.write_bytes(images)
        lp.write_bytes(labels)
        x, y = load_idx(str(ip), str(lp))
        assert x.shape == (2, 1, 2, 2)
        assert y.tolist() == [1, 0]
        np.testing.assert_allclose(x[0, 0, 0], [0.0, 64 / 255])
        np.testing.assert_allclose(x[0, 0, 1], [128 / 255, 1.0])

    def test_wrong_magic_rejected(self, tmp_path):
        ip, lp = tmp_path / "imgs", tmp_path / "lbls"
        ip.write_bytes(struct.pack(">iiii", 0xdead, 0, 2, 2))
        lp.write_bytes(struct.pack(">ii", IDX_LABEL_MAGIC, 0))
        with pytest.raises(IdxFormatError):
            load_idx(str(ip), str(lp))

    def test_truncated_rejected(self, tmp_path):
        ip, lp = tmp_path / "imgs", tmp_path / "lbls"
        ip.write_bytes(struct.pack(">iiii", IDX_IMAGE_MAGIC, 2, 2, 2) + bytes(3))
        lp.write_bytes(struct.pack(">ii", IDX_LABEL_MAGIC, 2) + bytes(2))
        with pytest.raises(IdxFormatError):
            load_idx(str(ip), str(lp))

    def test_count_mismatch_rejected(self, tmp_path):
        ip, lp = tmp_path / "imgs", tmp_path / "lbls"
        ip.write_bytes(struct.pack(">iiii", IDX_IMAGE_MAGIC, 1, 2, 2) + bytes(4))
        lp.write_bytes(struct.pack(">ii", IDX_LABEL_MAGIC, 2) + bytes(2))
        with pytest.raises(IdxFormatError):
            load_idx(str(ip), str(lp))

    def test_empty_set_ok(self, tmp_path):
        ip, lp = tmp_path / "imgs", tmp_path / "lbls"
        ip.write_bytes(struct.pack(">iiii", IDX_IMAGE_MAGIC, 0, 4, 4))
        lp.write_bytes(struct.pack(">ii", IDX_LABEL_MAGIC, 0))
        x, y = load_idx(str(ip), str(lp))
        assert x.shape == (0, 1, 4, 4) and y.shape == (0,)

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.uniform(-1, 2, (5, 1, 6, 6)).astype(np.float32)
        y = rng.integers(0, 4, 5)
        ip, lp = str(tmp_path / "i"), str(tmp_path / "l")
        write_idx(ip, lp, x, y)
        rx, ry = load_idx(ip, lp)
        assert rx.shape == x.shape
        assert (ry == y).all()
        assert rx.min() >= 0.0 and rx.max() <= 1.0

    def test_encode_multichannel_rejected(self):
        with pytest.raises(ValueError):
            encode_idx(np.zeros((2, 3, 4, 4), np.float32), np.zeros(2, np.int64))


class TestPartition:
    def test_full_disjoint_cover(self):
        shards = partition_data(50_000, 100, 500, np.random.default_rng(0))
        seen = np.concatenate(shards)
        assert len(shards) == 100
        assert all(len(s) == 500 for s in shards)
        assert len(np.unique(seen)) == 50_000

    def test_single_device(self):
        shards = partition_data(100, 1, 30, np.random.default_rng(1))
        assert len(shards) == 1 and len(shards[0]) == 30

    def test_pairwise_disjoint_exact_size(self):
        shards = partition_data(100, 4, 20, np.random.default_rng(2))
        sets = [set(s.tolist()) for s in shards]
        for i in range(4):
            assert len(sets[i]) == 20
            for j in range(i + 1, 4):
                assert not sets[i] & sets[j]

    def test_insufficient_data_rejected(self):
        with pytest.raises(ValueError):
            partition_data(99, 10, 10, np.random.default_rng(0))


class TestEvaluateAccuracy:
    def test_perfect_predictor(self):
        # label the samples with the model's own predictions
        topo = tiny_topology(num_classes=3)
        model = init_model(topo, seed=0)
        rng = np.random.default_rng(4)
        x, _ = random_batch(topo, 30, rng)
        logits, _ = model_forward(plan_evaluation(model, topo), x, training=False)
        y = logits.argmax(axis=1)
        assert evaluate_accuracy(model, topo, x, y) == 1.0

    def test_constant_logits_tie_break_lowest(self):
        topo = tiny_topology(num_classes=4)
        model = init_model(topo, seed=1)
        # zero conv weights and head -> logits constant
        for p in model.blocks:
            for name, arr in p.arrays().items():
                if name in ("conv_weight", "conv_bias", "fc_weight", "fc_bias", "bn_beta"):
                    setattr(p, name, np.zeros_like(arr))
        rng = np.random.default_rng(5)
        x, _ = random_batch(topo, 40, rng)
        y = np.array([i % 4 for i in range(40)])
        acc = evaluate_accuracy(model, topo, x, y)
        assert acc == (y == 0).mean()

    def test_counting_matches_manual(self, rng):
        topo = tiny_topology(num_classes=5)
        model = init_model(topo, seed=2)
        x, y = random_batch(topo, 64, rng)
        logits, _ = model_forward(plan_evaluation(model, topo), x, training=False)
        manual = 0
        for row, label in zip(logits, y):
            best = 0
            for k in range(1, 5):
                if row[k] > row[best]:
                    best = k
            manual += int(best == label)
        assert evaluate_accuracy(model, topo, x, y) == manual / 64

    def test_empty_rejected(self):
        topo = tiny_topology()
        model = init_model(topo, seed=3)
        with pytest.raises(ValueError):
            evaluate_accuracy(model, topo, np.zeros((0, 1, 8, 8), np.float32),
                              np.zeros(0, np.int64))
