"""End-to-end scenario runs: outputs, determinism, and the echo round trip."""

import json

import numpy as np
import pytest

from fedfreeze.data import generate_synthetic_dataset, write_idx
from fedfreeze.scenario import (ConvBlockConfig, DeviceClassConfig, Scenario,
                                SyntheticDataConfig, TopologyConfig)
from fedfreeze.simulation import (METRICS_HEADER, run_scenario, run_scenario_file,
                                  run_scenario_to_dir)


def toy_scenario(**overrides) -> Scenario:
    base = dict(
        topology=TopologyConfig(
            image_size=8, in_channels=1, num_classes=3,
            conv_blocks=[ConvBlockConfig(out_channels=4),
                         ConvBlockConfig(out_channels=4, kernel_size=2,
                                         stride=2, padding=0),
                         ConvBlockConfig(out_channels=8)]),
        dataset=SyntheticDataConfig(classes=3, train_samples=240, test_samples=60,
                                    image_size=8, channels=1,
                                    class_separation=1.5, noise_sigma=0.5),
        num_devices=8,
        devices_per_round=3,
        shard_size=30,
        device_classes=[
            DeviceClassConfig(name="fast", fraction=0.5, float_mac_rate=1e8,
                              quant_cost_factor=0.5),
            DeviceClassConfig(name="slow", fraction=0.5, float_mac_rate=2.5e7,
                              quant_cost_factor=0.5),
        ],
        rounds=3,
        learning_rate=0.02,
        batch_size=8,
        batches_per_round=2,
        calibration_batch_size=8,
        seed=0,
    )
    base.update(overrides)
    return Scenario(**base)


class TestRunScenario:
    def test_three_rounds_three_rows(self):
        result = run_scenario(toy_scenario())
        lines = result.metrics_csv.strip().split("\n")
        assert lines[0] == METRICS_HEADER
        assert len(lines) == 4
        assert 0.0 <= result.final_accuracy <= 1.0

    def test_deterministic_byte_identical(self):
        a = run_scenario(toy_scenario())
        b = run_scenario(toy_scenario())
        assert a.metrics_csv == b.metrics_csv
        assert a.contributions_csv == b.contributions_csv

    def test_seed_override_changes_run(self):
        a = run_scenario(toy_scenario())
        b = run_scenario(toy_scenario(), seed_override=123)
        assert b.resolved_scenario["seed"] == 123
        assert a.metrics_csv != b.metrics_csv

    def test_echo_round_trip(self, tmp_path):
        result = run_scenario_to_dir(toy_scenario(), str(tmp_path / "out"))
        echo_path = tmp_path / "out" / "scenario_resolved.json"
        again = run_scenario_file(str(echo_path), str(tmp_path / "out2"))
        assert again.metrics_csv == result.metrics_csv
        assert again.contributions_csv == result.contributions_csv
        # the echo pins the resolved deadline
        echoed = json.loads(echo_path.read_text())
        assert echoed["round_deadline_seconds"] is not None

    def test_output_files_written(self, tmp_path):
        out = tmp_path / "runout"
        result = run_scenario_to_dir(toy_scenario(), str(out))
        assert (out / "metrics.csv").read_text() == result.metrics_csv
        assert (out / "contributions.csv").read_text() == result.contributions_csv

    def test_constrained_devices_upload_less(self):
        # slow devices with a tight budget pick smaller ranges than the cap
        full_bytes = 4 * (4 * 9 + 4 + 16 + 4 * 4 * 9 + 4 + 16 + 8 * 4 * 9 + 8 + 32 + 27)
        sc = toy_scenario(device_classes=[
            DeviceClassConfig(name="free", fraction=0.5, float_mac_rate=1e8,
                              quant_cost_factor=0.5),
            DeviceClassConfig(name="tight", fraction=0.5, float_mac_rate=1e8,
                              quant_cost_factor=0.5, upload_budget_bytes=800.0),
        ], rounds=2)
        result = run_scenario(sc)
        tight_ids = set(range(4, 8))
        for c in result.contributions:
            if c.client_id in tight_ids and c.accepted:
                assert c.upload_bytes <= 800

    def test_round_varying_budget_draws(self):
        sc = toy_scenario(device_classes=[
            DeviceClassConfig(name="vary", fraction=1.0, float_mac_rate=1e8,
                              quant_cost_factor=0.5,
                              upload_budget_range=(500.0, 4000.0)),
        ], rounds=4)
        result = run_scenario(sc)
        uploads = {c.upload_bytes for c in result.contributions if c.accepted}
        assert len(uploads) > 1      # different draws led to different ranges

    def test_idx_dataset_run(self, tmp_path):
        rng = np.random.default_rng(0)
        x, y, _ = generate_synthetic_dataset(3, 240, 8, 1, 2.0, 0.3, rng)
        tx, ty, _ = generate_synthetic_dataset(3, 60, 8, 1, 2.0, 0.3, rng)
        paths = {k: str(tmp_path / k) for k in
                 ("train_images", "train_labels", "test_images", "test_labels")}
        write_idx(paths["train_images"], paths["train_labels"], x, y)
        write_idx(paths["test_images"], paths["test_labels"], tx, ty)
        sc = toy_scenario(dataset={"kind": "idx_files", **paths}, rounds=1)
        result = run_scenario(sc)
        assert len(result.metrics) == 1
