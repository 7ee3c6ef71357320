"""Scenario execution: data preparation, cost tables, the federated loop,
and CSV/echo outputs.

Every random stream is derived from the scenario seed with a fixed integer
tag, so runs are reproducible byte-for-byte and independent of scheduling.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .client import TrainingHyper
from .config import Configuration
from .costs import CostTable, DeviceProfile, build_cost_table, estimate_time
from .data import generate_synthetic_dataset, load_idx, partition_data
from .model import ModelTopology, init_model, make_topology
from .scenario import Scenario, SyntheticDataConfig, load_scenario
from .server import (ContributionRecord, DeviceState, FederationSetup,
                     MetricsRecord, run_federation)

# rng stream tags (kept distinct from round numbers by the tuple position)
_TAG_MODEL, _TAG_TRAIN_DATA, _TAG_TEST_DATA, _TAG_PARTITION = 11, 12, 13, 14

METRICS_HEADER = "round,accuracy,mean_upload_bytes,accepted_updates"
CONTRIB_HEADER = "round,client_id,l,u,upload_bytes,elapsed_seconds,accepted"


def build_topology(sc: Scenario) -> ModelTopology:
    t = sc.topology
    blocks = [{"out_channels": b.out_channels, "kernel_size": b.kernel_size,
               "stride": b.stride, "has_bn": b.has_bn, "has_relu": b.has_relu,
               "padding": b.padding if b.padding is not None else b.kernel_size // 2}
              for b in t.conv_blocks]
    return make_topology(conv_blocks=blocks, image_size=t.image_size,
                         in_channels=t.in_channels, num_classes=t.num_classes)


def class_device_counts(fractions: list[float], num_devices: int) -> list[int]:
    """Largest-remainder apportionment of devices to classes."""
    raw = [f * num_devices for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = num_devices - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def resolve_deadline(sc: Scenario, topology: ModelTopology) -> float:
    """Deadline defaults to the fastest class's full-range round time."""
    if sc.round_deadline_seconds is not None:
        return sc.round_deadline_seconds
    full = Configuration(0, topology.last_index)
    return min(estimate_time(device_profile(c), topology, full, sc.batch_size,
                             sc.batches_per_round, sc.quantize)
               for c in sc.device_classes)


def device_profile(cls) -> DeviceProfile:
    return DeviceProfile(name=cls.name, float_mac_rate=cls.float_mac_rate,
                         quant_cost_factor=cls.quant_cost_factor,
                         overhead_per_batch=cls.overhead_per_batch)


def _load_dataset(sc: Scenario):
    d = sc.dataset
    if isinstance(d, SyntheticDataConfig):
        train_rng = np.random.default_rng([sc.seed, _TAG_TRAIN_DATA])
        test_rng = np.random.default_rng([sc.seed, _TAG_TEST_DATA])
        train_x, train_y, templates = generate_synthetic_dataset(
            d.classes, d.train_samples, d.image_size, d.channels,
            d.class_separation, d.noise_sigma, train_rng)
        # test samples share the training templates but fresh noise
        noise = test_rng.standard_normal(
            (d.test_samples, d.channels, d.image_size, d.image_size)).astype(np.float32)
        base, extra = divmod(d.test_samples, d.classes)
        counts = [base + (1 if k < extra else 0) for k in range(d.classes)]
        test_y = np.repeat(np.arange(d.classes), counts)
        test_y = test_y[test_rng.permutation(d.test_samples)].astype(np.int64)
        test_x = templates[test_y] + np.float32(d.noise_sigma) * noise
        return train_x, train_y, test_x, test_y
    train_x, train_y = load_idx(d.train_images, d.train_labels)
    test_x, test_y = load_idx(d.test_images, d.test_labels)
    return train_x, train_y, test_x, test_y


def build_setup(sc: Scenario) -> FederationSetup:
    topology = build_topology(sc)
    train_x, train_y, test_x, test_y = _load_dataset(sc)
    if sc.num_devices * sc.shard_size > train_x.shape[0]:
        raise ValueError("training data too small for the requested shards")

    shards = partition_data(train_x.shape[0], sc.num_devices, sc.shard_size,
                            np.random.default_rng([sc.seed, _TAG_PARTITION]))
    deadline = resolve_deadline(sc, topology)
    counts = class_device_counts([c.fraction for c in sc.device_classes], sc.num_devices)

    tables: dict[str, CostTable] = {}
    devices: list[DeviceState] = []
    cid = 0
    for cls, count in zip(sc.device_classes, counts):
        if cls.name not in tables:
            tables[cls.name] = build_cost_table(device_profile(cls), topology, sc.batch_size,
                                                sc.batches_per_round, sc.quantize)
        budget = np.inf if cls.upload_budget_bytes is None else cls.upload_budget_bytes
        for _ in range(count):
            idx = shards[cid]
            devices.append(DeviceState(
                client_id=cid, table=tables[cls.name],
                shard_x=train_x[idx], shard_y=train_y[idx],
                upload_budget=budget,
                upload_budget_range=cls.upload_budget_range))
            cid += 1

    hyper = TrainingHyper(learning_rate=sc.learning_rate, batch_size=sc.batch_size,
                          batches_per_round=sc.batches_per_round,
                          calibration_batch_size=sc.calibration_batch_size,
                          quantize=sc.quantize)
    model = init_model(topology, seed=[sc.seed, _TAG_MODEL])
    return FederationSetup(topology=topology, model=model, devices=devices,
                           devices_per_round=sc.devices_per_round, rounds=sc.rounds,
                           deadline_seconds=deadline, hyper=hyper,
                           test_x=test_x, test_y=test_y, seed=sc.seed,
                           straggler_noise_sigma=sc.straggler_noise_sigma)


def metrics_to_csv(metrics: list[MetricsRecord]) -> str:
    lines = [METRICS_HEADER]
    lines += [f"{m.round},{m.accuracy:.6f},{m.mean_upload_bytes:.2f},{m.accepted_updates}"
              for m in metrics]
    return "\n".join(lines) + "\n"


def contributions_to_csv(rows: list[ContributionRecord]) -> str:
    lines = [CONTRIB_HEADER]
    lines += [f"{c.round},{c.client_id},{c.low},{c.high},{c.upload_bytes},"
              f"{c.elapsed_seconds:.6f},{int(c.accepted)}" for c in rows]
    return "\n".join(lines) + "\n"


@dataclass
class SimulationResult:
    resolved_scenario: dict
    metrics: list[MetricsRecord]
    contributions: list[ContributionRecord]
    final_accuracy: float

    @property
    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)

    @property
    def contributions_csv(self) -> str:
        return contributions_to_csv(self.contributions)


def run_scenario(sc: Scenario, seed_override: int | None = None) -> SimulationResult:
    """Validate, resolve defaults, run all rounds, and collect the outputs.

    The resolved scenario echoes the exact configuration used (deadline made
    explicit, seed override applied); re-running it reproduces the outputs."""
    if seed_override is not None:
        sc = sc.model_copy(update={"seed": seed_override})
    setup = build_setup(sc)
    resolved = sc.model_copy(update={"round_deadline_seconds": setup.deadline_seconds})
    state = run_federation(setup)
    return SimulationResult(
        resolved_scenario=resolved.model_dump(mode="json"),
        metrics=state.metrics,
        contributions=state.contributions,
        final_accuracy=state.metrics[-1].accuracy if state.metrics else 0.0,
    )


def run_scenario_to_dir(sc: Scenario, out_dir: str,
                        seed_override: int | None = None) -> SimulationResult:
    result = run_scenario(sc, seed_override)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as f:
        f.write(result.metrics_csv)
    with open(os.path.join(out_dir, "contributions.csv"), "w", encoding="utf-8") as f:
        f.write(result.contributions_csv)
    with open(os.path.join(out_dir, "scenario_resolved.json"), "w", encoding="utf-8") as f:
        json.dump(result.resolved_scenario, f, indent=2)
        f.write("\n")
    return result


def run_scenario_file(path: str, out_dir: str,
                      seed_override: int | None = None) -> SimulationResult:
    return run_scenario_to_dir(load_scenario(path), out_dir, seed_override)
