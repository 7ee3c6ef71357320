"""Federated round loop: device selection, broadcast, straggler discard, and
per-block weighted partial aggregation.

Aggregation weights each contribution by the device's local data count, so
when every update covers every block the result degenerates to classic
data-size-weighted parameter averaging. Blocks trained by nobody in a round
keep their previous values bit-for-bit. Updates are accumulated in float64
in ascending client-id order and stored back at the model's dtype, making
the result independent of arrival order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .client import (RoundConstraints, TrainingHyper, UpdateMessage,
                     run_device_round)
from .costs import CostTable
from .evaluate import evaluate_accuracy
from .model import BlockParams, ModelParams, ModelTopology


def select_devices(n_devices: int, k: int, rng: np.random.Generator) -> list[int]:
    """Uniform random k-subset of device ids, returned in ascending order."""
    if k > n_devices:
        raise ValueError(f"cannot select {k} of {n_devices} devices")
    return sorted(int(i) for i in rng.choice(n_devices, size=k, replace=False))


def _weighted_block_average(blocks: list[tuple[BlockParams, int]]) -> BlockParams:
    total = float(sum(w for _, w in blocks))
    out = BlockParams()
    names = blocks[0][0].arrays().keys()
    for name in names:
        ref = getattr(blocks[0][0], name)
        acc = np.zeros(ref.shape, dtype=np.float64)
        for p, w in blocks:
            arr = getattr(p, name)
            if arr is None or arr.shape != ref.shape:
                raise ValueError(f"update shape mismatch on {name}")
            acc += float(w) * arr.astype(np.float64)
        setattr(out, name, (acc / total).astype(ref.dtype))
    return out


def fedavg_aggregate(updates: list[tuple[ModelParams, int]]) -> ModelParams:
    """Data-size-weighted average of full models."""
    if not updates:
        raise ValueError("fedavg needs at least one update")
    n_blocks = len(updates[0][0])
    if any(len(m) != n_blocks for m, _ in updates):
        raise ValueError("updates disagree on block count")
    return ModelParams(blocks=[
        _weighted_block_average([(m.blocks[i], w) for m, w in updates])
        for i in range(n_blocks)
    ])


def partial_aggregate(prev: ModelParams, updates: list[UpdateMessage]) -> ModelParams:
    """Per-block weighted average over exactly the devices that trained the
    block; untrained blocks keep the previous global values."""
    ordered = sorted(updates, key=lambda u: u.client_id)
    blocks = []
    for i in range(len(prev)):
        contribs = [(u.blocks[i], u.data_count) for u in ordered if i in u.blocks]
        if contribs:
            blocks.append(_weighted_block_average(contribs))
        else:
            blocks.append(prev.blocks[i].copy())
    return ModelParams(blocks=blocks)


@dataclass
class DeviceState:
    """Server-side registry entry for one simulated device."""
    client_id: int
    table: CostTable
    shard_x: np.ndarray
    shard_y: np.ndarray
    upload_budget: float                      # bytes; inf = unconstrained
    upload_budget_range: tuple[float, float] | None = None


@dataclass
class FederationSetup:
    topology: ModelTopology
    model: ModelParams
    devices: list[DeviceState]
    devices_per_round: int
    rounds: int
    deadline_seconds: float
    hyper: TrainingHyper
    test_x: np.ndarray
    test_y: np.ndarray
    seed: int
    straggler_noise_sigma: float = 0.0


@dataclass
class MetricsRecord:
    round: int
    accuracy: float
    mean_upload_bytes: float
    accepted_updates: int


@dataclass
class ContributionRecord:
    round: int
    client_id: int
    low: int                       # -1 when the device sat out
    high: int
    upload_bytes: int
    elapsed_seconds: float
    accepted: bool


@dataclass
class FederationState:
    round_index: int
    model: ModelParams
    metrics: list[MetricsRecord] = field(default_factory=list)
    contributions: list[ContributionRecord] = field(default_factory=list)


def _draw_constraints(dev: DeviceState, deadline: float,
                      rng: np.random.Generator) -> RoundConstraints:
    if dev.upload_budget_range is not None:
        lo, hi = dev.upload_budget_range
        budget = float(rng.uniform(lo, hi))
    else:
        budget = dev.upload_budget
    return RoundConstraints(deadline_seconds=deadline, upload_budget_bytes=budget)


def run_federation(setup: FederationSetup) -> FederationState:
    """Run R synchronous rounds and record per-round metrics.

    Every random draw derives from (seed, round, client_id) streams, so the
    outcome does not depend on the order devices are processed in.
    """
    state = FederationState(round_index=0, model=setup.model.copy())
    for r in range(1, setup.rounds + 1):
        selection_rng = np.random.default_rng([setup.seed, r])
        selected = select_devices(len(setup.devices), setup.devices_per_round, selection_rng)

        accepted: list[UpdateMessage] = []
        for cid in selected:
            dev = setup.devices[cid]
            dev_rng = np.random.default_rng([setup.seed, r, cid])
            constraints = _draw_constraints(dev, setup.deadline_seconds, dev_rng)
            msg = run_device_round(cid, state.model, setup.topology, dev.table,
                                   constraints, dev.shard_x, dev.shard_y,
                                   setup.hyper, dev_rng,
                                   setup.straggler_noise_sigma)
            if msg is None:
                state.contributions.append(ContributionRecord(
                    round=r, client_id=cid, low=-1, high=-1,
                    upload_bytes=0, elapsed_seconds=0.0, accepted=False))
                continue
            ok = msg.elapsed_seconds <= constraints.deadline_seconds
            state.contributions.append(ContributionRecord(
                round=r, client_id=cid, low=msg.trained_range.low,
                high=msg.trained_range.high, upload_bytes=msg.upload_bytes,
                elapsed_seconds=msg.elapsed_seconds, accepted=ok))
            if ok:
                accepted.append(msg)

        if accepted:
            state.model = partial_aggregate(state.model, accepted)
        acc = evaluate_accuracy(state.model, setup.topology, setup.test_x, setup.test_y)
        mean_upload = (sum(m.upload_bytes for m in accepted) / len(accepted)
                       if accepted else 0.0)
        state.metrics.append(MetricsRecord(round=r, accuracy=acc,
                                           mean_upload_bytes=mean_upload,
                                           accepted_updates=len(accepted)))
        state.round_index = r
    return state
