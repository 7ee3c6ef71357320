"""Per-device round logic: pick a feasible maximal configuration from the
cost table, then run the local training round under it.

Devices never talk to each other; everything here works off the device's own
cost table, constraints, data shard, and RNG stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .config import Configuration
from .costs import CostEntry, CostTable, update_size
from .engine import model_backward, model_forward
from .freezing import apply_configuration, calibrate_round
from .model import BlockParams, ModelParams, ModelTopology

BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class RoundConstraints:
    """Round deadline T (seconds) and upload budget S (bytes)."""
    deadline_seconds: float
    upload_budget_bytes: float

    def __post_init__(self):
        if self.deadline_seconds <= 0:
            raise ValueError("deadline must be > 0")
        if self.upload_budget_bytes < 0:
            raise ValueError("upload budget must be >= 0")


@dataclass
class TrainingHyper:
    learning_rate: float
    batch_size: int
    batches_per_round: int
    calibration_batch_size: int
    quantize: bool = True


@dataclass
class UpdateMessage:
    """Trained-block parameters a device uploads at the end of a round."""
    client_id: int
    trained_range: Configuration
    blocks: dict[int, BlockParams]
    data_count: int
    upload_bytes: int
    elapsed_seconds: float = 0.0
    step_losses: list[float] = field(default_factory=list)


def feasible_set(table: CostTable, constraints: RoundConstraints) -> list[CostEntry]:
    return [e for e in table
            if e.time_seconds <= constraints.deadline_seconds
            and e.size_bytes <= constraints.upload_budget_bytes]


def maximal_set(entries: list[CostEntry]) -> list[CostEntry]:
    """Drop every configuration strictly contained in another feasible one."""
    return [e for e in entries
            if not any(e.config.is_proper_subset(o.config) for o in entries)]


def select_configuration(table: CostTable, constraints: RoundConstraints,
                         rng: np.random.Generator) -> Configuration | None:
    """Uniform random choice among feasible maximal configurations.

    Returns None (sit out this round) when nothing is feasible.
    """
    candidates = maximal_set(feasible_set(table, constraints))
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))].config


def _batch_stream(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    """Yield `steps` index batches, reshuffling whenever a pass is exhausted.

    Batches are full-sized; a shard smaller than the batch size yields the
    whole shard each step.
    """
    size = min(batch_size, n)
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + size > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos:pos + size]
        pos += size


def local_train_round(model: ModelParams, topology: ModelTopology, config: Configuration,
                      data_x: np.ndarray, data_y: np.ndarray,
                      hyper: TrainingHyper, rng: np.random.Generator,
                      client_id: int = 0) -> UpdateMessage:
    """Calibrate, apply the configuration, and run SGD over local mini-batches.

    The received model is never mutated; only the trained-block copies inside
    the partition change. The update ships exactly the trained blocks
    (parameters plus refreshed BN running statistics).
    """
    if config.empty:
        raise ValueError("cannot train an empty configuration")
    n = data_x.shape[0]
    if n == 0:
        raise ValueError("local data must be non-empty")

    calib_idx = rng.choice(n, size=min(hyper.calibration_batch_size, n), replace=False)
    stats = calibrate_round(model, topology, config, data_x[calib_idx], data_y[calib_idx])
    part = apply_configuration(model, topology, config, stats, quantize=hyper.quantize)

    losses = []
    for idx in _batch_stream(n, hyper.batch_size, hyper.batches_per_round, rng):
        logits, cache = model_forward(part.plan, data_x[idx], training=True)
        loss, grad_logits = ops.softmax_cross_entropy(logits, data_y[idx])
        losses.append(loss)
        grads = model_backward(part.plan, cache, grad_logits)
        for i, block_grads in grads.by_block.items():
            p = part.w_train[i]
            for name, g in block_grads.items():
                setattr(p, name, ops.sgd_step(getattr(p, name), g, hyper.learning_rate))
        for i in config.indices():
            c = cache.entries[i]
            p = part.w_train[i]
            if p.bn_running_mean is not None and c.batch_mean is not None:
                p.bn_running_mean = ((1 - BN_MOMENTUM) * p.bn_running_mean
                                     + BN_MOMENTUM * c.batch_mean).astype(p.bn_running_mean.dtype)
                p.bn_running_var = ((1 - BN_MOMENTUM) * p.bn_running_var
                                    + BN_MOMENTUM * c.batch_var).astype(p.bn_running_var.dtype)

    return UpdateMessage(
        client_id=client_id,
        trained_range=config,
        blocks=part.w_train,
        data_count=n,
        upload_bytes=update_size(topology, config),
        step_losses=losses,
    )


def run_device_round(client_id: int, model: ModelParams, topology: ModelTopology,
                     table: CostTable, constraints: RoundConstraints,
                     data_x: np.ndarray, data_y: np.ndarray,
                     hyper: TrainingHyper, rng: np.random.Generator,
                     straggler_noise_sigma: float = 0.0) -> UpdateMessage | None:
    """Full device round: select a configuration, train, stamp the simulated
    elapsed time (cost-table estimate, optionally log-normal inflated).
    Returns None when the device sits out."""
    config = select_configuration(table, constraints, rng)
    if config is None:
        return None
    msg = local_train_round(model, topology, config, data_x, data_y, hyper, rng,
                            client_id=client_id)
    estimate = next(e.time_seconds for e in table if e.config == config)
    noise = float(np.exp(straggler_noise_sigma * rng.standard_normal())) \
        if straggler_noise_sigma > 0 else 1.0
    msg.elapsed_seconds = estimate * noise
    return msg
