"""Analytic cost model: MAC counts per block and pass, per-device training
time estimates per configuration, and device-independent upload sizes.

The model replaces wall-clock profiling. Backward-input and backward-param
MACs of a convolution are taken equal to its forward MACs (the standard
symmetric approximation); BN and ReLU are charged one MAC-equivalent per
output element. Frozen-path MACs are scaled by the device's relative cost
of an 8-bit MAC. Each non-empty configuration is charged one calibration
batch (full-precision forward over all blocks plus the intermediate-gradient
sweep down to the first trained block); without this uniform charge the
estimate would not be monotone in the trained range.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .config import BlockType, Configuration, classify_blocks, enumerate_contiguous
from .model import ModelTopology, parameter_count

BYTES_PER_PARAM = 4


@dataclass(frozen=True)
class DeviceProfile:
    """Compute characteristics of one device class."""
    name: str
    float_mac_rate: float              # full-precision MACs per second
    quant_cost_factor: float = 1.0     # relative cost of an 8-bit MAC
    overhead_per_batch: float = 0.0    # fixed seconds per processed batch

    def __post_init__(self):
        if self.float_mac_rate <= 0:
            raise ValueError(f"float_mac_rate must be > 0, got {self.float_mac_rate}")
        if not 0 < self.quant_cost_factor <= 1:
            raise ValueError(f"quant_cost_factor must be in (0, 1], got {self.quant_cost_factor}")


def conv2d_macs(batch: int, out_h: int, out_w: int, kernel: int,
                c_in: int, c_out: int) -> int:
    """B * H_out * W_out * k^2 * C_in * C_out multiply-accumulates."""
    return batch * out_h * out_w * kernel * kernel * c_in * c_out


@dataclass(frozen=True)
class BlockMacs:
    forward: int
    backward_input: int
    backward_param: int


def block_mac_counts(topology: ModelTopology, batch_size: int) -> list[BlockMacs]:
    """Per-block MACs for the forward pass, the input-gradient pass, and the
    parameter-gradient pass. Pooling contributes nothing."""
    counts = []
    sizes = topology.spatial_sizes()
    for i, spec in enumerate(topology.blocks):
        if spec.has_conv:
            oh, ow = sizes[i + 1]
            conv = conv2d_macs(batch_size, oh, ow, spec.kernel_size,
                               spec.in_channels, spec.out_channels)
            elems = batch_size * spec.out_channels * oh * ow
            pointwise_fwd = (int(spec.has_bn) + int(spec.has_relu)) * elems
            counts.append(BlockMacs(
                forward=conv + pointwise_fwd,
                backward_input=conv + pointwise_fwd,
                backward_param=conv + int(spec.has_bn) * elems,
            ))
        else:
            fc = batch_size * spec.in_features * spec.num_classes
            counts.append(BlockMacs(forward=fc, backward_input=fc, backward_param=fc))
    return counts


def estimate_time(profile: DeviceProfile, topology: ModelTopology, config: Configuration,
                  batch_size: int, batches_per_round: int, quantize: bool = True) -> float:
    """Seconds for one local round under the configuration.

    Per batch: C blocks run a (quantized) forward; the first trained block
    adds parameter gradients; later trained blocks add input gradients too;
    frozen blocks above the range run quantized forward + input gradients.
    Non-empty configurations add one full-precision calibration batch.
    """
    config.validate(topology.n_blocks)
    macs = block_mac_counts(topology, batch_size)
    types = classify_blocks(config, topology.n_blocks)
    qf = profile.quant_cost_factor if quantize else 1.0

    per_batch = 0.0
    for m, t in zip(macs, types):
        if t == BlockType.C_FROZEN_BEFORE:
            per_batch += m.forward * qf
        elif t == BlockType.A_FIRST_TRAINED:
            per_batch += m.forward + m.backward_param
        elif t == BlockType.B_SUBSEQUENT_TRAINED:
            per_batch += m.forward + m.backward_param + m.backward_input
        else:
            per_batch += (m.forward + m.backward_input) * qf

    total_macs = per_batch * batches_per_round
    batches = batches_per_round
    if not config.empty:
        calibration = sum(m.forward for m in macs)
        calibration += sum(m.backward_input for i, m in enumerate(macs) if i >= config.low)
        total_macs += calibration
        batches += 1
    return total_macs / profile.float_mac_rate + profile.overhead_per_batch * batches


def update_size(topology: ModelTopology, config: Configuration) -> int:
    """Upload bytes for the trained blocks: 4 bytes per parameter, counting
    conv weight/bias, BN gamma/beta and running mean/var, or the linear
    head's weight/bias. Device-independent; empty configuration is 0."""
    config.validate(topology.n_blocks)
    return BYTES_PER_PARAM * sum(parameter_count(topology.blocks[i])
                                 for i in config.indices())


@dataclass(frozen=True)
class CostEntry:
    config: Configuration
    time_seconds: float
    size_bytes: int


@dataclass
class CostTable:
    """Time and size for every configuration in the contiguous search space."""
    profile: DeviceProfile
    entries: list[CostEntry]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("l,u,time_seconds,size_bytes\n")
        for e in self.entries:
            buf.write(f"{e.config.low},{e.config.high},{e.time_seconds:.9g},{e.size_bytes}\n")
        return buf.getvalue()


def build_cost_table(profile: DeviceProfile, topology: ModelTopology,
                     batch_size: int, batches_per_round: int,
                     quantize: bool = True) -> CostTable:
    """Deterministic table over all non-empty contiguous configurations."""
    entries = [CostEntry(config=c,
                         time_seconds=estimate_time(profile, topology, c, batch_size,
                                                    batches_per_round, quantize),
                         size_bytes=update_size(topology, c))
               for c in enumerate_contiguous(topology.n_blocks)]
    return CostTable(profile=profile, entries=entries)
