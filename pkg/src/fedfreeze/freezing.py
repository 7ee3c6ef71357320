"""Per-round calibration of frozen blocks and application of a configuration.

At the start of a round the device runs one full-precision pass over a
calibration batch to estimate, for every frozen block, the BN statistics and
the activation quantization ranges; frozen blocks above the trained range
additionally get an upstream-gradient scale from one backward sweep. The
statistics stay fixed for the whole round. apply_configuration then splits
the model into full-precision trained blocks and fused/quantized frozen
blocks and emits the execution plan for the round.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .config import BlockType, Configuration, classify_blocks
from .engine import BlockExec, BlockMode, ExecutionPlan
from .model import BlockParams, ModelParams, ModelTopology
from .quantization import (QuantParams, QuantizedBlock, affine_qparams,
                           build_quantized_block, fuse_conv_bn, symmetric_qparams)


@dataclass
class CalibrationStats:
    """Per-round statistics estimated from one calibration batch."""
    config: Configuration
    boundary_qp: dict[int, QuantParams] = field(default_factory=dict)   # activation entering block i
    bn_mean: dict[int, np.ndarray] = field(default_factory=dict)        # frozen conv blocks with BN
    bn_var: dict[int, np.ndarray] = field(default_factory=dict)
    grad_qp: dict[int, QuantParams] = field(default_factory=dict)       # frozen blocks above the range


@dataclass
class FrozenBlockState:
    """Read-only state of one frozen block for the round."""
    params: BlockParams                     # original parameters, never mutated
    qblock: QuantizedBlock | None = None    # int8 kernel when quantization is on
    mean: np.ndarray | None = None          # fixed statistics for float execution
    var: np.ndarray | None = None


@dataclass
class PartitionedModel:
    """Round-scoped split of the model into trained and frozen halves."""
    config: Configuration
    block_types: list[BlockType]
    w_train: dict[int, BlockParams]
    w_quant: dict[int, FrozenBlockState]
    plan: ExecutionPlan


def calibrate_round(model: ModelParams, topology: ModelTopology, config: Configuration,
                    batch_x: np.ndarray, batch_y: np.ndarray) -> CalibrationStats:
    """One full-precision forward (and, when needed, backward) pass recording
    frozen-block BN statistics, activation ranges, and gradient scales.

    Conv blocks normalize with the calibration batch's own statistics, which
    is exactly what the frozen fixed-stats path will reproduce on this batch.
    """
    if batch_x.size == 0:
        raise ValueError("calibration batch must be non-empty")
    types = classify_blocks(config, topology.n_blocks)
    stats = CalibrationStats(config=config)

    # forward: record boundary ranges and frozen-block BN statistics
    h = batch_x
    back = []        # per block, what the gradient sweep needs
    for i, spec in enumerate(topology.blocks):
        p = model.blocks[i]
        frozen = not types[i].trained
        if frozen and spec.has_conv:
            stats.boundary_qp.setdefault(i, affine_qparams(h.min(), h.max()))
        if spec.has_conv:
            x_shape = h.shape
            h = ops.conv2d_forward(h, p.conv_weight, p.conv_bias, spec.stride, spec.padding)
            if spec.has_bn:
                h, mean, var, _ = ops.batchnorm_forward(h, p.bn_gamma, p.bn_beta)
                if frozen:
                    stats.bn_mean[i] = mean
                    stats.bn_var[i] = var
            if spec.has_relu:
                mask = h > 0
                h = ops.relu(h)
            else:
                mask = None
            back.append({"x_shape": x_shape, "mask": mask})
            if frozen:
                stats.boundary_qp[i + 1] = affine_qparams(h.min(), h.max())
        else:
            back.append({"x_shape": h.shape})
            h, _ = ops.output_block_forward(h, p.fc_weight, p.fc_bias)

    # backward down to the top of the trained range, for gradient scales
    d_blocks = [i for i, t in enumerate(types) if t == BlockType.D_FROZEN_AFTER]
    if d_blocks:
        _, g = ops.softmax_cross_entropy(h, batch_y)
        for i in reversed(d_blocks):
            spec, p = topology.blocks[i], model.blocks[i]
            if not spec.has_conv:
                g, _, _ = ops.output_block_backward(g, None, p.fc_weight, back[i]["x_shape"])
                continue
            if spec.has_relu:
                g = np.where(back[i]["mask"], g, np.zeros((), dtype=g.dtype))
            stats.grad_qp[i] = symmetric_qparams(np.abs(g).max())
            if spec.has_bn:
                scale = p.bn_gamma / np.sqrt(stats.bn_var[i] + np.asarray(ops.BN_EPS, dtype=g.dtype))
                g = g * scale.astype(g.dtype)[None, :, None, None]
            g = ops.conv2d_backward_input(g, p.conv_weight, back[i]["x_shape"],
                                          spec.stride, spec.padding)
    return stats


def _identity_stats(channels: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype)


def apply_configuration(model: ModelParams, topology: ModelTopology, config: Configuration,
                        stats: CalibrationStats, quantize: bool = True) -> PartitionedModel:
    """Split the model per the configuration and build the round's plan.

    Trained blocks are deep-copied into w_train (the incoming model is never
    mutated); frozen conv blocks are fused with the calibrated statistics and
    quantized when quantization is enabled. Raises if the statistics were
    calibrated for a different configuration.
    """
    if stats.config != config:
        raise RuntimeError(f"calibration is stale: stats for {stats.config}, "
                           f"applying {config}")
    types = classify_blocks(config, topology.n_blocks)
    w_train: dict[int, BlockParams] = {}
    w_quant: dict[int, FrozenBlockState] = {}
    entries: list[BlockExec] = []

    for i, spec in enumerate(topology.blocks):
        p = model.blocks[i]
        t = types[i]
        if t.trained:
            w_train[i] = p.copy()
            entries.append(BlockExec(
                index=i, spec=spec, block_type=t, mode=BlockMode.TRAIN,
                params=w_train[i], needs_param_grad=True,
                needs_input_grad=(t == BlockType.B_SUBSEQUENT_TRAINED)))
            continue

        needs_igrad = (t == BlockType.D_FROZEN_AFTER)
        if not spec.has_conv:
            w_quant[i] = FrozenBlockState(params=p)
            entries.append(BlockExec(
                index=i, spec=spec, block_type=t, mode=BlockMode.FROZEN_FLOAT,
                params=p, needs_input_grad=needs_igrad))
            continue

        if spec.has_bn:
            mean, var = stats.bn_mean[i], stats.bn_var[i]
        else:
            mean, var = _identity_stats(spec.out_channels, p.conv_weight.dtype)
        if quantize:
            if spec.has_bn:
                fused_w, fused_b = fuse_conv_bn(p.conv_weight, p.conv_bias, p.bn_gamma,
                                                p.bn_beta, mean, var, ops.BN_EPS)
            else:
                fused_w, fused_b = p.conv_weight, p.conv_bias
            qblock = build_quantized_block(
                fused_w, fused_b,
                in_qp=stats.boundary_qp[i], out_qp=stats.boundary_qp[i + 1],
                stride=spec.stride, padding=spec.padding, has_relu=spec.has_relu,
                grad_qp=stats.grad_qp.get(i))
            w_quant[i] = FrozenBlockState(params=p, qblock=qblock, mean=mean, var=var)
            entries.append(BlockExec(
                index=i, spec=spec, block_type=t, mode=BlockMode.FROZEN_QUANT,
                qblock=qblock, needs_input_grad=needs_igrad))
        else:
            w_quant[i] = FrozenBlockState(params=p, mean=mean, var=var)
            entries.append(BlockExec(
                index=i, spec=spec, block_type=t, mode=BlockMode.FROZEN_FLOAT,
                params=p, fixed_mean=mean, fixed_var=var,
                needs_input_grad=needs_igrad))

    plan = ExecutionPlan(topology=topology, entries=entries)
    return PartitionedModel(config=config, block_types=types,
                            w_train=w_train, w_quant=w_quant, plan=plan)
