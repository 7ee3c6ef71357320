"""Forward and backward passes over a chain of blocks under an execution plan.

A plan assigns each block a mode: TRAIN (full precision, batch-stats BN,
parameter gradients), FROZEN_FLOAT (full precision, fixed statistics, no
parameter gradients), or FROZEN_QUANT (fused int8 kernel). Consecutive
FROZEN_QUANT blocks exchange uint8 tensors directly; boundaries to float
blocks dequantize/quantize with the calibrated activation parameters.

Backward work follows the block roles: the pass walks from the output block
down to the first trained block and stops there. Frozen blocks above the
trained range contribute intermediate gradients only; the first trained
block contributes parameter gradients only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .config import BlockType
from .model import BlockParams, BlockSpec, ModelTopology
from .quantization import (QuantizedBlock, dequantize, quant_block_backward_input,
                           quant_block_forward, quantize_affine)


class BlockMode:
    TRAIN = "train"
    FROZEN_FLOAT = "frozen_float"
    FROZEN_QUANT = "frozen_quant"


@dataclass
class BlockExec:
    """One block's slot in an execution plan."""
    index: int
    spec: BlockSpec
    block_type: BlockType
    mode: str
    params: BlockParams | None = None          # TRAIN / FROZEN_FLOAT
    fixed_mean: np.ndarray | None = None       # FROZEN_FLOAT with BN
    fixed_var: np.ndarray | None = None
    qblock: QuantizedBlock | None = None       # FROZEN_QUANT
    needs_input_grad: bool = False
    needs_param_grad: bool = False


@dataclass
class ExecutionPlan:
    topology: ModelTopology
    entries: list[BlockExec]

    @property
    def first_trained(self) -> int | None:
        for e in self.entries:
            if e.needs_param_grad:
                return e.index
        return None


@dataclass
class _TrainCache:
    x_in: np.ndarray | None
    x_shape: tuple
    cols: np.ndarray | None = None              # im2col patches from forward
    bn_cache: ops.BatchNormCache | None = None
    batch_mean: np.ndarray | None = None
    batch_var: np.ndarray | None = None
    pre_relu: np.ndarray | None = None
    pooled: np.ndarray | None = None           # output block


@dataclass
class _FrozenCache:
    x_shape: tuple
    relu_mask: np.ndarray | None = None


@dataclass
class ForwardCache:
    plan: ExecutionPlan
    entries: list
    batch_size: int


@dataclass
class Gradients:
    """Per-block parameter gradients plus backward-pass instrumentation."""
    by_block: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    input_grad_blocks: list[int] = field(default_factory=list)


def plan_all_trained(model, topology: ModelTopology) -> ExecutionPlan:
    """Every block trained: type A at index 0, B elsewhere."""
    entries = []
    for i, spec in enumerate(topology.blocks):
        btype = BlockType.A_FIRST_TRAINED if i == 0 else BlockType.B_SUBSEQUENT_TRAINED
        entries.append(BlockExec(index=i, spec=spec, block_type=btype, mode=BlockMode.TRAIN,
                                 params=model.blocks[i],
                                 needs_input_grad=(i > 0), needs_param_grad=True))
    return ExecutionPlan(topology=topology, entries=entries)


def plan_evaluation(model, topology: ModelTopology) -> ExecutionPlan:
    """All blocks frozen in float with their running statistics; no gradients."""
    entries = []
    for i, spec in enumerate(topology.blocks):
        p = model.blocks[i]
        entries.append(BlockExec(index=i, spec=spec, block_type=BlockType.C_FROZEN_BEFORE,
                                 mode=BlockMode.FROZEN_FLOAT, params=p,
                                 fixed_mean=p.bn_running_mean, fixed_var=p.bn_running_var))
    return ExecutionPlan(topology=topology, entries=entries)


def _forward_train_block(entry: BlockExec, x: np.ndarray, training: bool, keep_cache: bool):
    spec, p = entry.spec, entry.params
    cache = _TrainCache(x_in=x if keep_cache else None, x_shape=x.shape)
    if spec.has_conv:
        if keep_cache:
            h, cache.cols = ops.conv2d_forward(x, p.conv_weight, p.conv_bias,
                                               spec.stride, spec.padding, return_cols=True)
        else:
            h = ops.conv2d_forward(x, p.conv_weight, p.conv_bias, spec.stride, spec.padding)
        if spec.has_bn:
            if training:
                h, mean, var, bn_cache = ops.batchnorm_forward(h, p.bn_gamma, p.bn_beta)
            else:
                h, mean, var, bn_cache = ops.batchnorm_forward(
                    h, p.bn_gamma, p.bn_beta,
                    p.bn_running_mean.astype(h.dtype), p.bn_running_var.astype(h.dtype))
            if keep_cache:
                cache.bn_cache = bn_cache
                cache.batch_mean, cache.batch_var = mean, var
        if spec.has_relu:
            if keep_cache:
                cache.pre_relu = h
            h = ops.relu(h)
    else:
        h, pooled = ops.output_block_forward(x, p.fc_weight, p.fc_bias)
        if keep_cache:
            cache.pooled = pooled
    return h, (cache if keep_cache else None)


def _forward_frozen_float_block(entry: BlockExec, x: np.ndarray, keep_cache: bool):
    spec, p = entry.spec, entry.params
    cache = _FrozenCache(x_shape=x.shape)
    if spec.has_conv:
        h = ops.conv2d_forward(x, p.conv_weight, p.conv_bias, spec.stride, spec.padding)
        if spec.has_bn:
            h, _, _, _ = ops.batchnorm_forward(h, p.bn_gamma, p.bn_beta,
                                               entry.fixed_mean.astype(h.dtype),
                                               entry.fixed_var.astype(h.dtype))
        if spec.has_relu:
            if keep_cache:
                cache.relu_mask = h > 0
            h = ops.relu(h)
    else:
        h, _ = ops.output_block_forward(x, p.fc_weight, p.fc_bias)
    return h, (cache if keep_cache else None)


def model_forward(plan: ExecutionPlan, x: np.ndarray, training: bool = True):
    """Run the block chain; returns (logits, ForwardCache).

    Caches are stored only for blocks that will do backward work (trained
    blocks and frozen blocks needing intermediate gradients); the frozen
    prefix stores nothing. With training=False, TRAIN blocks normalize with
    their running statistics (evaluation mode).
    """
    h: np.ndarray | None = x
    q_h: np.ndarray | None = None
    caches: list = [None] * len(plan.entries)
    for i, entry in enumerate(plan.entries):
        if entry.mode == BlockMode.FROZEN_QUANT:
            if q_h is None:
                q_h = quantize_affine(h, entry.qblock.in_qp)
                h = None
            x_shape = q_h.shape
            q_h, mask = quant_block_forward(entry.qblock, q_h)
            if entry.needs_input_grad:
                caches[i] = _FrozenCache(x_shape=x_shape, relu_mask=mask)
        else:
            if q_h is not None:
                prev_q = plan.entries[i - 1].qblock
                h = dequantize(q_h, prev_q.out_qp)
                q_h = None
            if entry.mode == BlockMode.TRAIN:
                keep = training and (entry.needs_param_grad or entry.needs_input_grad)
                h, caches[i] = _forward_train_block(entry, h, training, keep)
            else:
                keep = entry.needs_input_grad
                h, caches[i] = _forward_frozen_float_block(entry, h, keep)
    if q_h is not None:
        h = dequantize(q_h, plan.entries[-1].qblock.out_qp)
    return h, ForwardCache(plan=plan, entries=caches, batch_size=x.shape[0])


def _backward_train_block(entry: BlockExec, cache: _TrainCache, g: np.ndarray):
    spec, p = entry.spec, entry.params
    grads: dict[str, np.ndarray] = {}
    if spec.has_conv:
        if spec.has_relu:
            g = ops.relu_backward(cache.pre_relu, g)
        if spec.has_bn:
            g, grads["bn_gamma"], grads["bn_beta"] = ops.batchnorm_backward(cache.bn_cache, g)
        grad_in, grads["conv_weight"], grads["conv_bias"] = ops.conv2d_backward(
            cache.x_in, p.conv_weight, g, spec.stride, spec.padding,
            need_input_grad=entry.needs_input_grad)
    else:
        grad_in, grads["fc_weight"], grads["fc_bias"] = ops.output_block_backward(
            g, cache.pooled, p.fc_weight, cache.x_shape,
            need_input_grad=entry.needs_input_grad)
    return grad_in, grads


def _backward_frozen_float_block(entry: BlockExec, cache: _FrozenCache, g: np.ndarray):
    spec, p = entry.spec, entry.params
    if not spec.has_conv:
        grad_in, _, _ = ops.output_block_backward(g, None, p.fc_weight, cache.x_shape)
        return grad_in
    if spec.has_relu:
        g = np.where(cache.relu_mask, g, np.zeros((), dtype=g.dtype))
    if spec.has_bn:
        scale = p.bn_gamma / np.sqrt(entry.fixed_var + np.asarray(ops.BN_EPS, dtype=g.dtype))
        g = g * scale.astype(g.dtype)[None, :, None, None]
    return ops.conv2d_backward_input(g, p.conv_weight, cache.x_shape,
                                     spec.stride, spec.padding)


def model_backward(plan: ExecutionPlan, cache: ForwardCache, grad_logits: np.ndarray) -> Gradients:
    """Reverse pass from the loss gradient down to the first trained block.

    Produces parameter gradients for trained blocks only; intermediate
    gradients are computed once per block that needs them and never below
    the first trained block.
    """
    if cache.plan is not plan:
        raise RuntimeError("forward cache does not belong to this plan")
    first_trained = plan.first_trained
    if first_trained is None:
        raise RuntimeError("plan has no trained blocks; nothing to backpropagate")
    result = Gradients()
    g = grad_logits
    for entry in reversed(plan.entries):
        i = entry.index
        if i < first_trained:
            break
        c = cache.entries[i]
        if c is None:
            raise RuntimeError(f"block {i} has no forward cache; forward/backward mismatch")
        if entry.mode == BlockMode.TRAIN:
            g, grads = _backward_train_block(entry, c, g)
            result.by_block[i] = grads
            if entry.needs_input_grad:
                result.input_grad_blocks.append(i)
        elif entry.mode == BlockMode.FROZEN_QUANT:
            g = quant_block_backward_input(entry.qblock, g, c.relu_mask, c.x_shape)
            result.input_grad_blocks.append(i)
        else:
            g = _backward_frozen_float_block(entry, c, g)
            result.input_grad_blocks.append(i)
    result.input_grad_blocks.sort()
    return result
