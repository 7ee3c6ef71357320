"""Conv-BN fusion and 8-bit execution of frozen blocks.

Scheme: per-tensor symmetric signed int8 for weights and gradients,
per-tensor affine uint8 for activations. Integer accumulation is 32-bit;
requantization multiplies by a real-valued factor and rounds to nearest
even. Integer convolutions are evaluated through float64 matmuls on
integer-valued operands, which is exact far beyond the int32 magnitudes
reached here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import conv2d_backward_input, conv2d_forward, conv_output_hw

SCALE_FLOOR = 1e-8

SIGNED_MIN, SIGNED_MAX = -127, 127
UNSIGNED_MIN, UNSIGNED_MAX = 0, 255


@dataclass(frozen=True)
class QuantParams:
    """Affine 8-bit mapping real = scale * (q - zero_point)."""
    scale: float
    zero_point: int
    signed: bool

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")
        lo, hi = self.qrange
        if not lo <= self.zero_point <= hi:
            raise ValueError(f"zero_point {self.zero_point} outside [{lo}, {hi}]")
        if self.signed and self.zero_point != 0:
            raise ValueError("signed quantization is symmetric (zero_point 0)")

    @property
    def qrange(self) -> tuple[int, int]:
        return (SIGNED_MIN, SIGNED_MAX) if self.signed else (UNSIGNED_MIN, UNSIGNED_MAX)


def symmetric_qparams(max_abs: float) -> QuantParams:
    """Signed scale from a magnitude bound: scale = max|x| / 127, floored."""
    return QuantParams(scale=max(float(max_abs), SCALE_FLOOR) / SIGNED_MAX,
                       zero_point=0, signed=True)


def affine_qparams(min_val: float, max_val: float) -> QuantParams:
    """Unsigned affine range covering [min, max] extended to include zero."""
    lo = min(float(min_val), 0.0)
    hi = max(float(max_val), 0.0)
    scale = max((hi - lo) / UNSIGNED_MAX, SCALE_FLOOR)
    zp = int(np.clip(np.rint(-lo / scale), UNSIGNED_MIN, UNSIGNED_MAX))
    return QuantParams(scale=scale, zero_point=zp, signed=False)


def quantize_affine(x: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Saturating quantization: clamp(rint(x / scale) + zero_point, qrange)."""
    lo, hi = qp.qrange
    q = np.rint(x / qp.scale) + qp.zero_point
    return np.clip(q, lo, hi).astype(np.int8 if qp.signed else np.uint8)


def dequantize(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (qp.scale * (q.astype(np.float32) - qp.zero_point)).astype(np.float32)


def fuse_conv_bn(conv_weight: np.ndarray, conv_bias: np.ndarray,
                 gamma: np.ndarray, beta: np.ndarray,
                 mean: np.ndarray, var: np.ndarray, eps: float):
    """Fold fixed-statistics batch norm into the preceding convolution.

    With g = gamma / sqrt(var + eps) per output channel, the fused kernel is
    g * W and the fused bias g * b + (beta - g * mean); composing the fused
    conv reproduces conv -> BN(fixed stats) exactly in real arithmetic.
    Returns (fused_weight, fused_bias).
    """
    if np.any(var < 0):
        raise ValueError("BN variance must be >= 0")
    g = gamma / np.sqrt(var + np.asarray(eps, dtype=conv_weight.dtype))
    fused_w = conv_weight * g[:, None, None, None]
    fused_b = g * conv_bias + (beta - g * mean)
    return fused_w, fused_b


@dataclass
class QuantizedBlock:
    """Fused, calibrated 8-bit kernel for one frozen conv block.

    Holds the real-valued fused parameters next to their int8 copies, the
    activation quantization parameters at the block boundary, and (for
    blocks that must produce intermediate gradients) the upstream-gradient
    scale. bias_q is the fused bias expressed in accumulator units.
    """
    fused_weight: np.ndarray
    fused_bias: np.ndarray
    weight_q: np.ndarray           # int8
    weight_qp: QuantParams
    bias_q: np.ndarray             # int32, units of in_scale * weight_scale
    in_qp: QuantParams
    out_qp: QuantParams
    stride: int
    padding: int
    has_relu: bool
    grad_qp: QuantParams | None = None


def build_quantized_block(fused_weight: np.ndarray, fused_bias: np.ndarray,
                          in_qp: QuantParams, out_qp: QuantParams,
                          stride: int, padding: int, has_relu: bool,
                          grad_qp: QuantParams | None = None) -> QuantizedBlock:
    weight_qp = symmetric_qparams(np.abs(fused_weight).max())
    weight_q = quantize_affine(fused_weight, weight_qp)
    bias_q = np.rint(fused_bias / (in_qp.scale * weight_qp.scale)).astype(np.int64)
    return QuantizedBlock(
        fused_weight=fused_weight, fused_bias=fused_bias,
        weight_q=weight_q, weight_qp=weight_qp, bias_q=bias_q,
        in_qp=in_qp, out_qp=out_qp,
        stride=stride, padding=padding, has_relu=has_relu, grad_qp=grad_qp,
    )


def quant_block_forward(block: QuantizedBlock, q_x: np.ndarray):
    """Integer fused conv-relu: uint8 in, uint8 out.

    Accumulates (q_x - zp_in) against the int8 kernel plus the integer bias,
    requantizes with the real multiplier in_scale*w_scale/out_scale (round to
    nearest even), and applies ReLU as a clamp at the output zero point.
    Returns (q_y, relu_mask); the mask marks strictly positive outputs and
    feeds the backward pass of blocks that need intermediate gradients.
    """
    x_c = q_x.astype(np.float64) - block.in_qp.zero_point
    w = block.weight_q.astype(np.float64)
    acc = conv2d_forward(x_c, w, block.bias_q.astype(np.float64),
                         block.stride, block.padding)        # exact integer values
    mult = block.in_qp.scale * block.weight_qp.scale / block.out_qp.scale
    q = np.rint(acc * mult) + block.out_qp.zero_point
    zp = block.out_qp.zero_point
    lo = zp if block.has_relu else UNSIGNED_MIN
    q_y = np.clip(q, lo, UNSIGNED_MAX).astype(np.uint8)
    mask = q_y > zp
    return q_y, mask


def quant_block_backward_input(block: QuantizedBlock, upstream: np.ndarray,
                               relu_mask: np.ndarray, x_shape: tuple) -> np.ndarray:
    """Intermediate gradient of a frozen quantized block.

    The ReLU mask is applied in full precision, the masked gradient is
    quantized with the calibrated symmetric scale, convolved against the
    int8 fused kernel in integer arithmetic, and dequantized.
    """
    if block.grad_qp is None:
        raise RuntimeError("block has no calibrated gradient scale; "
                           "it was not calibrated for intermediate gradients")
    g = np.where(relu_mask, upstream, np.zeros((), dtype=upstream.dtype)) \
        if block.has_relu else upstream
    q_g = quantize_affine(g, block.grad_qp).astype(np.float64)
    acc = conv2d_backward_input(q_g, block.weight_q.astype(np.float64), x_shape,
                                block.stride, block.padding)
    return (acc * (block.grad_qp.scale * block.weight_qp.scale)).astype(np.float32)


def quant_forward_float_oracle(block: QuantizedBlock, x: np.ndarray) -> np.ndarray:
    """Full-precision fused forward, the reference the integer path tracks."""
    y = conv2d_forward(x, block.fused_weight, block.fused_bias,
                       block.stride, block.padding)
    return np.maximum(y, 0) if block.has_relu else y


def quant_backward_float_oracle(block: QuantizedBlock, upstream: np.ndarray,
                                relu_mask: np.ndarray, x_shape: tuple) -> np.ndarray:
    """Full-precision fused backward-input reference."""
    g = np.where(relu_mask, upstream, np.zeros((), dtype=upstream.dtype)) \
        if block.has_relu else upstream
    return conv2d_backward_input(g, block.fused_weight, x_shape,
                                 block.stride, block.padding)


def expected_output_hw(block: QuantizedBlock, h: int, w: int) -> tuple[int, int]:
    k = block.weight_q.shape[2]
    return conv_output_hw(h, w, k, block.stride, block.padding)
