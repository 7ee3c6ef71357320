"""Dense tensor primitives: conv2d, batch norm, ReLU, pooled linear head,
softmax cross-entropy, and plain SGD.

All operations are pure functions on numpy arrays in NCHW layout. They
preserve the floating dtype of their inputs, so the same code path serves
float32 production arithmetic and float64 verification runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5


class DimensionError(ValueError):
    """Raised when operand shapes are inconsistent."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


def conv_output_hw(h: int, w: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    """Output spatial size of a conv; raises if the geometry does not divide evenly."""
    _require(stride >= 1, f"stride must be >= 1, got {stride}")
    _require(padding >= 0, f"padding must be >= 0, got {padding}")
    num_h = h + 2 * padding - kernel
    num_w = w + 2 * padding - kernel
    _require(num_h >= 0 and num_w >= 0, f"kernel {kernel} larger than padded input {h}x{w}")
    _require(num_h % stride == 0 and num_w % stride == 0,
             f"conv geometry (h={h}, w={w}, k={kernel}, s={stride}, p={padding}) "
             "yields a non-integral output size")
    return num_h // stride + 1, num_w // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Unfold (B, C, H, W) into patch columns of shape (B*H_out*W_out, C*k*k)."""
    b, c, h, w = x.shape
    out_h, out_w = conv_output_hw(h, w, kernel, stride, padding)
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # windows: (B, C, H', W', k, k) view, strided to the stride grid
    windows = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * out_h * out_w, c * kernel * kernel)


def col2im(cols: np.ndarray, x_shape: tuple, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Fold patch columns back onto the input grid, accumulating overlaps.

    Inverse-adjoint of :func:`im2col`; used for the conv input gradient.
    """
    b, c, h, w = x_shape
    out_h, out_w = conv_output_hw(h, w, kernel, stride, padding)
    cols = cols.reshape(b, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    padded = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kernel):
        i_max = i + stride * out_h
        for j in range(kernel):
            j_max = j + stride * out_w
            padded[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    if padding > 0:
        return padded[:, :, padding:padding + h, padding:padding + w]
    return padded


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: int = 0, return_cols: bool = False):
    """Cross-correlation of (B, C_in, H, W) with (C_out, C_in, k, k) plus per-channel bias.

    With return_cols=True also returns the im2col patch matrix so a following
    backward pass can reuse it.
    """
    _require(x.ndim == 4, f"input must be NCHW, got {x.shape}")
    _require(weight.ndim == 4 and weight.shape[2] == weight.shape[3],
             f"weight must be (C_out, C_in, k, k), got {weight.shape}")
    _require(x.shape[1] == weight.shape[1],
             f"channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}")
    _require(bias.shape == (weight.shape[0],),
             f"bias must be (C_out,), got {bias.shape}")
    b, _, h, w = x.shape
    c_out, _, k, _ = weight.shape
    out_h, out_w = conv_output_hw(h, w, k, stride, padding)
    cols = im2col(x, k, stride, padding)                       # (B*oh*ow, C_in*k*k)
    out = cols @ weight.reshape(c_out, -1).T + bias            # (B*oh*ow, C_out)
    out = out.reshape(b, out_h, out_w, c_out).transpose(0, 3, 1, 2)
    return (out, cols) if return_cols else out


def conv2d_backward(x: np.ndarray, weight: np.ndarray, upstream: np.ndarray,
                    stride: int = 1, padding: int = 0,
                    need_input_grad: bool = True, cols: np.ndarray | None = None):
    """Gradients of conv2d_forward w.r.t. input, weight, and bias.

    Returns (grad_input, grad_weight, grad_bias); grad_input is None when
    need_input_grad is False. Pass the forward's patch columns as `cols` to
    skip recomputing them.
    """
    b, _, h, w = x.shape
    c_out, c_in, k, _ = weight.shape
    out_h, out_w = conv_output_hw(h, w, k, stride, padding)
    _require(upstream.shape == (b, c_out, out_h, out_w),
             f"upstream shape {upstream.shape} does not match forward output "
             f"{(b, c_out, out_h, out_w)}")
    up_cols = upstream.transpose(0, 2, 3, 1).reshape(-1, c_out)   # (B*oh*ow, C_out)
    if cols is None:
        cols = im2col(x, k, stride, padding)
    grad_weight = (up_cols.T @ cols).reshape(weight.shape)
    grad_bias = up_cols.sum(axis=0)
    grad_input = None
    if need_input_grad:
        grad_cols = up_cols @ weight.reshape(c_out, -1)           # (B*oh*ow, C_in*k*k)
        grad_input = col2im(grad_cols, x.shape, k, stride, padding)
    return grad_input, grad_weight, grad_bias


def conv2d_backward_input(upstream: np.ndarray, weight: np.ndarray, x_shape: tuple,
                          stride: int = 1, padding: int = 0) -> np.ndarray:
    """Input gradient only; the path frozen blocks use for intermediate gradients."""
    c_out = weight.shape[0]
    k = weight.shape[2]
    up_cols = upstream.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_cols = up_cols @ weight.reshape(c_out, -1)
    return col2im(grad_cols, x_shape, k, stride, padding)


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    gamma: np.ndarray
    inv_std: np.ndarray
    batch_mode: bool


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      mean: np.ndarray | None = None, var: np.ndarray | None = None,
                      eps: float = BN_EPS):
    """Per-channel normalization y = gamma * (x - mean)/sqrt(var + eps) + beta.

    When mean/var are None they are computed over the batch and spatial axes
    (biased variance) -> batch-stats mode; otherwise the given fixed
    statistics are used. Returns (y, used_mean, used_var, cache).
    """
    c = x.shape[1]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             f"gamma/beta must have {c} channels, got {gamma.shape}/{beta.shape}")
    batch_mode = mean is None
    if batch_mode:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))       # biased estimator
    else:
        _require(mean.shape == (c,) and var.shape == (c,),
                 f"fixed stats must have {c} channels")
        if np.any(var < 0):
            raise ValueError("fixed-stats variance must be >= 0")
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    cache = BatchNormCache(x_hat=x_hat, gamma=gamma, inv_std=inv_std, batch_mode=batch_mode)
    return y, mean, var, cache


def batchnorm_backward(cache: BatchNormCache, upstream: np.ndarray):
    """Gradients of batchnorm_forward.

    Batch-stats mode differentiates through mean/var; fixed-stats mode is the
    affine-only derivative. Returns (grad_input, grad_gamma, grad_beta).
    """
    if cache is None:
        raise RuntimeError("batchnorm_backward called without a forward cache")
    grad_gamma = (upstream * cache.x_hat).sum(axis=(0, 2, 3))
    grad_beta = upstream.sum(axis=(0, 2, 3))
    scale = (cache.gamma * cache.inv_std)[None, :, None, None]
    if not cache.batch_mode:
        return upstream * scale, grad_gamma, grad_beta
    # batch mode: d/dx of the normalization includes the mean/var terms
    m = upstream.shape[0] * upstream.shape[2] * upstream.shape[3]
    sum_up = upstream.sum(axis=(0, 2, 3))[None, :, None, None]
    sum_up_xhat = (upstream * cache.x_hat).sum(axis=(0, 2, 3))[None, :, None, None]
    grad_input = scale * (upstream - sum_up / m - cache.x_hat * sum_up_xhat / m)
    return grad_input, grad_gamma, grad_beta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Upstream masked where the forward input was > 0."""
    return np.where(x > 0, upstream, np.zeros((), dtype=upstream.dtype))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C) spatial mean."""
    return x.mean(axis=(2, 3))


def output_block_forward(x: np.ndarray, fc_weight: np.ndarray, fc_bias: np.ndarray):
    """Global-average-pool followed by a linear head.

    fc_weight is (num_classes, in_features); returns (logits, pooled).
    """
    _require(x.shape[1] == fc_weight.shape[1],
             f"fc expects {fc_weight.shape[1]} features, feature map has {x.shape[1]} channels")
    pooled = global_avg_pool(x)
    logits = pooled @ fc_weight.T + fc_bias
    return logits, pooled


def output_block_backward(grad_logits: np.ndarray, pooled: np.ndarray | None,
                          fc_weight: np.ndarray, x_shape: tuple,
                          need_input_grad: bool = True):
    """Gradients of output_block_forward; spreads the pooled gradient evenly
    over the spatial grid. Returns (grad_input, grad_fc_weight, grad_fc_bias);
    the parameter gradients are None when pooled is not supplied (frozen
    head, input gradient only)."""
    grad_w = grad_logits.T @ pooled if pooled is not None else None
    grad_b = grad_logits.sum(axis=0) if pooled is not None else None
    grad_input = None
    if need_input_grad:
        b, c, h, w = x_shape
        grad_pooled = grad_logits @ fc_weight        # (B, C)
        grad_input = np.broadcast_to(
            grad_pooled[:, :, None, None] / (h * w), x_shape).astype(grad_logits.dtype).copy()
    return grad_input, grad_w, grad_b


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    grad = (softmax - one_hot) / B. Labels must lie in [0, K).
    """
    b, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ValueError(f"labels must be ({b},), got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = float(-np.log(probs[rows, labels] + np.finfo(logits.dtype).tiny).mean())
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= b
    return loss, grad


def sgd_step(w: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    """Plain gradient step w - lr * g."""
    _require(w.shape == g.shape, f"shape mismatch: {w.shape} vs {g.shape}")
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    return w - np.asarray(lr, dtype=w.dtype) * g
