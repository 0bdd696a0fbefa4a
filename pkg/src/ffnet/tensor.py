"""Dense CPU tensor kernels with explicit forward/backward pairs.

Tensors are plain numpy arrays: rank-4 NCHW for images/feature maps, rank-2
N x F for flattened activities. The engine stores everything as contiguous
float32; kernels preserve the input dtype so tests can drive them at float64.
Kernels are pure functions of their inputs (batchnorm returns updated running
statistics instead of mutating shared state), which keeps single-threaded
execution bitwise deterministic. Accumulation happens at storage precision;
reductions inside a GEMM follow BLAS order for the active thread count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

L2_NORM_EPS = 1e-8
BATCHNORM_EPS = 1e-5
BATCHNORM_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Operand shapes are inconsistent with each other."""


class ConfigError(ValueError):
    """A layer/pool configuration can never produce a valid output."""


class NumericError(FloatingPointError):
    """A kernel or gradient produced NaN/Inf."""


def as_f32(x) -> np.ndarray:
    """Return `x` as a contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=np.float32)


def check_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values in {name}")


@dataclass
class LayerParams:
    """Learnable state of one layer.

    `weights` is (Fin, Fout) for linear layers and (Cout, Cin, K, K) for
    convolutions; `bias` has length Fout/Cout. The bn_* vectors are present
    only on layers that normalize their input and have length equal to the
    normalized channel count.
    """

    weights: np.ndarray
    bias: np.ndarray
    bn_gamma: Optional[np.ndarray] = None
    bn_beta: Optional[np.ndarray] = None
    bn_running_mean: Optional[np.ndarray] = None
    bn_running_var: Optional[np.ndarray] = None

    def has_batchnorm(self) -> bool:
        return self.bn_gamma is not None


# ---------------------------------------------------------------------------
# Linear
# ---------------------------------------------------------------------------

def matmul_forward(x: np.ndarray, p: LayerParams) -> np.ndarray:
    """out[n, j] = sum_i x[n, i] * W[i, j] + b[j]."""
    if x.ndim != 2 or x.shape[1] != p.weights.shape[0]:
        raise ShapeError(
            f"matmul: input {x.shape} incompatible with weights {p.weights.shape}"
        )
    return x @ p.weights + p.bias


def matmul_backward(x: np.ndarray, p: LayerParams, grad_out: np.ndarray):
    """Analytic gradients of matmul_forward; returns (grad_x, grad_w, grad_b)."""
    if grad_out.shape != (x.shape[0], p.weights.shape[1]):
        raise ShapeError(
            f"matmul backward: grad {grad_out.shape} vs expected "
            f"{(x.shape[0], p.weights.shape[1])}"
        )
    grad_x = grad_out @ p.weights.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Convolution (im2col GEMM)
# ---------------------------------------------------------------------------

def _conv_out_size(h: int, w: int, k: int, stride: int, padding: int):
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ConfigError(
            f"conv kernel {k} larger than padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    return oh, ow


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, C*k*k, oh*ow) patch matrix."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, padding: int,
            oh: int, ow: int) -> np.ndarray:
    """Scatter-add (N, C*k*k, oh*ow) patch gradients back onto the input."""
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    if padding == 0:
        return dxp
    return dxp[:, :, padding : padding + h, padding : padding + w]


def conv2d_forward(x: np.ndarray, p: LayerParams, stride: int = 1,
                   padding: int = 0) -> np.ndarray:
    """Cross-correlation with bias.

    x: (N, Cin, H, W); weights: (Cout, Cin, K, K).
    Output spatial dims: floor((H + 2*pad - K)/stride) + 1.
    """
    if x.ndim != 4 or p.weights.ndim != 4 or x.shape[1] != p.weights.shape[1]:
        raise ShapeError(
            f"conv2d: input {x.shape} incompatible with weights {p.weights.shape}"
        )
    if stride < 1:
        raise ConfigError(f"conv stride must be >= 1, got {stride}")
    n, _, h, w = x.shape
    cout, cin, k, _ = p.weights.shape
    oh, ow = _conv_out_size(h, w, k, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, k, stride, oh, ow)                       # (N, Cin*k*k, L)
    wmat = p.weights.reshape(cout, cin * k * k)
    flat = cols.transpose(1, 0, 2).reshape(cin * k * k, n * oh * ow)
    out = (wmat @ flat).reshape(cout, n, oh * ow).transpose(1, 0, 2)
    out = out.reshape(n, cout, oh, ow) + p.bias.reshape(1, cout, 1, 1)
    return np.ascontiguousarray(out)


def conv2d_backward(x: np.ndarray, p: LayerParams, grad_out: np.ndarray,
                    stride: int = 1, padding: int = 0):
    """Analytic gradients of conv2d_forward; returns (grad_x, grad_w, grad_b)."""
    n, _, h, w = x.shape
    cout, cin, k, _ = p.weights.shape
    oh, ow = _conv_out_size(h, w, k, stride, padding)
    if grad_out.shape != (n, cout, oh, ow):
        raise ShapeError(
            f"conv2d backward: grad {grad_out.shape} vs expected {(n, cout, oh, ow)}"
        )
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = _im2col(xp, k, stride, oh, ow)
    gflat = grad_out.transpose(1, 0, 2, 3).reshape(cout, n * oh * ow)
    colsflat = cols.transpose(1, 0, 2).reshape(cin * k * k, n * oh * ow)
    grad_w = (gflat @ colsflat.T).reshape(cout, cin, k, k)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    wmat = p.weights.reshape(cout, cin * k * k)
    dcols = (wmat.T @ gflat).reshape(cin * k * k, n, oh * ow).transpose(1, 0, 2)
    grad_x = _col2im(dcols, x.shape, k, stride, padding, oh, ow)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# 2x2 max pooling, stride 2, no padding
# ---------------------------------------------------------------------------

def maxpool2x2_forward(x: np.ndarray):
    """Windowed max; returns (out, argmax) with argmax in [0, 4) per window.

    Ties route to the first window position in row-major (di, dj) order.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool2x2 requires even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    argmax = win.argmax(axis=-1)
    out = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), argmax


def maxpool2x2_backward(argmax: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Route each output gradient to its recorded argmax position."""
    if argmax.shape != grad_out.shape:
        raise ShapeError(f"maxpool backward: argmax {argmax.shape} vs grad {grad_out.shape}")
    n, c, oh, ow = grad_out.shape
    win = np.zeros((n, c, oh, ow, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax[..., None], grad_out[..., None], axis=-1)
    win = win.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(win.reshape(n, c, oh * 2, ow * 2))


# ---------------------------------------------------------------------------
# Batch normalization (per channel)
# ---------------------------------------------------------------------------

@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    new_running_mean: Optional[np.ndarray]
    new_running_var: Optional[np.ndarray]


def _bn_axes(x: np.ndarray):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ShapeError(f"batchnorm expects rank 2 or 4 input, got {x.ndim}")


def batchnorm_forward(x: np.ndarray, p: LayerParams, training: bool,
                      momentum: float = BATCHNORM_MOMENTUM,
                      eps: float = BATCHNORM_EPS):
    """Normalize per channel; returns (out, BatchNormCache).

    Training mode uses batch statistics (biased variance) and computes updated
    running stats in the cache; eval mode uses the stored running stats. The
    eps guard keeps constant inputs finite.
    """
    axes, bshape = _bn_axes(x)
    c = x.shape[1]
    for name, v in (("bn_gamma", p.bn_gamma), ("bn_beta", p.bn_beta),
                    ("bn_running_mean", p.bn_running_mean),
                    ("bn_running_var", p.bn_running_var)):
        if v is None or v.shape != (c,):
            raise ShapeError(f"batchnorm: {name} must have shape ({c},)")
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = (1.0 - momentum) * p.bn_running_mean + momentum * mean
        new_var = (1.0 - momentum) * p.bn_running_var + momentum * var
    else:
        mean, var = p.bn_running_mean, p.bn_running_var
        new_mean = new_var = None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = p.bn_gamma.reshape(bshape) * xhat + p.bn_beta.reshape(bshape)
    cache = BatchNormCache(xhat=xhat, inv_std=inv_std, gamma=p.bn_gamma,
                           new_running_mean=new_mean, new_running_var=new_var)
    return out, cache


def batchnorm_backward(cache: BatchNormCache, grad_out: np.ndarray):
    """Training-mode batchnorm gradient; returns (grad_x, grad_gamma, grad_beta)."""
    axes, bshape = _bn_axes(grad_out)
    m = grad_out.size // grad_out.shape[1]
    grad_gamma = (grad_out * cache.xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g = grad_out * cache.gamma.reshape(bshape)
    gmean = g.mean(axis=axes).reshape(bshape)
    gxhat_mean = (g * cache.xhat).sum(axis=axes).reshape(bshape) / m
    grad_x = cache.inv_std.reshape(bshape) * (g - gmean - cache.xhat * gxhat_mean)
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# ReLU
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Mask gradient where x <= 0 (subgradient at exactly 0 is 0)."""
    return np.where(x > 0, grad_out, 0)


# ---------------------------------------------------------------------------
# Per-sample L2 normalization
# ---------------------------------------------------------------------------

def l2_normalize_forward(x: np.ndarray, eps: float = L2_NORM_EPS) -> np.ndarray:
    """Divide each sample's flattened feature vector by (||.||_2 + eps)."""
    flat = x.reshape(x.shape[0], -1)
    norm = np.sqrt((flat * flat).sum(axis=1, keepdims=True))
    return (flat / (norm + eps)).reshape(x.shape)


def l2_normalize_backward(x: np.ndarray, grad_out: np.ndarray,
                          eps: float = L2_NORM_EPS) -> np.ndarray:
    """Exact gradient of l2_normalize_forward.

    d y_i / d x_j = delta_ij / (r + eps) - x_i x_j / (r (r + eps)^2), r = ||x||.
    A floor on r guards the (non-differentiable) zero vector.
    """
    flat = x.reshape(x.shape[0], -1)
    g = grad_out.reshape(grad_out.shape[0], -1)
    r = np.sqrt((flat * flat).sum(axis=1, keepdims=True))
    n = r + eps
    r_safe = np.maximum(r, eps)
    grad = g / n - flat * ((flat * g).sum(axis=1, keepdims=True) / (r_safe * n * n))
    return grad.reshape(x.shape)
