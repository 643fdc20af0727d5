"""Differentiable float32 array primitives with explicit forward/backward pairs.

Arrays follow the N x C x H x W convention for image-like data. There is no
autodiff tape: every backward pass is hand-written, and callers keep whatever
forward state the backward needs (inputs, batch-norm caches).

Reductions inside batch norm, pooling, and the loss accumulate in float64;
all results are float32.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """An operation received or produced NaN/Inf values."""


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    """Cross-correlation filter bank; weight layout [out, in, kh, kw]."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int
    padding: int
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        kh, kw = self.kernel
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")
        expected = (self.out_channels, self.in_channels, kh, kw)
        if tuple(self.weight.shape) != expected:
            raise ValueError(
                f"conv weight shape {tuple(self.weight.shape)} does not match {expected}"
            )
        if tuple(self.bias.shape) != (self.out_channels,):
            raise ValueError(
                f"conv bias shape {tuple(self.bias.shape)} does not match ({self.out_channels},)"
            )


def conv_output_hw(h: int, w: int, kernel: tuple[int, int], stride: int, padding: int) -> tuple[int, int]:
    kh, kw = kernel
    return (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Unfold x into [N, C*kh*kw, out_h*out_w] patch columns."""
    n, c = x.shape[:2]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (x.shape[2] - kh) // stride + 1
    out_w = (x.shape[3] - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, out_h, out_w),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, out_h * out_w), out_h, out_w


def conv2d_forward(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Cross-correlate x [N,Ci,H,W] with p.weight, add bias."""
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 4-D, got shape {tuple(x.shape)}")
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ValueError(f"conv2d input has {c} channels, expected {p.in_channels}")
    kh, kw = p.kernel
    if h + 2 * p.padding < kh or w + 2 * p.padding < kw:
        raise ValueError(
            f"conv2d input {h}x{w} (pad {p.padding}) smaller than kernel {kh}x{kw}"
        )
    check_finite(x, "conv2d input")
    cols, out_h, out_w = _im2col(x, kh, kw, p.stride, p.padding)
    w2 = p.weight.reshape(p.out_channels, -1)
    y = np.matmul(w2, cols)
    y += p.bias[:, None]
    return y.reshape(n, p.out_channels, out_h, out_w)


def _col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add patch columns back onto the (padded) input grid."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    g = cols.reshape(n, c, kh, kw, out_h, out_w)
    gx = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        hi = i + stride * out_h
        for j in range(kw):
            wj = j + stride * out_w
            gx[:, :, i:hi:stride, j:wj:stride] += g[:, :, i, j]
    if padding:
        gx = np.ascontiguousarray(gx[:, :, padding:padding + h, padding:padding + w])
    return gx


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Gradients of a scalar loss through conv2d_forward.

    Returns (grad_input, grad_weight, grad_bias).
    """
    n, c, h, w = x.shape
    kh, kw = p.kernel
    out_h, out_w = conv_output_hw(h, w, p.kernel, p.stride, p.padding)
    if grad_out.shape != (n, p.out_channels, out_h, out_w):
        raise ValueError(
            f"grad_out shape {tuple(grad_out.shape)} does not match conv output "
            f"({n}, {p.out_channels}, {out_h}, {out_w})"
        )
    cols, _, _ = _im2col(x, kh, kw, p.stride, p.padding)
    go = grad_out.reshape(n, p.out_channels, -1)
    grad_bias = go.sum(axis=(0, 2))
    grad_weight = np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0).reshape(p.weight.shape)
    grad_cols = np.matmul(p.weight.reshape(p.out_channels, -1).T, go)
    grad_x = _col2im(grad_cols, (n, c, h, w), kh, kw, p.stride, p.padding)
    return grad_x, grad_weight, grad_bias


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    stats_momentum: float = 0.1

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not 0.0 < self.stats_momentum < 1.0:
            raise ValueError(f"stats_momentum must be in (0,1), got {self.stats_momentum}")


@dataclass
class BatchNormCache:
    """Per-channel batch statistics kept for the backward pass."""

    mean: np.ndarray  # float64 [C]
    var: np.ndarray   # float64 [C], population (biased) variance


def batchnorm_forward(x: np.ndarray, p: BatchNormParams, training: bool):
    """Normalize per channel; returns (y, cache). cache is None in inference mode.

    Training mode uses batch mean and population variance and updates the
    running statistics in place by exponential moving average.
    """
    n, c, h, w = x.shape
    if c != p.gamma.shape[0]:
        raise ValueError(f"batchnorm input has {c} channels, parameters have {p.gamma.shape[0]}")
    if training:
        if n * h * w < 1:
            raise ValueError("training-mode batch norm needs at least one value per channel")
        mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
        var = x.var(axis=(0, 2, 3), dtype=np.float64)
        r = p.stats_momentum
        p.running_mean[...] = ((1.0 - r) * p.running_mean + r * mean).astype(DTYPE)
        p.running_var[...] = ((1.0 - r) * p.running_var + r * var).astype(DTYPE)
        cache = BatchNormCache(mean=mean, var=var)
    else:
        mean = p.running_mean.astype(np.float64)
        var = p.running_var.astype(np.float64)
        cache = None
    inv = 1.0 / np.sqrt(var + p.eps)
    x_hat = ((x - mean[None, :, None, None]) * inv[None, :, None, None]).astype(DTYPE)
    y = p.gamma[None, :, None, None] * x_hat + p.beta[None, :, None, None]
    return y, cache


def batchnorm_backward(x: np.ndarray, p: BatchNormParams, grad_out: np.ndarray, cache: BatchNormCache | None):
    """Training-mode batch norm gradient; returns (grad_input, grad_gamma, grad_beta)."""
    if cache is None:
        raise ValueError("batchnorm_backward requires the cache from a training-mode forward")
    n, c, h, w = x.shape
    m = n * h * w
    inv = 1.0 / np.sqrt(cache.var + p.eps)            # [C] float64
    xc = x - cache.mean[None, :, None, None]          # float64
    x_hat = xc * inv[None, :, None, None]
    grad_beta = grad_out.sum(axis=(0, 2, 3), dtype=np.float64)
    grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
    gxh = grad_out * p.gamma[None, :, None, None]
    gvar = (gxh * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv ** 3
    gmean = -(gxh.sum(axis=(0, 2, 3)) * inv) + gvar * (-2.0 / m) * xc.sum(axis=(0, 2, 3))
    grad_x = (
        gxh * inv[None, :, None, None]
        + gvar[None, :, None, None] * (2.0 / m) * xc
        + gmean[None, :, None, None] / m
    )
    return grad_x.astype(DTYPE), grad_gamma.astype(DTYPE), grad_beta.astype(DTYPE)


# ---------------------------------------------------------------------------
# activation, pooling, channel plumbing
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x), elementwise."""
    return x * _sigmoid(x)


def silu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    s = _sigmoid(x)
    return grad_out * (s * (1.0 + x * (1.0 - s)))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean: [N,C,H,W] -> [N,C]."""
    n, c, h, w = x.shape
    if h * w == 0:
        raise ValueError("global_avg_pool needs a non-empty spatial extent")
    return x.mean(axis=(2, 3), dtype=np.float64).astype(DTYPE)


def global_avg_pool_backward(x_shape: tuple, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    g = grad_out[:, :, None, None] / DTYPE(h * w)
    return np.ascontiguousarray(np.broadcast_to(g, x_shape))


def concat_channels(*xs: np.ndarray) -> np.ndarray:
    """Concatenate along the channel axis; batch and spatial dims must agree."""
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    first = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != first[0] or x.shape[2:] != first[2:]:
            raise ValueError(
                f"concat_channels batch/spatial mismatch: {tuple(x.shape)} vs {tuple(first)}"
            )
    return np.concatenate(xs, axis=1)


def split_channels(x: np.ndarray, sizes) -> list[np.ndarray]:
    """Partition the channel axis into contiguous chunks of the given sizes."""
    sizes = list(sizes)
    if sum(sizes) != x.shape[1]:
        raise ValueError(f"split sizes {sizes} do not sum to {x.shape[1]} channels")
    out = []
    start = 0
    for s in sizes:
        out.append(np.ascontiguousarray(x[:, start:start + s]))
        start += s
    return out


# ---------------------------------------------------------------------------
# linear layer and loss
# ---------------------------------------------------------------------------


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """y = x @ weight.T + bias for x [N,Din], weight [Dout,Din], bias [Dout]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear dimension mismatch: x {tuple(x.shape)}, weight {tuple(weight.shape)}"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias shape {tuple(bias.shape)} != ({weight.shape[0]},)")
    return x @ weight.T + bias


def linear_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray):
    """Returns (grad_input, grad_weight, grad_bias)."""
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ValueError(
            f"linear grad_out shape {tuple(grad_out.shape)} != ({x.shape[0]}, {weight.shape[0]})"
        )
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the labels plus its logits gradient.

    Loss is accumulated in float64 (small probabilities survive the log-sum-exp
    shift); the returned gradient is (softmax - one_hot) / N in float32.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels shape {tuple(labels.shape)} does not match batch size {n}")
    if n == 0:
        raise ValueError("softmax_cross_entropy needs at least one sample")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0,{k})")
    z = logits.astype(np.float64)
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    grad = softmax(logits).astype(DTYPE)
    grad[np.arange(n), labels] -= 1.0
    grad /= DTYPE(n)
    return loss, grad
