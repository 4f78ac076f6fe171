"""Forward and backward passes for every operator the architectures use.

Two surfaces live here. The module-level functions are pure and carry
the numerical contracts (they are what the oracle tests check). The
layer classes wrap them with parameter storage and per-batch caches so
a sequential model can run them in order; gradients accumulate into
per-parameter buffers and are zeroed by the trainer.

Convolution is cross-correlation (no kernel flip). MaxPool breaks ties
in favor of the first element in row-major scan order so backward
routing is deterministic. ReLU uses subgradient 0 at exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import SplitRng

TRAIN = "train"
EVAL = "eval"


# ---------------------------------------------------------------------------
# im2col plumbing


def conv_out_hw(h: int, w: int, k: int, stride: int, pad: int) -> tuple[int, int]:
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"kernel {k} larger than padded input {h}x{w} (pad {pad})")
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (n,c,h,w) into (n*oh*ow, c*k*k) patch rows.

    Written directly in (n, oh, ow, c, k, k) layout so the final
    reshape is free (no second full-tensor copy).
    """
    n, c, h, w = x.shape
    oh, ow = conv_out_hw(h, w, k, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, oh, ow, c, k, k), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            src = x[:, :, dy : dy + stride * oh : stride, dx : dx + stride * ow : stride]
            cols[:, :, :, :, dy, dx] = src.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * k * k)


def col2im(cols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add (n*oh*ow, c*k*k) patch rows back to (n,c,h,w)."""
    n, c, h, w = x_shape
    oh, ow = conv_out_hw(h, w, k, stride, pad)
    cols = cols.reshape(n, oh, ow, c, k, k)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            dst = out[:, :, dy : dy + stride * oh : stride, dx : dx + stride * ow : stride]
            dst += cols[:, :, :, :, dy, dx].transpose(0, 3, 1, 2)
    if pad > 0:
        out = out[:, :, pad : pad + h, pad : pad + w]
    return out


# ---------------------------------------------------------------------------
# convolution


def conv2d_forward(x, weight, bias, stride=1, pad=0, _cols=None):
    """Cross-correlation + bias. weight is (c_out, c_in, k, k), bias (c_out,)."""
    n, c, h, w = x.shape
    c_out, c_in, k, _ = weight.shape
    if c != c_in:
        raise ShapeError(f"conv expects {c_in} input channels, got {c}")
    oh, ow = conv_out_hw(h, w, k, stride, pad)
    cols = im2col(x, k, stride, pad) if _cols is None else _cols
    y = cols @ weight.reshape(c_out, -1).T + bias
    return y.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)


def conv2d_backward(x, weight, stride, pad, grad_out):
    """Gradients of sum(grad_out * forward) wrt (x, weight, bias)."""
    cols = im2col(x, weight.shape[2], stride, pad)
    return _conv2d_backward_cols(x.shape, weight, stride, pad, grad_out, cols)


def _conv2d_backward_cols(x_shape, weight, stride, pad, grad_out, cols):
    n, c, h, w = x_shape
    c_out, c_in, k, _ = weight.shape
    oh, ow = conv_out_hw(h, w, k, stride, pad)
    if grad_out.shape != (n, c_out, oh, ow):
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output {(n, c_out, oh, ow)}")
    g = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, c_out)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    grad_cols = g @ weight.reshape(c_out, -1)
    grad_x = col2im(grad_cols, x_shape, k, stride, pad)
    return grad_x, grad_w, grad_b


def strided_conv_down_forward(x, weight, bias, stride=2, pad=0):
    """Downsampling by stride-2 convolution (the pooling alternative)."""
    return conv2d_forward(x, weight, bias, stride=stride, pad=pad)


def strided_conv_down_backward(x, weight, grad_out, stride=2, pad=0):
    return conv2d_backward(x, weight, stride, pad, grad_out)


# ---------------------------------------------------------------------------
# pooling


def maxpool_forward(x, window=2, stride=2):
    """Max over each window; returns (pooled, flat input offsets of winners).

    Ties go to the first element in row-major scan order.
    """
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ShapeError(f"pool window {window} exceeds input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    slabs = np.empty((window * window, n, c, oh, ow), dtype=x.dtype)
    for dy in range(window):
        for dx in range(window):
            slabs[dy * window + dx] = x[:, :, dy : dy + stride * oh : stride, dx : dx + stride * ow : stride]
    which = slabs.argmax(axis=0)  # first max in scan order
    pooled = np.take_along_axis(slabs, which[None], axis=0)[0]
    dy, dx = np.divmod(which, window)
    iy = np.arange(oh).reshape(1, 1, oh, 1) * stride + dy
    ix = np.arange(ow).reshape(1, 1, 1, ow) * stride + dx
    ni = np.arange(n).reshape(n, 1, 1, 1)
    ci = np.arange(c).reshape(1, c, 1, 1)
    argmax = ((ni * c + ci) * h + iy) * w + ix
    return pooled, argmax


def maxpool_backward(argmax, grad_out, input_shape):
    """Route each output gradient to its winning input cell."""
    n, c, h, w = input_shape
    size = n * c * h * w
    idx = argmax.ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise AssertionError("argmax offsets out of bounds for input shape")
    grad_x = np.zeros(size, dtype=grad_out.dtype)
    np.add.at(grad_x, idx, grad_out.ravel())
    return grad_x.reshape(input_shape)


@dataclass(frozen=True)
class SafPoolConfig:
    window: int = 2
    stride: int = 2
    drop_p: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.drop_p < 1.0:
            raise ValueError(f"drop_p must be in [0, 1), got {self.drop_p}")


def saf_pool_forward(x, cfg: SafPoolConfig, mode: str, rng: SplitRng | None = None):
    """Max-pool, then drop pooled activations (inverted dropout) in train mode.

    Returns (y, keep mask, argmax offsets). In eval mode, or with
    drop_p == 0, y is exactly the max-pool output and the mask is ones.
    """
    pooled, argmax = maxpool_forward(x, cfg.window, cfg.stride)
    if mode == TRAIN and cfg.drop_p > 0.0:
        if rng is None:
            raise ValueError("SAF-pool with drop_p > 0 requires an rng in train mode")
        mask = rng.keep_mask(pooled.shape, cfg.drop_p).astype(x.dtype)
        y = pooled * mask / x.dtype.type(1.0 - cfg.drop_p)
    else:
        mask = np.ones_like(pooled)
        y = pooled
    return y, mask, argmax


def saf_pool_backward(mask, argmax, grad_out, input_shape, drop_p: float):
    scaled = grad_out * mask / grad_out.dtype.type(1.0 - drop_p)
    return maxpool_backward(argmax, scaled, input_shape)


def global_avgpool_forward(x):
    n, c, h, w = x.shape
    return x.mean(axis=(2, 3), keepdims=True)


def global_avgpool_backward(grad_out, input_shape):
    n, c, h, w = input_shape
    return np.broadcast_to(grad_out / grad_out.dtype.type(h * w), input_shape).copy()


# ---------------------------------------------------------------------------
# pointwise / normalization


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


def batchnorm_forward(x, p: BatchNormParams, mode: str):
    """Per-channel batch normalization over (n, h, w).

    Train mode normalizes by the biased batch variance and folds the
    unbiased variance into the running average; running stats are
    updated in place. Returns (y, cache) where cache feeds backward.
    """
    n, c, h, w = x.shape
    m = n * h * w
    if mode == TRAIN:
        if m < 2:
            raise ValueError(f"batchnorm train mode needs n*h*w >= 2 per channel, got {m}")
        mean = x.mean(axis=(0, 2, 3))
        xc = x - mean[None, :, None, None]
        var = np.mean(np.square(xc), axis=(0, 2, 3))  # biased
        unbiased = var * (m / (m - 1))
        p.running_mean *= 1.0 - p.momentum
        p.running_mean += p.momentum * mean.astype(p.running_mean.dtype)
        p.running_var *= 1.0 - p.momentum
        p.running_var += p.momentum * unbiased.astype(p.running_var.dtype)
    else:
        mean = p.running_mean.astype(x.dtype)
        var = p.running_var.astype(x.dtype)
        xc = x - mean[None, :, None, None]
    std = np.sqrt(var + x.dtype.type(p.eps))
    xhat = xc * (1.0 / std)[None, :, None, None].astype(x.dtype)
    y = p.gamma[None, :, None, None] * xhat + p.beta[None, :, None, None]
    cache = (xhat, std, xc, p.gamma.copy(), mode)
    return y, cache


def batchnorm_backward(grad_out, cache):
    """Full coupled gradient through batch mean and variance.

    Returns (grad_x, grad_gamma, grad_beta). In eval mode mean/var are
    constants so grad_x is just the affine chain.
    """
    xhat, std, xc, gamma, mode = cache
    n, c, h, w = grad_out.shape
    m = n * h * w
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    dxhat = grad_out * gamma[None, :, None, None]
    if mode != TRAIN:
        return dxhat / std[None, :, None, None], grad_gamma, grad_beta
    inv = 1.0 / std
    dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * inv**3
    dmean = -(dxhat * inv[None, :, None, None]).sum(axis=(0, 2, 3)) + dvar * (-2.0 / m) * xc.sum(axis=(0, 2, 3))
    grad_x = (
        dxhat * inv[None, :, None, None]
        + dvar[None, :, None, None] * 2.0 * xc / m
        + dmean[None, :, None, None] / m
    )
    return grad_x, grad_gamma, grad_beta


def dropout_forward(x, p: float, mode: str, rng: SplitRng | None = None):
    """Inverted dropout; identity in eval mode. Returns (y, mask)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if mode != TRAIN or p == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("dropout with p > 0 requires an rng in train mode")
    mask = rng.keep_mask(x.shape, p).astype(x.dtype)
    return x * mask / x.dtype.type(1.0 - p), mask


def dropout_backward(grad_out, mask, p: float):
    return grad_out * mask / grad_out.dtype.type(1.0 - p)


# ---------------------------------------------------------------------------
# classifier tail


def dense_forward(x, weight, bias):
    """x (n,d) @ weight (d,m) + bias (m,)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense expects (n,{weight.shape[0]}), got {x.shape}")
    return x @ weight + bias


def dense_backward(x, weight, grad_out):
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax_xent(logits, labels):
    """Mean cross-entropy and its logit gradient, max-stabilized.

    labels is an int vector in [0, k); grad is (softmax - onehot)/n.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1, keepdims=True)
    log_p = shifted - np.log(z)
    loss = -log_p[np.arange(n), labels].mean()
    grad = exp / z
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# ---------------------------------------------------------------------------
# activation statistics (dropout-effect probe)


@dataclass(frozen=True)
class ActivationStats:
    dead_fraction: float
    near_zero_fraction: float
    per_channel_mean: np.ndarray


def activation_stats(x_post_relu: np.ndarray, tau: float = 1e-3) -> ActivationStats:
    """Dead/near-zero statistics of a post-ReLU activation batch.

    A channel is dead when its activation is 0 across the whole batch;
    near_zero_fraction counts values below tau.
    """
    per_channel_max = x_post_relu.max(axis=(0, 2, 3))
    dead = float((per_channel_max == 0).mean())
    near_zero = float((x_post_relu < tau).mean())
    return ActivationStats(dead, near_zero, x_post_relu.mean(axis=(0, 2, 3)))


# ---------------------------------------------------------------------------
# layer objects (used by network.Model)


class Layer:
    """Base: stateless pass-through. Subclasses cache what backward needs."""

    kind = "layer"

    def __init__(self, name: str):
        self.name = name

    def init_params(self, in_shape, rng: SplitRng, dtype):
        pass

    def forward(self, x, mode: str, rng: SplitRng | None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def param_entries(self):
        """Yields (name, value, grad) for trainable parameters."""
        return ()

    def state_entries(self):
        """Trainable params plus persistent buffers (for checkpoints)."""
        return tuple((n, v) for n, v, _ in self.param_entries())

    def out_shape(self, in_shape):
        return in_shape

    def param_count(self, in_shape) -> int:
        return 0

    def mac_count(self, in_shape) -> int:
        return 0


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, name, in_channels, out_channels, kernel, stride=1, pad=0):
        super().__init__(name)
        if kernel < 1 or stride < 1 or pad < 0:
            raise ValueError("conv requires kernel,stride >= 1 and pad >= 0")
        self.c_in = in_channels
        self.c_out = out_channels
        self.k = kernel
        self.stride = stride
        self.pad = pad
        self.weight = self.bias = self.gweight = self.gbias = None
        self._cache = None

    def init_params(self, in_shape, rng, dtype):
        fan_in = self.c_in * self.k * self.k
        scale = np.sqrt(2.0 / fan_in)
        self.weight = (rng.normal((self.c_out, self.c_in, self.k, self.k)) * scale).astype(dtype)
        self.bias = np.zeros(self.c_out, dtype=dtype)
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)

    def forward(self, x, mode, rng):
        cols = im2col(x, self.k, self.stride, self.pad)
        y = conv2d_forward(x, self.weight, self.bias, self.stride, self.pad, _cols=cols)
        self._cache = (x.shape, cols)
        return y

    def backward(self, grad_out):
        x_shape, cols = self._cache
        gx, gw, gb = _conv2d_backward_cols(x_shape, self.weight, self.stride, self.pad, grad_out, cols)
        self.gweight += gw
        self.gbias += gb
        return gx

    def param_entries(self):
        return ((f"{self.name}.weight", self.weight, self.gweight), (f"{self.name}.bias", self.bias, self.gbias))

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        if c != self.c_in:
            raise ShapeError(f"{self.name}: expects {self.c_in} channels, got {c}")
        oh, ow = conv_out_hw(h, w, self.k, self.stride, self.pad)
        return (n, self.c_out, oh, ow)

    def param_count(self, in_shape) -> int:
        return self.c_out * self.c_in * self.k * self.k + self.c_out

    def mac_count(self, in_shape) -> int:
        _, _, oh, ow = self.out_shape((1,) + tuple(in_shape[1:]))
        return self.c_out * oh * ow * self.c_in * self.k * self.k


class StridedConvDown(Conv2d):
    """Stride-2 convolution as a named downsampling layer (pool alternative)."""

    kind = "sconv"

    def __init__(self, name, in_channels, out_channels, kernel=2, stride=2, pad=0):
        super().__init__(name, in_channels, out_channels, kernel, stride, pad)


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, name, window=2, stride=None):
        super().__init__(name)
        self.window = window
        self.stride = window if stride is None else stride
        self._cache = None

    def forward(self, x, mode, rng):
        y, argmax = maxpool_forward(x, self.window, self.stride)
        self._cache = (x.shape, argmax)
        return y

    def backward(self, grad_out):
        x_shape, argmax = self._cache
        return maxpool_backward(argmax, grad_out, x_shape)

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        if self.window > h or self.window > w:
            raise ShapeError(f"{self.name}: window {self.window} exceeds input {h}x{w}")
        return (n, c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)


class SafPool(Layer):
    kind = "safpool"

    def __init__(self, name, window=2, drop_p=0.0, stride=None):
        super().__init__(name)
        self.cfg = SafPoolConfig(window=window, stride=window if stride is None else stride, drop_p=drop_p)
        self._cache = None

    def forward(self, x, mode, rng):
        y, mask, argmax = saf_pool_forward(x, self.cfg, mode, rng)
        self._cache = (x.shape, mask, argmax)
        return y

    def backward(self, grad_out):
        x_shape, mask, argmax = self._cache
        return saf_pool_backward(mask, argmax, grad_out, x_shape, self.cfg.drop_p)

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        k, s = self.cfg.window, self.cfg.stride
        if k > h or k > w:
            raise ShapeError(f"{self.name}: window {k} exceeds input {h}x{w}")
        return (n, c, (h - k) // s + 1, (w - k) // s + 1)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, mode, rng):
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out):
        return relu_backward(self._x, grad_out)


class BatchNorm(Layer):
    kind = "bn"

    def __init__(self, name, channels, momentum=0.1, eps=1e-5):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self._cache = None
        self._alloc(np.float32)

    def _alloc(self, dtype):
        self.p = BatchNormParams(
            gamma=np.ones(self.channels, dtype=dtype),
            beta=np.zeros(self.channels, dtype=dtype),
            running_mean=np.zeros(self.channels, dtype=dtype),
            running_var=np.ones(self.channels, dtype=dtype),
            momentum=self.momentum,
            eps=self.eps,
        )
        self.ggamma = np.zeros(self.channels, dtype=dtype)
        self.gbeta = np.zeros(self.channels, dtype=dtype)

    def init_params(self, in_shape, rng, dtype):
        self._alloc(dtype)

    def forward(self, x, mode, rng):
        if x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expects {self.channels} channels, got {x.shape[1]}")
        y, self._cache = batchnorm_forward(x, self.p, mode)
        return y

    def backward(self, grad_out):
        gx, gg, gb = batchnorm_backward(grad_out, self._cache)
        self.ggamma += gg
        self.gbeta += gb
        return gx

    def param_entries(self):
        return ((f"{self.name}.gamma", self.p.gamma, self.ggamma), (f"{self.name}.beta", self.p.beta, self.gbeta))

    def state_entries(self):
        return (
            (f"{self.name}.gamma", self.p.gamma),
            (f"{self.name}.beta", self.p.beta),
            (f"{self.name}.running_mean", self.p.running_mean),
            (f"{self.name}.running_var", self.p.running_var),
        )

    def param_count(self, in_shape) -> int:
        return 2 * self.channels


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, name, p):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout p must be in [0, 1), got {p}")
        self.p = p
        self._mask = None

    def forward(self, x, mode, rng):
        y, self._mask = dropout_forward(x, self.p, mode, rng)
        return y

    def backward(self, grad_out):
        return dropout_backward(grad_out, self._mask, self.p)


class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x, mode, rng):
        self._shape = x.shape
        return global_avgpool_forward(x)

    def backward(self, grad_out):
        return global_avgpool_backward(grad_out, self._shape)

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        return (n, c, 1, 1)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, mode, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def out_shape(self, in_shape):
        n = in_shape[0]
        d = int(np.prod(in_shape[1:]))
        return (n, d)


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, in_features, units):
        super().__init__(name)
        self.d = in_features
        self.m = units
        self.weight = self.bias = self.gweight = self.gbias = None
        self._x = None

    def init_params(self, in_shape, rng, dtype):
        scale = np.sqrt(2.0 / self.d)
        self.weight = (rng.normal((self.d, self.m)) * scale).astype(dtype)
        self.bias = np.zeros(self.m, dtype=dtype)
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)

    def forward(self, x, mode, rng):
        self._x = x
        return dense_forward(x, self.weight, self.bias)

    def backward(self, grad_out):
        gx, gw, gb = dense_backward(self._x, self.weight, grad_out)
        self.gweight += gw
        self.gbias += gb
        return gx

    def param_entries(self):
        return ((f"{self.name}.weight", self.weight, self.gweight), (f"{self.name}.bias", self.bias, self.gbias))

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.d:
            raise ShapeError(f"{self.name}: expects (n, {self.d}), got {in_shape}")
        return (in_shape[0], self.m)

    def param_count(self, in_shape) -> int:
        return self.d * self.m + self.m

    def mac_count(self, in_shape) -> int:
        return self.d * self.m
