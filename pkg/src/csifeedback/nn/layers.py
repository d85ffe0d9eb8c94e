"""Layer math for the minimal layer-graph engine.

All tensors are plain numpy arrays: 4-D activations are (batch, height,
width, channels), 2-D activations are (batch, features). Each layer kind
has a forward function and a backward function returning gradients w.r.t.
inputs and parameters. Convolutions are stride-1 with odd kernels and
zero same-padding, which is the only variant the networks here need.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, NumericError

# Convolution arithmetic backend. The numpy implementation is the
# canonical one; torch (CPU) computes the same three products much
# faster on small-channel layers and is used when importable unless
# CSIFEEDBACK_CONV_BACKEND=numpy is set.
_CONV_BACKEND = None


def conv_backend():
    global _CONV_BACKEND
    if _CONV_BACKEND is None:
        choice = os.environ.get("CSIFEEDBACK_CONV_BACKEND", "auto")
        if choice not in ("auto", "numpy", "torch"):
            raise ConfigurationError(
                f"CSIFEEDBACK_CONV_BACKEND must be auto|numpy|torch, got {choice!r}"
            )
        if choice == "numpy":
            _CONV_BACKEND = "numpy"
        else:
            try:
                import torch  # noqa: F401

                _CONV_BACKEND = "torch"
            except ImportError:
                if choice == "torch":
                    raise ConfigurationError("torch backend requested but not importable")
                _CONV_BACKEND = "numpy"
    return _CONV_BACKEND

LAYER_KINDS = (
    "conv2d",
    "dense",
    "batchnorm",
    "activation",
    "reshape",
    "concat",
    "slice",
    "residual_add",
)

ACTIVATIONS = ("sigmoid", "leaky_relu")


@dataclass
class LayerSpec:
    """Declarative description of one layer.

    ``inputs`` holds indices of producer layers inside a ModelGraph;
    index -1 denotes the graph input. Only the attributes relevant to
    ``kind`` are meaningful.
    """

    kind: str
    name: str = ""
    inputs: tuple = ()
    # conv2d
    kernel_size: int = 0
    in_channels: int = 0
    out_channels: int = 0
    # dense
    n_in: int = 0
    n_out: int = 0
    # activation
    activation: str = ""
    alpha: float = 0.3
    # batchnorm; bn_updates counts applied running-stat updates (state,
    # not configuration -- it drives the moving-average warmup)
    bn_eps: float = 1e-3
    bn_momentum: float = 0.99
    bn_updates: int = 0
    # reshape: per-sample target shape (batch excluded)
    target_shape: tuple = ()
    # slice along the last axis
    slice_start: int = 0
    slice_stop: int = 0

    def validate(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv2d":
            if self.kernel_size < 1 or self.kernel_size % 2 == 0:
                raise ConfigurationError(
                    f"conv2d {self.name!r}: kernel size must be odd, got {self.kernel_size}"
                )
            if self.in_channels < 1 or self.out_channels < 1:
                raise ConfigurationError(f"conv2d {self.name!r}: bad channel counts")
        if self.kind == "dense" and (self.n_in < 1 or self.n_out < 1):
            raise ConfigurationError(f"dense {self.name!r}: bad neuron counts")
        if self.kind == "activation" and self.activation not in ACTIVATIONS:
            raise ConfigurationError(
                f"activation {self.name!r}: unsupported {self.activation!r}"
            )
        if self.kind == "slice" and not (0 <= self.slice_start < self.slice_stop):
            raise ConfigurationError(f"slice {self.name!r}: bad range")


def truncated_normal_init(shape, stddev, seed):
    """Normal(0, stddev) samples with |x| > 2*stddev redrawn; seed-deterministic."""
    if stddev <= 0:
        raise ConfigurationError(f"stddev must be positive, got {stddev}")
    rng = np.random.default_rng(seed)
    out = rng.normal(0.0, stddev, size=shape)
    bad = np.abs(out) > 2.0 * stddev
    while bad.any():
        out[bad] = rng.normal(0.0, stddev, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * stddev
    return out


def _check_finite(x, where):
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values entering {where}")


# ---------------------------------------------------------------------------
# conv2d

def _im2col(x, k):
    """(B,H,W,C) -> (B*H*W, k*k*C) patch matrix for zero same-padding."""
    b, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (B,H,W,C,k,k)
    win = win.transpose(0, 1, 2, 4, 5, 3)               # (B,H,W,k,k,C)
    return win.reshape(b * h * w, k * k * c)


def conv2d_forward(x, kernel, bias):
    """Cross-correlation with zero same-padding, stride 1.

    kernel is (K, K, C_in, C_out); out[b,y,x,o] = bias[o] +
    sum_{dy,dx,i} kernel[dy,dx,i,o] * padded[b, y+dy, x+dx, i].
    """
    if x.ndim != 4:
        raise ConfigurationError(f"conv2d expects 4-D input, got shape {x.shape}")
    k, _, c_in, c_out = kernel.shape
    if x.shape[3] != c_in:
        raise ConfigurationError(
            f"conv2d: input has {x.shape[3]} channels, kernel expects {c_in}"
        )
    _check_finite(x, "conv2d")
    if conv_backend() == "torch" and x.dtype == np.float32:
        return _torch_conv_forward(x, kernel, bias)
    b, h, w, _ = x.shape
    col = _im2col(x, k)
    out = col @ kernel.reshape(k * k * c_in, c_out)
    out += bias
    return out.reshape(b, h, w, c_out)


def conv2d_backward(x, kernel, gout, need_input_grad=True):
    """Gradients of conv2d_forward; returns (gx, gkernel, gbias)."""
    if conv_backend() == "torch" and x.dtype == np.float32:
        return _torch_conv_backward(x, kernel, gout, need_input_grad)
    k, _, c_in, c_out = kernel.shape
    b, h, w, _ = x.shape
    gflat = gout.reshape(b * h * w, c_out)
    gbias = gflat.sum(axis=0)
    gkernel = (_im2col(x, k).T @ gflat).reshape(k, k, c_in, c_out)
    gx = None
    if need_input_grad:
        # input grad of a same-padded correlation is a same-padded
        # correlation of gout with the spatially flipped, channel-swapped kernel
        flipped = kernel[::-1, ::-1].transpose(0, 1, 3, 2)  # (k,k,C_out,C_in)
        gx = (_im2col(gout, k) @ flipped.reshape(k * k * c_out, c_in)).reshape(x.shape)
    return gx, gkernel, gbias


def _torch_nhwc(arr):
    """Wrap an NHWC numpy array as a channels_last torch tensor (no copy)."""
    import torch

    return torch.from_numpy(np.ascontiguousarray(arr)).permute(0, 3, 1, 2)


def _numpy_nhwc(tensor):
    return np.ascontiguousarray(tensor.permute(0, 2, 3, 1).numpy())


def _torch_conv_forward(x, kernel, bias):
    import torch
    import torch.nn.functional as F

    k = kernel.shape[0]
    t = _torch_nhwc(x)
    w = torch.from_numpy(np.ascontiguousarray(kernel.transpose(3, 2, 0, 1)))
    b = torch.from_numpy(bias)
    out = F.conv2d(t, w, b, padding=k // 2)
    return _numpy_nhwc(out)


def _torch_conv_backward(x, kernel, gout, need_input_grad):
    import torch

    k, _, c_in, c_out = kernel.shape
    p = k // 2
    xt = _torch_nhwc(x)
    gt = _torch_nhwc(gout)
    w = torch.from_numpy(np.ascontiguousarray(kernel.transpose(3, 2, 0, 1)))
    gx_t, gw_t, gb_t = torch.ops.aten.convolution_backward(
        gt, xt, w, [c_out], [1, 1], [p, p], [1, 1], False, [0, 0], 1,
        [need_input_grad, True, True],
    )
    gkernel = np.ascontiguousarray(gw_t.permute(2, 3, 1, 0).numpy())
    gx = _numpy_nhwc(gx_t) if need_input_grad else None
    return gx, gkernel, gb_t.numpy()


# ---------------------------------------------------------------------------
# dense

def dense_forward(x, weight, bias):
    if x.ndim != 2:
        raise ConfigurationError(f"dense expects 2-D input, got shape {x.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ConfigurationError(
            f"dense: input length {x.shape[1]} != weight rows {weight.shape[0]}"
        )
    _check_finite(x, "dense")
    return x @ weight + bias


def dense_backward(x, weight, gout, need_input_grad=True):
    gweight = x.T @ gout
    gbias = gout.sum(axis=0)
    gx = gout @ weight.T if need_input_grad else None
    return gx, gweight, gbias


# ---------------------------------------------------------------------------
# batch normalization

def _bn_axes(x):
    if x.ndim == 4:
        return (0, 1, 2)
    if x.ndim == 2:
        return (0,)
    raise ConfigurationError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")


def batchnorm_forward(x, params, mode, eps, momentum, updates=None):
    """Normalize per channel; train mode also updates running statistics.

    Batch variance is the biased (1/N) estimate, used both for the
    normalization and for the running-average update. The moving average
    warms up as a plain cumulative mean for the first updates (so the
    arbitrary 0/1 initialization never leaks into inference) and decays
    into the standard exponential average once t/(t+1) reaches the
    configured momentum. ``updates`` is the number of updates already
    applied; None keeps the plain exponential form.
    """
    axes = _bn_axes(x)
    if mode == "train" and x.shape[0] == 0:
        raise ConfigurationError("batchnorm: zero-size batch in train mode")
    use_torch = conv_backend() == "torch" and x.dtype == np.float32
    if mode == "train":
        if use_torch:
            mean, centered, var = _torch_bn_stats(x)
        else:
            flat = x.reshape(-1, x.shape[-1])
            mean = flat.mean(axis=0)
            centered = x - mean
            cflat = centered.reshape(-1, x.shape[-1])
            var = np.einsum("nc,nc->c", cflat, cflat) / cflat.shape[0]
        m_eff = momentum if updates is None else min(momentum, updates / (updates + 1.0))
        params["running_mean"] *= m_eff
        params["running_mean"] += (1.0 - m_eff) * mean
        params["running_var"] *= m_eff
        params["running_var"] += (1.0 - m_eff) * var
    else:
        mean = params["running_mean"]
        var = params["running_var"]
        centered = x - mean
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered
    xhat *= inv_std
    out = xhat * params["gamma"]
    out += params["beta"]
    return out, (xhat, inv_std, axes, mode)


def _torch_bn_stats(x):
    import torch

    t = torch.from_numpy(x)
    c = x.shape[-1]
    flat = t.reshape(-1, c)
    mean = flat.mean(0)
    centered = t - mean
    cflat = centered.reshape(-1, c)
    var = torch.einsum("nc,nc->c", cflat, cflat) / cflat.shape[0]
    return mean.numpy(), centered.numpy(), var.numpy()


def batchnorm_backward(cache, params, gout):
    xhat, inv_std, axes, mode = cache
    c = gout.shape[-1]
    gflat = gout.reshape(-1, c)
    gbeta = gflat.sum(axis=0)
    ggamma = np.einsum("nc,nc->c", gflat, xhat.reshape(-1, c))
    if mode == "train":
        n = gflat.shape[0]
        # gx = gamma*inv_std * (g - gbeta/n - xhat*ggamma/n), folding the
        # batch-statistics chain rule into the already-reduced sums
        gx = gout - gbeta / n
        gx -= xhat * (ggamma / n)
        gx *= params["gamma"] * inv_std
    else:
        gx = gout * (params["gamma"] * inv_std)
    return gx.astype(gout.dtype, copy=False), ggamma, gbeta


# ---------------------------------------------------------------------------
# activations

def activation_forward(x, name, alpha):
    if name == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-x))
        return out, out
    if name == "leaky_relu":
        # for 0 < alpha < 1, max(x, alpha*x) is exactly leaky-ReLU
        return np.maximum(x, alpha * x), x
    raise ConfigurationError(f"unsupported activation {name!r}")


def activation_backward(cache, name, alpha, gout):
    if name == "sigmoid":
        s = cache
        return gout * s * (1.0 - s)
    x = cache
    return np.where(x >= 0, gout, alpha * gout)


# ---------------------------------------------------------------------------
# loss

def mse_loss(pred, label):
    """Mean squared error over every element; returns (value, grad_wrt_pred)."""
    if pred.shape != label.shape:
        raise ConfigurationError(
            f"mse_loss: shape mismatch {pred.shape} vs {label.shape}"
        )
    diff = pred - label
    n = diff.size
    return float(np.mean(diff * diff)), (2.0 / n) * diff


def weighted_channel_mse(channel_weights, channels_per_branch=2):
    """Loss for multi-branch outputs concatenated along the channel axis.

    Each branch occupies ``channels_per_branch`` consecutive channels and
    contributes weight * (its own plain MSE), so the total equals
    sum_k c_k * MSE_k. Returns a (value, grad) loss callable.
    """
    w = np.asarray(channel_weights, dtype=np.float64)
    if (w <= 0).any():
        raise ConfigurationError("branch loss weights must be strictly positive")

    def loss(pred, label):
        if pred.shape != label.shape:
            raise ConfigurationError(
                f"weighted mse: shape mismatch {pred.shape} vs {label.shape}"
            )
        per_channel = np.repeat(w, channels_per_branch).astype(pred.dtype)
        if pred.shape[-1] != per_channel.size:
            raise ConfigurationError(
                f"weighted mse: expected {per_channel.size} channels, got {pred.shape[-1]}"
            )
        diff = pred - label
        # normalize by per-branch element count so each branch term is its MSE
        n_branch = diff.size // w.size
        value = float((per_channel * diff * diff).sum() / n_branch)
        grad = (2.0 / n_branch) * per_channel * diff
        return value, grad

    return loss
