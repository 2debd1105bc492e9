"""Network primitives with hand-written forward and backward passes.

Each primitive comes in two flavours: a pure function pair
(``*_forward`` returning ``(y, cache)`` and ``*_backward(cache, grad)``) and a
small layer object that owns its parameters and remembers the cache of the
most recent forward call. Computation follows the dtype of the inputs, so the
same code runs in float32 for training and float64 under the gradient checker.
"""

import numpy as np

from minibit import kernels
from minibit.errors import ConfigError, ShapeError

EPS_WS = 1e-10
EPS_GN = 1e-5
DEFAULT_GROUPS = 32


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check_nchw(x, what):
    if x.ndim != 4:
        raise ShapeError(f"{what} expects [N,C,H,W] input, got shape {x.shape}")


# ---------------------------------------------------------------------------
# Weight Standardization


def weight_standardize(w, eps=EPS_WS):
    """Standardize each output channel of ``w`` over its fan-in.

    Moments are taken in float64 so a constant channel maps to exact zeros.
    Returns ``(w_hat, inv_std)``; ``inv_std`` has shape ``[O, 1]``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    o = w.shape[0]
    flat = w.reshape(o, -1).astype(np.float64)
    mean = flat.mean(axis=1, keepdims=True)
    centered = flat - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    w_hat = (centered * inv_std).astype(w.dtype).reshape(w.shape)
    return w_hat, inv_std


def weight_standardize_backward(w_hat, inv_std, grad_w_hat):
    o = w_hat.shape[0]
    wh = w_hat.reshape(o, -1).astype(np.float64)
    g = grad_w_hat.reshape(o, -1).astype(np.float64)
    g_mean = g.mean(axis=1, keepdims=True)
    proj = (g * wh).mean(axis=1, keepdims=True)
    grad_w = inv_std * (g - g_mean - wh * proj)
    return grad_w.astype(grad_w_hat.dtype).reshape(w_hat.shape)


# ---------------------------------------------------------------------------
# Convolution


def conv_output_size(h, w, kernel, stride, padding):
    kh, kw = kernel
    sh, sw = stride
    ph, pw = padding
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def conv2d_forward(x, weight, bias=None, stride=1, padding=0, ws=False, eps=EPS_WS):
    """Cross-correlation of ``x [N,C,H,W]`` with ``weight [O,C,kh,kw]``."""
    _check_nchw(x, "conv2d")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    o, c, kh, kw = weight.shape
    n, cx, h, w = x.shape
    if cx != c:
        raise ShapeError(f"conv2d: input has {cx} channels, kernel expects {c}")
    ho, wo = conv_output_size(h, w, (kh, kw), (sh, sw), (ph, pw))
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{w} too small for kernel {kh}x{kw}")

    if ws:
        w_eff, inv_std = weight_standardize(weight, eps)
    else:
        w_eff, inv_std = weight, None

    pointwise = kh == 1 and kw == 1 and ph == 0 and pw == 0
    if pointwise:
        xs = x if sh == 1 and sw == 1 else x[:, :, ::sh, ::sw]
        cols = np.ascontiguousarray(xs).reshape(n, c, ho * wo)
    else:
        cols = kernels.im2col(x, kh, kw, sh, sw, ph, pw)
    wmat = w_eff.reshape(o, -1)
    y = np.matmul(wmat, cols)  # per-sample GEMM keeps samples independent
    if bias is not None:
        y += bias.reshape(1, o, 1)
    y = y.reshape(n, o, ho, wo)
    cache = {
        "x_shape": x.shape, "cols": cols, "w_eff": w_eff, "inv_std": inv_std,
        "stride": (sh, sw), "padding": (ph, pw), "kernel": (kh, kw),
        "pointwise": pointwise, "has_bias": bias is not None,
    }
    return y, cache


def conv2d_backward(cache, grad_out):
    """Returns ``(grad_x, grad_weight, grad_bias)``; ``grad_weight`` is w.r.t. raw weights."""
    n, c, h, w = cache["x_shape"]
    w_eff = cache["w_eff"]
    o = w_eff.shape[0]
    kh, kw = cache["kernel"]
    sh, sw = cache["stride"]
    ph, pw = cache["padding"]
    ho, wo = conv_output_size(h, w, (kh, kw), (sh, sw), (ph, pw))
    if grad_out.shape != (n, o, ho, wo):
        raise ShapeError(f"conv2d backward: grad shape {grad_out.shape} != {(n, o, ho, wo)}")
    g = grad_out.reshape(n, o, ho * wo)
    cols = cache["cols"]

    grad_wmat = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
    grad_w_eff = grad_wmat.reshape(w_eff.shape).astype(w_eff.dtype, copy=False)
    grad_b = g.sum(axis=(0, 2), dtype=np.float64).astype(grad_out.dtype) if cache["has_bias"] else None

    dcols = np.matmul(w_eff.reshape(o, -1).T, g)
    if cache["pointwise"]:
        if sh == 1 and sw == 1:
            grad_x = dcols.reshape(n, c, h, w)
        else:
            grad_x = np.zeros((n, c, h, w), dtype=dcols.dtype)
            grad_x[:, :, ::sh, ::sw] = dcols.reshape(n, c, ho, wo)
    else:
        grad_x = kernels.col2im(dcols, (n, c, h, w), kh, kw, sh, sw, ph, pw)

    if cache["inv_std"] is not None:
        grad_w = weight_standardize_backward(w_eff, cache["inv_std"], grad_w_eff)
    else:
        grad_w = grad_w_eff
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Group Normalization


def group_norm_forward(x, gamma, beta, groups, eps=EPS_GN):
    _check_nchw(x, "group_norm")
    n, c, h, w = x.shape
    if c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible by {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"group_norm: gamma/beta must have shape ({c},)")
    xg = x.reshape(n, groups, -1)
    mean = xg.mean(axis=2, keepdims=True, dtype=np.float64)
    var = xg.var(axis=2, keepdims=True, dtype=np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mean.astype(x.dtype)) * inv_std.astype(x.dtype)).reshape(n, c, h, w)
    y = xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)
    cache = {"xhat": xhat, "mean": mean, "var": var, "inv_std": inv_std,
             "gamma": gamma, "groups": groups}
    return y, cache


def group_norm_backward(cache, grad_out):
    xhat = cache["xhat"]
    if grad_out.shape != xhat.shape:
        raise ShapeError(f"group_norm backward: grad shape {grad_out.shape} != {xhat.shape}")
    n, c, h, w = xhat.shape
    groups = cache["groups"]
    gamma = cache["gamma"]
    dt = grad_out.dtype
    grad_beta = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(dt)
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3), dtype=np.float64).astype(dt)
    dxhat = (grad_out * gamma.reshape(1, c, 1, 1)).reshape(n, groups, -1)
    xh = xhat.reshape(n, groups, -1)
    m1 = dxhat.mean(axis=2, keepdims=True, dtype=np.float64).astype(dt)
    m2 = (dxhat * xh).mean(axis=2, keepdims=True, dtype=np.float64).astype(dt)
    grad_x = cache["inv_std"].astype(dt) * (dxhat - m1 - xh * m2)
    return grad_x.reshape(n, c, h, w), grad_gamma, grad_beta


def default_groups(channels, max_groups=DEFAULT_GROUPS):
    g = min(max_groups, channels)
    while channels % g:
        g -= 1
    return g


# ---------------------------------------------------------------------------
# Activations, pooling, dense


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    if grad_out.shape != x.shape:
        raise ShapeError("relu backward: shape mismatch")
    return grad_out * (x > 0)


def max_pool_forward(x, window=3, stride=2, padding=1):
    _check_nchw(x, "max_pool")
    kh, kw = _pair(window)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    h, w = x.shape[2:]
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"max_pool: window {kh}x{kw} larger than padded input")
    if ph >= kh or pw >= kw:
        raise ShapeError("max_pool: padding must be smaller than the window")
    y, argmax = kernels.maxpool_forward(x, kh, kw, sh, sw, ph, pw)
    return y, {"argmax": argmax, "x_shape": x.shape}


def max_pool_backward(cache, grad_out):
    if grad_out.shape != cache["argmax"].shape:
        raise ShapeError("max_pool backward: shape mismatch")
    return kernels.maxpool_backward(grad_out, cache["argmax"], cache["x_shape"])


def global_avg_pool_forward(x):
    _check_nchw(x, "global_avg_pool")
    y = x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)
    return y, {"x_shape": x.shape}


def global_avg_pool_backward(cache, grad_out):
    n, c, h, w = cache["x_shape"]
    if grad_out.shape != (n, c):
        raise ShapeError("global_avg_pool backward: shape mismatch")
    g = (grad_out / (h * w)).astype(grad_out.dtype)
    return np.broadcast_to(g[:, :, None, None], (n, c, h, w)).copy()


def dense_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    y = np.matmul(x[:, None, :], weight.T)[:, 0, :] + bias
    return y, {"x": x, "weight": weight}


def dense_backward(cache, grad_out):
    x, weight = cache["x"], cache["weight"]
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ShapeError("dense backward: shape mismatch")
    grad_x = np.matmul(grad_out[:, None, :], weight)[:, 0, :]
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0, dtype=np.float64).astype(grad_out.dtype)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# Stateful wrappers used to compose models


class Conv2d:
    def __init__(self, weight, stride=1, padding=0, ws=True, eps=EPS_WS, bias=None):
        if weight.ndim != 4 or min(weight.shape) < 1:
            raise ShapeError(f"conv weight must be [O,I,kh,kw], got {weight.shape}")
        self.weight = weight
        self.bias = bias
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.ws = ws
        self.eps = eps
        self._cache = None

    def params(self):
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def forward(self, x):
        y, self._cache = conv2d_forward(x, self.weight, self.bias, self.stride,
                                        self.padding, self.ws, self.eps)
        return y

    def backward(self, grad_out):
        gx, gw, gb = conv2d_backward(self._cache, grad_out)
        self._cache = None
        grads = {"weight": gw}
        if self.bias is not None:
            grads["bias"] = gb
        return gx, grads


class GroupNorm:
    def __init__(self, gamma, beta, groups, eps=EPS_GN):
        if gamma.shape[0] % groups:
            raise ConfigError(f"{gamma.shape[0]} channels not divisible by {groups} groups")
        self.gamma = gamma
        self.beta = beta
        self.groups = groups
        self.eps = eps
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def forward(self, x):
        y, self._cache = group_norm_forward(x, self.gamma, self.beta, self.groups, self.eps)
        return y

    def backward(self, grad_out):
        gx, gg, gb = group_norm_backward(self._cache, grad_out)
        self._cache = None
        return gx, {"gamma": gg, "beta": gb}


class ReLU:
    def __init__(self):
        self._x = None

    def params(self):
        return {}

    def forward(self, x):
        self._x = x
        return relu(x)

    def backward(self, grad_out):
        gx = relu_backward(self._x, grad_out)
        self._x = None
        return gx, {}


class MaxPool2d:
    def __init__(self, window=3, stride=2, padding=1):
        self.window, self.stride, self.padding = window, stride, padding
        self._cache = None

    def params(self):
        return {}

    def forward(self, x):
        y, self._cache = max_pool_forward(x, self.window, self.stride, self.padding)
        return y

    def backward(self, grad_out):
        return max_pool_backward(self._cache, grad_out), {}


class GlobalAvgPool:
    def __init__(self):
        self._cache = None

    def params(self):
        return {}

    def forward(self, x):
        y, self._cache = global_avg_pool_forward(x)
        return y

    def backward(self, grad_out):
        return global_avg_pool_backward(self._cache, grad_out), {}


class Dense:
    def __init__(self, weight, bias):
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError(f"dense weight {weight.shape} / bias {bias.shape} inconsistent")
        self.weight = weight
        self.bias = bias
        self._cache = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x):
        y, self._cache = dense_forward(x, self.weight, self.bias)
        return y

    def backward(self, grad_out):
        gx, gw, gb = dense_backward(self._cache, grad_out)
        self._cache = None
        return gx, {"weight": gw, "bias": gb}
