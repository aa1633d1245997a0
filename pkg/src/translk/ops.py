"""Differentiable tensor operations.

Every op returns a :class:`~translk.tensor.Tensor` carrying its FLOP count
under these fixed conventions:

* one multiply-accumulate is 2 FLOPs; bias additions are not counted
* softmax / log-softmax: 5 FLOPs per element
* sigmoid, GELU: 4 FLOPs per element
* layer norm: 7 FLOPs per element
* elementwise add / multiply / scale, mean and average pooling: 1 per element
* channel pooling (mean and max): 2 per input element
* reshapes, transposes, concatenation and slicing: free

Convolutions use cross-correlation (no kernel flip).  Spatial tensors are
``(n, c, d, h, w)``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import Tensor, as_tensor, make_node

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), back, "add", out.size)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), back, "add", out.size)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), back, "mul", out.size)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    out = x.data * x.dtype.type(c)
    return make_node(out, (x,), lambda g: (g * x.dtype.type(c),), "scale", out.size)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_node(out, (a, b), back, "mul", out.size)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def back(g):
        return (g * out * (1.0 - out),)

    return make_node(out, (x,), back, "sigmoid", 4 * out.size)


def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the error function."""
    x = as_tensor(x)
    d = x.data
    cdf = 0.5 * (1.0 + erf(d / _SQRT2))
    out = (d * cdf).astype(d.dtype)

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * d * d)
        return ((g * (cdf + d * pdf)).astype(d.dtype),)

    return make_node(out, (x,), back, "gelu", 4 * out.size)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp", out.size)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)
    return make_node(out, (x,), lambda g: (g / x.data,), "log", out.size)


def dropout(x, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when ``p == 0`` or not training."""
    x = as_tensor(x)
    if p <= 0.0 or not training:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout with p > 0 needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    out = x.data * keep
    return make_node(out, (x,), lambda g: (g * keep,), "dropout", out.size)


# --- reductions and shape plumbing -----------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return make_node(out, (x,), back, "sum", x.size)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape: tuple) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes: tuple) -> Tensor:
    x = as_tensor(x)
    inv = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return make_node(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(xs, axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(xs)))

    return make_node(out, tuple(xs), back, "concat")


def channels(x, start: int, stop: int) -> Tensor:
    """Channel slice ``x[:, start:stop]``."""
    x = as_tensor(x)
    out = x.data[:, start:stop]

    def back(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return make_node(out, (x,), back, "slice")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)
    m, k = a.shape[-2:]
    flops = 2 * int(np.prod(out.shape)) * k

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), back, "matmul", flops)


# --- normalisation / probability -------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Softmax with max subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), back, "softmax", 5 * out.size)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), back, "softmax", 5 * out.size)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise each voxel's channel vector, then scale and shift per channel."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"layer_norm: gamma/beta must have shape ({c},), got {gamma.shape}, {beta.shape}")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def back(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gx_hat = g * gamma.data.reshape(bshape)
        gx = rstd * (gx_hat - gx_hat.mean(axis=1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=1, keepdims=True))
        return gx.astype(x.dtype), gg, gb

    return make_node(out.astype(x.dtype), (x, gamma, beta), back, "layer_norm", 7 * x.size)


# --- pooling -----------------------------------------------------------------

def global_avg_pool(x) -> Tensor:
    """Per-channel spatial mean, shape ``(n, c, 1, 1, 1)``."""
    x = as_tensor(x)
    axes = tuple(range(2, x.ndim))
    count = int(np.prod(x.shape[2:]))
    out = x.data.mean(axis=axes, keepdims=True)

    def back(g):
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype, copy=True),)

    return make_node(out, (x,), back, "pool", x.size)


def channel_pool(x) -> Tensor:
    """Stack of per-voxel channel mean (channel 0) and channel max (channel 1)."""
    x = as_tensor(x)
    c = x.shape[1]
    mean_ = x.data.mean(axis=1, keepdims=True)
    idx = x.data.argmax(axis=1)[:, None]
    max_ = np.take_along_axis(x.data, idx, axis=1)
    out = np.concatenate([mean_, max_], axis=1)

    def back(g):
        gx = np.broadcast_to(g[:, 0:1] / c, x.shape).astype(x.dtype, copy=True)
        np.put_along_axis(gx, idx, np.take_along_axis(gx, idx, axis=1) + g[:, 1:2], axis=1)
        return (gx,)

    return make_node(out, (x,), back, "pool", 2 * x.size)


# --- linear maps ---------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """Per-voxel channel map: ``y[:, o] = sum_c weight[o, c] * x[:, c] + bias[o]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    cout, cin = weight.shape
    if x.shape[1] != cin:
        raise ValueError(f"linear: input has {x.shape[1]} channels, weight expects {cin}")
    xl = np.moveaxis(x.data, 1, -1)
    yl = xl @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        yl = yl + bias.data
    out = np.ascontiguousarray(np.moveaxis(yl, -1, 1))
    vox = x.size // cin
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gl = np.moveaxis(g, 1, -1)
        gx = np.ascontiguousarray(np.moveaxis(gl @ weight.data, -1, 1))
        gw = gl.reshape(-1, cout).T @ xl.reshape(-1, cin)
        if bias is None:
            return gx, gw
        return gx, gw, gl.reshape(-1, cout).sum(axis=0)

    return make_node(out, parents, back, "linear", 2 * cin * cout * vox)


def conv3d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Direct 3D convolution (cross-correlation).

    ``weight`` is ``(c_out, c_in // groups, k, k, k)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 5:
        raise ValueError(f"conv3d: expected a rank-5 input, got shape {x.shape}")
    n, cin = x.shape[:2]
    cout, cpg = weight.shape[:2]
    if groups < 1 or cin % groups:
        raise ValueError(f"conv3d: groups={groups} does not divide input channels c_in={cin}")
    if cout % groups:
        raise ValueError(f"conv3d: groups={groups} does not divide output channels c_out={cout}")
    if cpg != cin // groups:
        raise ValueError(f"conv3d: weight has {cpg} input channels per group, "
                         f"expected c_in/groups = {cin}/{groups} = {cin // groups}")
    ks = weight.shape[2:]
    if any(d + 2 * padding < k for d, k in zip(x.shape[2:], ks)):
        raise ValueError(f"conv3d: kernel {ks} larger than padded input {x.shape[2:]} (padding {padding})")
    if groups == 1 and ks == (1, 1, 1) and stride == 1 and padding == 0:
        return linear(x, reshape(weight, (cout, cin)), bias)

    out = kernels.conv3d_forward(x.data, weight.data, stride, padding, groups)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, cout, 1, 1, 1)
    flops = 2 * cpg * int(np.prod(ks)) * out.size
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = kernels.conv3d_backward_input(g, weight.data, x.shape, stride, padding, groups) \
            if x.requires_grad else None
        gw = kernels.conv3d_backward_weight(g, x.data, weight.shape, stride, padding, groups)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return make_node(out, parents, back, "conv3d", flops)


def conv3d_transposed(x, weight, bias=None, stride: int = 2, padding: int = 0) -> Tensor:
    """Transposed 3D convolution: the adjoint of :func:`conv3d` in its input.

    ``weight`` is ``(c_in, c_out, k, k, k)``.  With ``k == stride`` and no
    padding the windows tile the output without overlap.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 5:
        raise ValueError(f"conv3d_transposed: expected a rank-5 input, got shape {x.shape}")
    n, cin = x.shape[:2]
    if weight.shape[0] != cin:
        raise ValueError(f"conv3d_transposed: input has {cin} channels, weight expects {weight.shape[0]}")
    cout = weight.shape[1]
    ks = weight.shape[2:]
    spatial = tuple((d - 1) * stride - 2 * padding + k for d, k in zip(x.shape[2:], ks))
    # same weight viewed as a forward conv (c_out_fwd = cin, c_in_fwd = cout)
    y_shape = (n, cout) + spatial
    tiled = ks == (stride,) * 3 and padding == 0
    if tiled:
        k = stride
        t = np.tensordot(x.data, weight.data, axes=([1], [0]))  # n,d,h,w,cout,k,k,k
        out = t.transpose(0, 4, 1, 5, 2, 6, 3, 7).reshape(y_shape)
    else:
        out = kernels.conv3d_backward_input(x.data, weight.data, y_shape, stride, padding, 1)
    out = np.ascontiguousarray(out)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, cout, 1, 1, 1)
    flops = 2 * cin * cout * int(np.prod(ks)) * (x.size // cin)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        if tiled:
            d, h, w = x.shape[2:]
            gt = g.reshape(n, cout, d, k, h, k, w, k).transpose(0, 2, 4, 6, 1, 3, 5, 7)
            gx = np.tensordot(gt, weight.data, axes=([4, 5, 6, 7], [1, 2, 3, 4])).transpose(0, 4, 1, 2, 3)
            gw = np.tensordot(x.data, gt, axes=([0, 2, 3, 4], [0, 1, 2, 3]))
            gx = np.ascontiguousarray(gx)
        else:
            gx = kernels.conv3d_forward(g, weight.data, stride, padding, 1)
            gw = kernels.conv3d_backward_weight(x.data, g, weight.shape, stride, padding, 1)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    return make_node(out, parents, back, "conv3d_transposed", flops)
