"""Pure-numpy convolution kernels (the fallback backend).

Direct convolution evaluated tap by tap: for each kernel offset the strided
window of the padded input is contracted against that offset's weight slice.
Cross-correlation convention (no kernel flip), weights laid out as
``(c_out, c_in // groups, kd, kh, kw)``.
"""
from __future__ import annotations

import numpy as np

NAME = "numpy"


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _window(xp: np.ndarray, a: int, b: int, e: int, out: tuple, stride: int) -> np.ndarray:
    od, oh, ow = out
    s = stride
    return xp[:, :, a:a + s * (od - 1) + 1:s, b:b + s * (oh - 1) + 1:s, e:e + s * (ow - 1) + 1:s]


def out_shape(in_shape: tuple, k: tuple, stride: int, padding: int) -> tuple:
    return tuple((d + 2 * padding - kk) // stride + 1 for d, kk in zip(in_shape, k))


def _is_depthwise(cin: int, cout: int, groups: int) -> bool:
    return groups == cin and cout == cin


def conv3d_forward(x, w, stride, padding, groups):
    n, cin = x.shape[:2]
    cout, cpg, k1, k2, k3 = w.shape
    out = out_shape(x.shape[2:], (k1, k2, k3), stride, padding)
    xp = _pad(x, padding)
    if _is_depthwise(cin, cout, groups):
        y = np.zeros((n, cout) + out, dtype=x.dtype)
        for a in range(k1):
            for b in range(k2):
                for e in range(k3):
                    y += w[:, 0, a, b, e][None, :, None, None, None] * _window(xp, a, b, e, out, stride)
        return y
    if groups != 1:
        opg = cout // groups
        parts = [conv3d_forward(x[:, g * cpg:(g + 1) * cpg], w[g * opg:(g + 1) * opg], stride, padding, 1)
                 for g in range(groups)]
        return np.concatenate(parts, axis=1)
    acc = np.zeros((n,) + out + (cout,), dtype=x.dtype)
    for a in range(k1):
        for b in range(k2):
            for e in range(k3):
                acc += np.tensordot(_window(xp, a, b, e, out, stride), w[:, :, a, b, e], axes=([1], [1]))
    return np.ascontiguousarray(acc.transpose(0, 4, 1, 2, 3))


def conv3d_backward_input(g, w, x_shape, stride, padding, groups):
    n, cin, D, H, W = x_shape
    cout, cpg, k1, k2, k3 = w.shape
    out = g.shape[2:]
    p = padding
    gxp = np.zeros((n, cin, D + 2 * p, H + 2 * p, W + 2 * p), dtype=g.dtype)
    if _is_depthwise(cin, cout, groups):
        for a in range(k1):
            for b in range(k2):
                for e in range(k3):
                    _window(gxp, a, b, e, out, stride)[...] += w[:, 0, a, b, e][None, :, None, None, None] * g
    elif groups != 1:
        opg = cout // groups
        for gi in range(groups):
            sub = conv3d_backward_input(g[:, gi * opg:(gi + 1) * opg], w[gi * opg:(gi + 1) * opg],
                                        (n, cpg, D, H, W), stride, padding, 1)
            gxp[:, gi * cpg:(gi + 1) * cpg, p:p + D, p:p + H, p:p + W] = sub
        return gxp[:, :, p:p + D, p:p + H, p:p + W].copy()
    else:
        gl = g.transpose(0, 2, 3, 4, 1)
        for a in range(k1):
            for b in range(k2):
                for e in range(k3):
                    contrib = gl @ w[:, :, a, b, e]
                    _window(gxp, a, b, e, out, stride)[...] += contrib.transpose(0, 4, 1, 2, 3)
    return gxp[:, :, p:p + D, p:p + H, p:p + W].copy()


def conv3d_backward_weight(g, x, w_shape, stride, padding, groups):
    cout, cpg, k1, k2, k3 = w_shape
    cin = x.shape[1]
    out = g.shape[2:]
    xp = _pad(x, padding)
    gw = np.zeros(w_shape, dtype=g.dtype)
    if _is_depthwise(cin, cout, groups):
        for a in range(k1):
            for b in range(k2):
                for e in range(k3):
                    gw[:, 0, a, b, e] = np.einsum("ncdhw,ncdhw->c", g, _window(xp, a, b, e, out, stride))
        return gw
    if groups != 1:
        opg = cout // groups
        for gi in range(groups):
            gw[gi * opg:(gi + 1) * opg] = conv3d_backward_weight(
                g[:, gi * opg:(gi + 1) * opg], x[:, gi * cpg:(gi + 1) * cpg],
                (opg, cpg, k1, k2, k3), stride, padding, 1)
        return gw
    for a in range(k1):
        for b in range(k2):
            for e in range(k3):
                gw[:, :, a, b, e] = np.tensordot(g, _window(xp, a, b, e, out, stride),
                                                 axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    return gw
