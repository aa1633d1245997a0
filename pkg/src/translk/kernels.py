"""Convolution kernel backend selection.

The compiled extension (``translk._kernels_ext``) is used when it imports
cleanly; otherwise the numpy implementation in ``translk._kernels_np`` is
used.  Set ``TRANSLK_BACKEND=numpy`` to force the fallback.

The compiled loops only win when each group maps few input channels to few
output channels (depthwise filters, the 2 -> 1 spatial-gate conv).  Anything
wider, the 1 -> 48 stem included, goes through numpy so that each kernel tap
is a BLAS contraction; ``benchmarks/bench_kernels.py`` shows the crossover.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_np

try:
    if os.environ.get("TRANSLK_BACKEND", "").lower() in ("numpy", "python"):
        raise ImportError("compiled backend disabled by TRANSLK_BACKEND")
    from . import _kernels_ext
except ImportError:
    _kernels_ext = None

HAVE_EXT = _kernels_ext is not None
BACKEND = "cython" if HAVE_EXT else "numpy"
BACKENDS = ("cython", "numpy")

# largest (in-channels x out-channels) per group routed to the compiled loops
EXT_MAX_GROUP_WORK = 8

out_shape = _kernels_np.out_shape


def _use_ext(w_shape: tuple, groups: int, backend: str | None) -> bool:
    """Explicit ``backend`` names are obeyed; ``None`` routes by group size."""
    if backend is not None and backend not in BACKENDS:
        raise ValueError(f"unknown conv backend {backend!r}; expected one of {BACKENDS}")
    if backend == "numpy" or _kernels_ext is None:
        return False
    if backend == "cython":
        return True
    return w_shape[1] * (w_shape[0] // groups) <= EXT_MAX_GROUP_WORK


def conv3d_forward(x, w, stride=1, padding=0, groups=1, backend=None):
    if not _use_ext(w.shape, groups, backend):
        return _kernels_np.conv3d_forward(x, w, stride, padding, groups)
    dt = np.result_type(x.dtype, w.dtype)
    xp = np.ascontiguousarray(_kernels_np._pad(x, padding), dtype=dt)
    out = out_shape(x.shape[2:], w.shape[2:], stride, padding)
    y = np.zeros((x.shape[0], w.shape[0]) + out, dtype=dt)
    _kernels_ext.conv_forward(xp, np.ascontiguousarray(w, dtype=dt), y, stride, groups)
    return y


def conv3d_backward_input(g, w, x_shape, stride=1, padding=0, groups=1, backend=None):
    if not _use_ext(w.shape, groups, backend):
        return _kernels_np.conv3d_backward_input(g, w, x_shape, stride, padding, groups)
    dt = np.result_type(g.dtype, w.dtype)
    n, cin, D, H, W = x_shape
    p = padding
    gxp = np.zeros((n, cin, D + 2 * p, H + 2 * p, W + 2 * p), dtype=dt)
    _kernels_ext.conv_backward_input(np.ascontiguousarray(g, dtype=dt),
                                     np.ascontiguousarray(w, dtype=dt), gxp, stride, groups)
    return gxp[:, :, p:p + D, p:p + H, p:p + W].copy()


def conv3d_backward_weight(g, x, w_shape, stride=1, padding=0, groups=1, backend=None):
    if not _use_ext(w_shape, groups, backend):
        return _kernels_np.conv3d_backward_weight(g, x, w_shape, stride, padding, groups)
    dt = np.result_type(g.dtype, x.dtype)
    xp = np.ascontiguousarray(_kernels_np._pad(x, padding), dtype=dt)
    gw = np.zeros(w_shape, dtype=dt)
    _kernels_ext.conv_backward_weight(np.ascontiguousarray(g, dtype=dt), xp, gw, stride, groups)
    return gw
