"""Time the compiled and numpy conv kernels on the shapes the network uses.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-``repeat`` time of every pass under each backend, the
speedup, and which backend the automatic router picks for that shape.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from translk import kernels

# (label, x shape, w shape, stride, padding, groups)
CASES = [
    ("depthwise k7, 32ch @ 16^3", (1, 32, 16, 16, 16), (32, 1, 7, 7, 7), 1, 3, 32),
    ("depthwise k3, 96ch @ 16^3", (1, 96, 16, 16, 16), (96, 1, 3, 3, 3), 1, 1, 96),
    ("spatial gate 2->1 k7 @ 24^3", (1, 2, 24, 24, 24), (1, 2, 7, 7, 7), 1, 3, 1),
    ("stem 1->48 k7 s2 @ 64^3", (1, 1, 64, 64, 64), (48, 1, 7, 7, 7), 2, 3, 1),
    ("dense 24->48 k3 s2 @ 16^3", (1, 24, 16, 16, 16), (48, 24, 3, 3, 3), 2, 1, 1),
]


def _passes(x, w, g, stride, padding, groups, backend):
    return {
        "fwd": lambda: kernels.conv3d_forward(x, w, stride, padding, groups, backend=backend),
        "bwd_x": lambda: kernels.conv3d_backward_input(g, w, x.shape, stride, padding, groups,
                                                       backend=backend),
        "bwd_w": lambda: kernels.conv3d_backward_weight(g, x, w.shape, stride, padding, groups,
                                                        backend=backend),
    }


def run(repeat: int) -> list[tuple]:
    rng = np.random.default_rng(0)
    rows = []
    for label, xs, ws, stride, padding, groups in CASES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        out = kernels.out_shape(xs[2:], ws[2:], stride, padding)
        g = rng.standard_normal((xs[0], ws[0]) + out).astype(np.float32)
        times = {}
        for backend in kernels.BACKENDS if kernels.HAVE_EXT else ("numpy",):
            for name, fn in _passes(x, w, g, stride, padding, groups, backend).items():
                times[backend, name] = min(timeit.repeat(fn, number=1, repeat=repeat))
        auto = "cython" if kernels._use_ext(ws, groups, None) else "numpy"
        rows.append((label, times, auto))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not kernels.HAVE_EXT:
        print("compiled extension not available; timing the numpy backend only")
    print(f"{'case':<30} {'pass':<6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}  auto")
    for label, times, auto in run(args.repeat):
        for name in ("fwd", "bwd_x", "bwd_w"):
            t_np = times["numpy", name] * 1e3
            t_cy = times.get(("cython", name))
            if t_cy is None:
                print(f"{label:<30} {name:<6} {t_np:>10.2f} {'-':>10} {'-':>8}  {auto}")
            else:
                print(f"{label:<30} {name:<6} {t_np:>10.2f} {t_cy * 1e3:>10.2f} "
                      f"{t_np / (t_cy * 1e3):>7.2f}x  {auto}")
            label, auto = "", ""


if __name__ == "__main__":
    main()
