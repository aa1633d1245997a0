"""Convolution kernels: both backends against the loop oracle and each other."""
import numpy as np
import pytest

from translk import _kernels_np, kernels, ops
from translk.tensor import Tensor

import oracles

BACKENDS = ["numpy"] + (["cython"] if kernels.HAVE_EXT else [])

CASES = [
    # cin, cout, k, stride, padding, groups
    (3, 4, 3, 1, 1, 1),
    (3, 2, 3, 2, 1, 1),
    (4, 6, 3, 1, 0, 2),
    (6, 6, 5, 1, 2, 6),
    (2, 1, 7, 1, 3, 1),
    (1, 3, 7, 2, 3, 1),
    (6, 6, 1, 1, 0, 6),
    (6, 3, 2, 2, 0, 3),
]


def _ids(case):
    return "cin{}-cout{}-k{}-s{}-p{}-g{}".format(*case)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("case", CASES, ids=_ids)
class TestAgainstOracle:
    def _data(self, case, rng):
        cin, cout, k, s, p, g = case
        x = rng.standard_normal((2, cin, 5, 5, 5))
        w = rng.standard_normal((cout, cin // g, k, k, k))
        return x, w

    def test_forward(self, case, backend, rng):
        cin, cout, k, s, p, g = case
        x, w = self._data(case, rng)
        got = kernels.conv3d_forward(x, w, s, p, g, backend=backend)
        np.testing.assert_allclose(got, oracles.conv3d(x, w, None, s, p, g), atol=1e-10)

    def test_adjoints(self, case, backend, rng):
        """<conv(x), g> == <x, conv_T(g)> == <w, grad_w(g, x)>."""
        cin, cout, k, s, p, g = case
        x, w = self._data(case, rng)
        y = kernels.conv3d_forward(x, w, s, p, g, backend=backend)
        gy = rng.standard_normal(y.shape)
        gx = kernels.conv3d_backward_input(gy, w, x.shape, s, p, g, backend=backend)
        gw = kernels.conv3d_backward_weight(gy, x, w.shape, s, p, g, backend=backend)
        lhs = float((y * gy).sum())
        assert float((x * gx).sum()) == pytest.approx(lhs, rel=1e-10)
        assert float((w * gw).sum()) == pytest.approx(lhs, rel=1e-10)


@pytest.mark.skipif(not kernels.HAVE_EXT, reason="compiled extension not built")
class TestBackendsAgree:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_depthwise_large_kernel(self, rng, dtype):
        x = rng.standard_normal((2, 4, 8, 7, 9)).astype(dtype)
        w = rng.standard_normal((4, 1, 7, 7, 7)).astype(dtype)
        a = kernels.conv3d_forward(x, w, 1, 3, 4, backend="numpy")
        b = kernels.conv3d_forward(x, w, 1, 3, 4, backend="cython")
        assert b.dtype == dtype
        np.testing.assert_allclose(a, b, rtol=1e-4 if dtype == np.float32 else 1e-12, atol=1e-4)

    def test_non_contiguous_input(self, rng):
        x = rng.standard_normal((2, 5, 6, 6, 3)).transpose(0, 4, 1, 2, 3)
        w = rng.standard_normal((3, 1, 3, 3, 3))
        a = kernels.conv3d_forward(x, w, 1, 1, 3, backend="numpy")
        b = kernels.conv3d_forward(x, w, 1, 1, 3, backend="cython")
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestBackendSelection:
    def test_backend_name(self):
        assert kernels.BACKEND in ("cython", "numpy")
        assert _kernels_np.NAME == "numpy"

    def test_unknown_backend(self, rng):
        x, w = rng.standard_normal((1, 1, 3, 3, 3)), rng.standard_normal((1, 1, 3, 3, 3))
        with pytest.raises(ValueError, match="backend"):
            kernels.conv3d_forward(x, w, 1, 1, 1, backend="fortran")


class TestConvOp:
    def test_matches_oracle_with_bias(self, rng):
        x = rng.standard_normal((2, 6, 5, 5, 5))
        w = rng.standard_normal((6, 2, 3, 3, 3))
        b = rng.standard_normal(6)
        got = ops.conv3d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1, groups=3).data
        np.testing.assert_allclose(got, oracles.conv3d(x, w, b, 2, 1, 3), atol=1e-10)

    def test_pointwise_path(self, rng):
        x = rng.standard_normal((2, 4, 3, 2, 3))
        w = rng.standard_normal((5, 4, 1, 1, 1))
        got = ops.conv3d(Tensor(x), Tensor(w)).data
        np.testing.assert_allclose(got, oracles.conv3d(x, w), atol=1e-12)

    @pytest.mark.parametrize("groups, cin, wshape, msg", [
        (4, 6, (6, 1, 3, 3, 3), "c_in=6"),
        (2, 6, (5, 3, 3, 3, 3), "c_out=5"),
        (2, 6, (6, 2, 3, 3, 3), "6/2"),
    ])
    def test_errors_name_dims(self, groups, cin, wshape, msg, rng):
        x = Tensor(rng.standard_normal((1, cin, 4, 4, 4)))
        with pytest.raises(ValueError, match=msg):
            ops.conv3d(x, Tensor(rng.standard_normal(wshape)), padding=1, groups=groups)

    def test_kernel_larger_than_input(self, rng):
        with pytest.raises(ValueError, match="larger than padded input"):
            ops.conv3d(Tensor(rng.standard_normal((1, 1, 2, 2, 2))),
                       Tensor(rng.standard_normal((1, 1, 5, 5, 5))))

    @pytest.mark.parametrize("k, stride, padding", [(2, 2, 0), (3, 2, 1)])
    def test_transposed_matches_scatter_oracle(self, k, stride, padding, rng):
        x = rng.standard_normal((2, 3, 2, 3, 2))
        w = rng.standard_normal((3, 4, k, k, k))
        b = rng.standard_normal(4)
        got = ops.conv3d_transposed(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
        ref = oracles.conv3d_transposed(x, w, b, stride)
        if padding:
            ref = ref[:, :, padding:-padding, padding:-padding, padding:-padding]
        np.testing.assert_allclose(got, ref, atol=1e-10)

    def test_transposed_doubles_resolution(self, rng):
        y = ops.conv3d_transposed(Tensor(rng.standard_normal((1, 8, 3, 4, 5))),
                                  Tensor(rng.standard_normal((8, 4, 2, 2, 2))))
        assert y.shape == (1, 4, 6, 8, 10)
