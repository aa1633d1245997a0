import numpy as np
import pytest

from translk.codec import CED, CFI, PFI, PlainFusion, Skip, build_model, cross_group
from translk.config import ModelConfig
from translk.tensor import Tensor

import oracles
from conftest import as_f64, randomize
from test_blocks import _desa_params, _gate_c, _gate_s, _mhlk, _zero

TINY = ModelConfig(num_classes=3, base_channels=6, stage_channels=(6, 12, 24, 48))


class TestCrossGroup:
    def test_partition(self):
        skip = np.arange(4).reshape(1, 4, 1, 1, 1) * np.ones((1, 4, 2, 2, 2))
        up = skip + 10
        x1, x2 = cross_group(Tensor(skip), Tensor(up))
        assert x1.data[0, :, 0, 0, 0].tolist() == [0, 1, 10, 11]
        assert x2.data[0, :, 0, 0, 0].tolist() == [2, 3, 12, 13]

    def test_bijection_on_channel_slots(self, rng):
        skip, up = rng.standard_normal((2, 8, 2, 2, 2)), rng.standard_normal((2, 8, 2, 2, 2))
        x1, x2 = cross_group(Tensor(skip), Tensor(up))
        every = np.concatenate([x1.data, x2.data], axis=1)
        original = np.concatenate([skip, up], axis=1)
        assert sorted(every.ravel().tolist()) == sorted(original.ravel().tolist())
        assert x1.shape == x2.shape == skip.shape

    def test_errors(self, rng):
        with pytest.raises(ValueError, match="odd"):
            cross_group(Tensor(np.ones((1, 3, 2, 2, 2))), Tensor(np.ones((1, 3, 2, 2, 2))))
        with pytest.raises(ValueError, match="skip"):
            cross_group(Tensor(np.ones((1, 4, 2, 2, 2))), Tensor(np.ones((1, 4, 2, 2, 4))))


class TestFusion:
    SHAPE = (2, 6, 3, 3, 4)

    def _inputs(self, rng):
        return rng.standard_normal(self.SHAPE), rng.standard_normal(self.SHAPE)

    @staticmethod
    def _split(skip, up):
        h = skip.shape[1] // 2
        return (np.concatenate([skip[:, :h], up[:, :h]], axis=1),
                np.concatenate([skip[:, h:], up[:, h:]], axis=1))

    def test_pfi_composed_oracle(self, rng):
        m = randomize(as_f64(PFI(6, 3, rng)), rng)
        skip, up = self._inputs(rng)
        x1, x2 = self._split(skip, up)
        a = _mhlk(m.mhlk, x1)
        a = _gate_c(m.ch, a, a)
        a = _gate_s(m.sp, a, a)
        ref = oracles.desa(x2, x2, a, _desa_params(m.desa), 3)
        np.testing.assert_allclose(m(Tensor(skip), Tensor(up)).data, ref, atol=1e-9)

    def test_cfi_composed_oracle(self, rng):
        m = randomize(as_f64(CFI(6, 3, rng)), rng)
        skip, up = self._inputs(rng)
        x1, x2 = self._split(skip, up)
        lk = _mhlk(m.mhlk, x1)
        sa = oracles.desa(x2, x2, x2, _desa_params(m.desa), 3)
        ref = _gate_s(m.sp, lk, sa) + _gate_c(m.ch, sa, lk)
        np.testing.assert_allclose(m(Tensor(skip), Tensor(up)).data, ref, atol=1e-9)

    def test_ced_path_isolation(self, rng):
        """Zeroing the PFI output projection (and its block's branches) leaves the CFI path."""
        m = as_f64(CED(6, 3, rng))
        _zero(m.pfi.desa.out, m.ctlk.mixer.desa.out, *m.ctlk.mixer.mhlk.convs, m.ctlk.mlp.down)
        skip, up = (Tensor(a) for a in self._inputs(rng))
        np.testing.assert_allclose(m(skip, up).data, m.ptlk(m.cfi(skip, up)).data, atol=1e-12)

    @pytest.mark.parametrize("cls", [CED, PlainFusion])
    def test_shapes_and_zero_input(self, cls, rng):
        m = cls(6, 3, rng)
        z = Tensor(np.zeros(self.SHAPE, np.float32))
        out = m(z, z)
        assert out.shape == self.SHAPE and np.all(np.isfinite(out.data))

    def test_plain_fusion_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="plain fusion"):
            PlainFusion(6, 3, rng)(Tensor(np.ones((1, 6, 2, 2, 2))), Tensor(np.ones((1, 6, 2, 2, 4))))


@pytest.fixture(scope="module")
def model():
    return build_model(TINY)


class TestNetwork:
    @pytest.mark.parametrize("size", [32, 64])
    def test_output_matches_input_dims(self, model, size, rng):
        x = Tensor(rng.standard_normal((1, 1, size, size, 32)).astype(np.float32))
        out = model(x)
        assert out.shape == (1, 3, size, size, 32)
        assert np.all(np.isfinite(out.data))

    def test_skip_schedule(self, model, rng):
        x = model.stem_encode(Tensor(rng.standard_normal((1, 1, 64, 64, 64)).astype(np.float32)))
        bottom, skips = model.encoder_forward(x)
        assert [s.stage for s in skips] == [0, 1, 2, 3]
        assert [s.tensor.shape for s in skips] == [(1, 6, 32, 32, 32), (1, 6, 16, 16, 16),
                                                   (1, 12, 8, 8, 8), (1, 24, 4, 4, 4)]
        assert bottom.shape == (1, 48, 2, 2, 2)

    def test_deterministic(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 32, 32, 32)).astype(np.float32))
        a, b = build_model(TINY)(x).data, build_model(TINY)(x).data
        np.testing.assert_array_equal(a, b)

    def test_plain_variant_same_shape(self, rng):
        x = Tensor(rng.standard_normal((1, 1, 32, 32, 32)).astype(np.float32))
        cfg = ModelConfig(**{**TINY.__dict__, "decoder_variant": "plain_concat"})
        assert build_model(cfg)(x).shape == build_model(TINY)(x).shape

    def test_wide_schedule_skips(self, rng):
        cfg = ModelConfig(num_classes=2, base_channels=6, stage_channels=(12, 24, 48, 96),
                          schedule_variant="wide")
        model = build_model(cfg)
        x = model.stem_encode(Tensor(rng.standard_normal((1, 1, 32, 32, 32)).astype(np.float32)))
        _, skips = model.encoder_forward(x)
        assert [s.tensor.shape[1] for s in skips] == [12, 24, 48, 96]
        assert model(Tensor(np.zeros((1, 1, 32, 32, 32), np.float32))).shape == (1, 2, 32, 32, 32)

    def test_head_resolution(self, model, rng):
        out = model.predict_head(Tensor(rng.standard_normal((1, 6, 4, 5, 6)).astype(np.float32)))
        assert out.shape == (1, 3, 8, 10, 12)

    @pytest.mark.parametrize("shape, msg", [
        ((1, 1, 32, 32), "expected"), ((1, 2, 32, 32, 32), "input channels"),
        ((1, 1, 32, 48, 32), "divisible by 32"),
    ])
    def test_input_errors(self, model, shape, msg):
        with pytest.raises(ValueError, match=msg):
            model(Tensor(np.zeros(shape, np.float32)))

    def test_decoder_errors_name_stage(self, model, rng):
        x = model.stem_encode(Tensor(np.zeros((1, 1, 32, 32, 32), np.float32)))
        bottom, skips = model.encoder_forward(x)
        bottom = model.bottleneck(bottom)
        bad = list(skips)
        bad[2] = Skip(2, Tensor(np.zeros((1, 12, 3, 3, 3), np.float32)))
        with pytest.raises(ValueError, match="decoder stage 1.*encoder stage 2"):
            model.decoder_forward(bottom, bad)
        with pytest.raises(ValueError, match="expected encoder skip 3"):
            model.decoder_forward(bottom, [skips[0], skips[1], skips[3], skips[2]])
        with pytest.raises(ValueError, match="expects 4 skips"):
            model.decoder_forward(bottom, skips[:3])
