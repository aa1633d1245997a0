import pytest

from translk.config import (ConfigError, ModelConfig, RunConfig, TrainConfig, dump_config,
                            load_config, parse_config, with_model)


class TestParse:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert cfg.model.stage_channels == (96, 192, 384, 768)

    def test_values_and_comments(self):
        cfg = parse_config("""
            # leading comment
            seed = 7
            model.stage_channels = 8, 16, 32, 64   # trailing
            model.heads = 2
            model.base_channels = 4
            train.lr = 2.5e-4
        """)
        assert cfg.seed == 7
        assert cfg.model.stage_channels == (8, 16, 32, 64)
        assert cfg.train.lr == 2.5e-4

    def test_round_trip(self, tmp_path):
        cfg = with_model(RunConfig(), heads=4, mlp_variant="ffn", seed=3)
        path = tmp_path / "run.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg
        assert load_config(path).digest() == cfg.digest()

    def test_digest_tracks_content(self):
        assert RunConfig().digest() != with_model(RunConfig(), heads=4).digest()

    @pytest.mark.parametrize("text, msg", [
        ("model.depth = 3", "unknown config key"),
        ("model.seed = 3", "unknown config key"),
        ("heads 3", "expected 'key = value'"),
        ("model.heads = three", "cannot parse"),
    ])
    def test_rejects(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)


class TestValidation:
    @pytest.mark.parametrize("kw, msg", [
        ({"stage_channels": (96, 192, 384)}, "4 entries"),
        ({"stage_channels": (96, 96, 384, 768)}, "strictly increasing"),
        ({"heads": 0}, "heads"),
        ({"heads": 5}, "not divisible by heads"),
        ({"mlp_variant": "glu"}, "mlp_variant"),
        ({"decoder_variant": "unet"}, "decoder_variant"),
        ({"schedule_variant": "deep"}, "schedule_variant"),
        ({"dropout": 1.0}, "dropout"),
        ({"num_classes": 1}, "num_classes"),
        ({"base_channels": 3, "stage_channels": (6, 12, 24, 48)}, "must be even"),
    ])
    def test_model(self, kw, msg):
        with pytest.raises(ConfigError, match=msg):
            ModelConfig(**kw)

    @pytest.mark.parametrize("kw", [{"input_size": 48}, {"steps": -1}, {"batch_size": 0}])
    def test_train(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)

    def test_schedules(self):
        narrow = ModelConfig()
        wide = ModelConfig(schedule_variant="wide")
        assert narrow.block_widths == (48, 96, 192, 384)
        assert narrow.bottleneck_width == 768
        assert wide.block_widths == (96, 192, 384, 768)
        assert wide.bottleneck_width == 768
