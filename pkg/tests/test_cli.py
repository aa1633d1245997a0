import csv
import io as _io
import subprocess
import sys

import numpy as np
import pytest

from translk import io
from translk.cli import main

TINY_CFG = """\
seed = 1
model.num_classes = 3
model.base_channels = 6
model.stage_channels = 6, 12, 24, 48
train.steps = 2
train.batch_size = 1
train.eval_volumes = 1
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CFG)
    return str(path)


def _csv(text):
    return list(csv.DictReader(_io.StringIO(text)))


class TestInspect:
    def test_describe_default(self, capsys):
        assert main(["describe"]) == 0
        out = capsys.readouterr().out
        assert "params: 45.174 M" in out and "bottleneck" in out

    def test_describe_bundled_name(self, capsys):
        assert main(["describe", "toy", "--shape", "32x32x32"]) == 0
        assert "params: 3.139 M" in capsys.readouterr().out

    def test_flops(self, capsys):
        assert main(["flops", "--shape", "96x96x96"]) == 0
        assert capsys.readouterr().out.startswith("123361895724 FLOPs")

    def test_ablate_heads(self, capsys, tmp_path):
        out = tmp_path / "heads.csv"
        assert main(["ablate", "heads", "--out", str(out)]) == 0
        rows = _csv(out.read_text())
        assert [r["variant"] for r in rows] == ["2", "3", "4"]
        params = [int(r["params"]) for r in rows]
        flops = [int(r["flops"]) for r in rows]
        assert params == sorted(set(params)) and flops == sorted(set(flops))
        assert all(r["dsc"] == "" for r in rows)

    def test_ablate_mlp(self, capsys):
        assert main(["ablate", "mlp"]) == 0
        rows = _csv(capsys.readouterr().out)
        assert [r["variant"] for r in rows] == ["ffn", "mlp", "ag_mlp"]
        assert int(rows[0]["params"]) < int(rows[1]["params"]) < int(rows[2]["params"])


class TestErrors:
    @pytest.mark.parametrize("argv", [["explode"], ["flops"], ["describe", "--shape", "9x9"],
                                      ["ablate", "depth"], []])
    def test_bad_flags_exit_2(self, argv):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2

    def test_missing_config_exit_1(self, capsys):
        assert main(["describe", "no_such_config"]) == 1
        assert "no config file" in capsys.readouterr().err

    def test_bad_shape_exit_1(self, capsys):
        assert main(["flops", "--shape", "96x96x40"]) == 1
        assert "multiples of 32" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "translk", "frobnicate"],
                              capture_output=True, text=True)
        assert proc.returncode == 2 and "invalid choice" in proc.stderr


class TestGradcheck:
    def test_filter(self, capsys):
        assert main(["gradcheck", "--filter", "sigmoid"]) == 0
        out = capsys.readouterr().out
        assert "sigmoid" in out and "conv3d" not in out

    def test_no_match(self, capsys):
        assert main(["gradcheck", "--filter", "nothing_like_this"]) == 1


class TestTrainInfer:
    def test_round_trip(self, tiny_cfg, tmp_path, capsys, rng):
        run = tmp_path / "run"
        assert main(["train", tiny_cfg, "--out", str(run)]) == 0
        assert {p.name for p in run.iterdir()} == {"report.csv", "config.cfg", "checkpoint.tlkc"}
        assert "mean foreground dsc" in capsys.readouterr().out

        vol = rng.standard_normal((2, 1, 32, 32, 32)).astype(np.float32)
        io.write_tlk1(tmp_path / "in.tlk", vol)
        argv = ["infer", tiny_cfg, "--ckpt", str(run / "checkpoint.tlkc"),
                "--in", str(tmp_path / "in.tlk"), "--out", str(tmp_path / "out.tlk")]
        assert main(argv) == 0
        labels = io.read_tlk1(tmp_path / "out.tlk")
        assert labels.shape == (2, 1, 32, 32, 32)
        assert set(np.unique(labels)) <= {0.0, 1.0, 2.0}

        # the written config reproduces the run's config
        assert main(["describe", str(run / "config.cfg"), "--shape", "32x32x32"]) == 0

    def test_infer_rejects_wrong_checkpoint(self, tiny_cfg, tmp_path, capsys):
        io.save_checkpoint(tmp_path / "bad.tlkc", {"w": np.ones(3)})
        io.write_tlk1(tmp_path / "in.tlk", np.zeros((1, 1, 32, 32, 32)))
        argv = ["infer", tiny_cfg, "--ckpt", str(tmp_path / "bad.tlkc"),
                "--in", str(tmp_path / "in.tlk"), "--out", str(tmp_path / "o.tlk")]
        assert main(argv) == 1
        assert "state mismatch" in capsys.readouterr().err
