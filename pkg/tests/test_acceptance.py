"""One test per acceptance criterion; each records a PASS/FAIL summary line.

The lines are printed in the "acceptance criteria" section at the end of the
pytest run.  Every criterion is also timed against its runtime budget.
"""
import csv
import dataclasses
import math
import time

import numpy as np
import pytest

from translk import analysis, ops
from translk.blocks import CTLK, PTLK, MixedBlock
from translk.codec import CED, CFI, PFI, PlainFusion, build_model, cross_group
from translk.config import ModelConfig, dump_config
from translk.cli import main, resolve_config
from translk.desa import axial_attention
from translk.entangle import MHLK, ChannelGate, SpatialGate
from translk.gradcheck import gradcheck_suite
from translk.tensor import Tensor
from translk.train import train_toy

import oracles
from conftest import as_f64, randomize
from test_blocks import _desa_params, _gate_c, _gate_s, _mhlk, _zero

REFERENCE_PARAMS = 40.95e6
WIDTHS = (96, 192, 384, 768)
ORACLE_SHAPE = (2, 6, 5, 5, 5)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


def _report(acceptance, name, ok, detail, timer, budget):
    in_time = timer.seconds < budget
    acceptance(name, ok and in_time, f"{detail}; {timer.seconds:.2f}s (budget {budget:g}s)")
    assert ok, detail
    assert in_time, f"{name} took {timer.seconds:.1f}s, budget {budget}s"


def test_parameter_count(acceptance):
    with Timer() as t:
        default = analysis.count_params(ModelConfig()).total_params
        wide = analysis.count_params(ModelConfig(schedule_variant="wide")).total_params
    dev = default / REFERENCE_PARAMS - 1
    ok = abs(dev) <= 0.15
    _report(acceptance, "parameter count", ok,
            f"default {default / 1e6:.3f}M ({dev:+.1%} vs 40.95M, need +-15%); "
            f"wide {wide / 1e6:.2f}M ({wide / REFERENCE_PARAMS - 1:+.0%})", t, 1.0)


def test_heads_ordering(acceptance):
    with Timer() as t:
        reps = [analysis.count_flops(ModelConfig(heads=n), (96, 96, 96)) for n in (2, 3, 4)]
    p = [r.total_params for r in reps]
    f = [r.total_flops for r in reps]
    ok = p[0] < p[1] < p[2] and f[0] < f[1] < f[2]
    _report(acceptance, "heads N=2,3,4 ordering", ok,
            "params " + " < ".join(f"{v / 1e6:.3f}M" for v in p)
            + "; FLOPs " + " < ".join(f"{v / 1e9:.2f}G" for v in f), t, 5.0)


def test_mlp_ordering(acceptance):
    with Timer() as t:
        p = [analysis.count_params(ModelConfig(mlp_variant=v)).total_params
             for v in ("ffn", "mlp", "ag_mlp")]
    ok = p[0] < p[1] < p[2]
    _report(acceptance, "ffn < mlp < ag_mlp params", ok,
            " < ".join(f"{v / 1e6:.3f}M" for v in p), t, 5.0)


@pytest.mark.slow
def test_gradient_suite(acceptance):
    with Timer() as t:
        report = gradcheck_suite()
    local = [r for r in report.results if not r.name.startswith("network")]
    net = [r for r in report.results if r.name.startswith("network")]
    detail = (f"{sum(r.passed for r in report.results)}/{len(report.results)} checks; "
              f"worst op/block {max(r.error for r in local):.1e} (< 1e-4); "
              f"network 50-parameter sample {net[0].error:.1e} (< 1e-3)")
    if not report.ok:
        detail += "; failing: " + ", ".join(r.name for r in report.results if not r.passed)
    _report(acceptance, "gradient suite", report.ok, detail, t, 600.0)


def _oracle_errors(rng):
    """Largest absolute deviation from the loop oracles, per component."""
    errs = {}
    x = rng.standard_normal(ORACLE_SHAPE)
    y = rng.standard_normal(ORACLE_SHAPE)

    conv_cases = [(6, 1, 3, 1, 1), (6, 1, 3, 2, 1), (2, 3, 3, 1, 1), (1, 6, 5, 1, 2), (6, 1, 1, 1, 0)]
    worst = 0.0
    for cin_g, groups, k, stride, pad in conv_cases:
        w = rng.standard_normal((6, cin_g, k, k, k))
        b = rng.standard_normal(6)
        got = ops.conv3d(Tensor(x), Tensor(w), Tensor(b), stride, pad, groups).data
        worst = max(worst, np.abs(got - oracles.conv3d(x, w, b, stride, pad, groups)).max())
    w = rng.standard_normal((6, 4, 2, 2, 2))
    got = ops.conv3d_transposed(Tensor(x), Tensor(w), stride=2).data
    errs["conv3d"] = max(worst, np.abs(got - oracles.conv3d_transposed(x, w, stride=2)).max())

    errs["pooling"] = max(
        np.abs(ops.global_avg_pool(Tensor(x)).data - oracles.avg_pool(x)).max(),
        np.abs(ops.channel_pool(Tensor(x)).data - oracles.channel_pool(x)).max())

    cg = randomize(as_f64(ChannelGate(6, rng)), rng)
    sg = randomize(as_f64(SpatialGate(rng)), rng)
    errs["gates"] = max(np.abs(cg(Tensor(x), Tensor(y)).data - _gate_c(cg, x, y)).max(),
                        np.abs(sg(Tensor(x), Tensor(y)).data - _gate_s(sg, x, y)).max())

    mh = randomize(as_f64(MHLK(6, 3, rng)), rng)
    errs["MHLK"] = np.abs(mh(Tensor(x)).data - _mhlk(mh, x)).max()

    h = 3
    x1 = np.concatenate([x[:, :h], y[:, :h]], axis=1)
    x2 = np.concatenate([x[:, h:], y[:, h:]], axis=1)
    pfi = randomize(as_f64(PFI(6, 3, rng)), rng)
    a = _mhlk(pfi.mhlk, x1)
    a = _gate_c(pfi.ch, a, a)
    a = _gate_s(pfi.sp, a, a)
    ref = oracles.desa(x2, x2, a, _desa_params(pfi.desa), 3)
    e_pfi = np.abs(pfi(Tensor(x), Tensor(y)).data - ref).max()
    cfi = randomize(as_f64(CFI(6, 3, rng)), rng)
    lk = _mhlk(cfi.mhlk, x1)
    sa = oracles.desa(x2, x2, x2, _desa_params(cfi.desa), 3)
    ref = _gate_s(cfi.sp, lk, sa) + _gate_c(cfi.ch, sa, lk)
    errs["PFI/CFI"] = max(e_pfi, np.abs(cfi(Tensor(x), Tensor(y)).data - ref).max())

    worst = 0.0
    for axis, dims in (("D", (5, 1, 1)), ("H", (1, 5, 1)), ("W", (1, 1, 5))):
        q, k, v = (rng.standard_normal((2, 3, 2) + dims) for _ in range(3))
        ax = axial_attention(Tensor(q), Tensor(k), Tensor(v), axis).data
        full = oracles.full_attention(q, k, v, 1 / math.sqrt(2))
        worst = max(worst, np.abs(ax - full).max())
    errs["axial = full attention"] = worst
    return errs


def test_oracle_equivalence(acceptance):
    with Timer() as t:
        errs = _oracle_errors(np.random.default_rng(7))
    ok = all(e < 1e-6 for e in errs.values())
    _report(acceptance, "oracle equivalence", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (< 1e-6)", t, 120.0)


def _structural_failures(rng):
    failures = []
    for c in WIDTHS:
        x = Tensor(rng.standard_normal((1, c, 2, 3, 2)).astype(np.float32))
        for name, block in (("ptlk", PTLK(c, 3, rng)), ("ctlk", CTLK(c, 3, rng)),
                            ("mixed", MixedBlock(c, 3, rng))):
            if block(x).shape != x.shape:
                failures.append(f"{name}@{c}")
        for name, fusion in (("ced", CED(c, 3, rng)), ("plain", PlainFusion(c, 3, rng))):
            if fusion(x, x).shape != x.shape:
                failures.append(f"{name}@{c}")

    x = Tensor(rng.standard_normal((1, 6, 3, 3, 3)))
    p, c = as_f64(PTLK(6, 3, rng)), as_f64(CTLK(6, 3, rng))
    _zero(p.desa.out, *p.mhlk.convs)
    _zero(c.desa.out, *c.mhlk.convs)
    for name, block in (("ptlk", p), ("ctlk", c)):
        if not np.array_equal(block(x).data, x.data):
            failures.append(f"{name} residual identity")

    skip = np.arange(4.0).reshape(1, 4, 1, 1, 1)
    x1, x2 = cross_group(Tensor(skip), Tensor(skip + 10))
    if (x1.data.ravel().tolist(), x2.data.ravel().tolist()) != ([0, 1, 10, 11], [2, 3, 12, 13]):
        failures.append("cross_group partition")

    model = build_model(resolve_config("toy").model)
    for size in (32, 64):
        out = model(Tensor(rng.standard_normal((1, 1, size, size, size)).astype(np.float32)))
        if out.shape[2:] != (size,) * 3:
            failures.append(f"end-to-end {size}^3 -> {out.shape}")
    return failures


def test_structural_invariants(acceptance):
    with Timer() as t:
        failures = _structural_failures(np.random.default_rng(3))
    detail = ("shape at widths 96-768, residual identity, cross_group, 32^3 and 64^3 end-to-end"
              if not failures else "broken: " + ", ".join(failures))
    _report(acceptance, "structural invariants", not failures, detail, t, 120.0)


def test_desa_efficiency(acceptance):
    shapes = [(4, 4, 4), (4, 6, 8), (6, 6, 3)]
    with Timer() as t:
        rows = [(s, analysis.desa_vs_full_ratio(s, 6, 3), analysis.closed_form_ratio(s))
                for s in shapes]
    ok = all(abs(m / c - 1) <= 0.05 for _, m, c in rows)
    _report(acceptance, "axial vs full attention FLOP ratio", ok,
            ", ".join(f"{'x'.join(map(str, s))}: {m:.3f} vs {c:.3f}" for s, m, c in rows)
            + " (within 5%)", t, 1.0)


@pytest.mark.slow
def test_toy_training(acceptance):
    cfg = resolve_config("toy")
    with Timer() as t:
        first = train_toy(cfg)
        second = train_toy(cfg)
    deterministic = first.losses == second.losses and first.dsc == second.dsc
    ok = (not first.diverged and first.losses[-1] < first.losses[0]
          and first.mean_dsc >= 0.80 and deterministic)
    dsc = ", ".join(f"{c}: {v:.3f}" for c, v in first.dsc.items())
    _report(acceptance, "toy training", ok,
            f"loss {first.losses[0]:.3f} -> {first.losses[-1]:.3f}; DSC {dsc} "
            f"(mean {first.mean_dsc:.3f}, need >= 0.80); identical rerun: {deterministic}",
            t, 900.0)


@pytest.mark.slow
def test_ablation_plumbing(acceptance, tmp_path):
    cfg = resolve_config("toy")
    short = tmp_path / "short.cfg"
    short.write_text(dump_config(dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, steps=10))))
    out = tmp_path / "decoder.csv"
    with Timer() as t:
        status = main(["ablate", "decoder", str(short), "--out", str(out)])
    rows = list(csv.DictReader(out.open())) if out.exists() else []
    ok = (status == 0 and [r["variant"] for r in rows] == ["ced", "plain_concat"]
          and all(r["dsc"] for r in rows))
    _report(acceptance, "ablate decoder", ok,
            "; ".join(f"{r['variant']}: {int(r['params']) / 1e6:.2f}M params, DSC {float(r['dsc']):.3f}"
                      for r in rows) + " (10 training steps each)", t, 900.0)
