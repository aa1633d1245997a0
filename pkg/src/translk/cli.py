"""Command-line entry point: ``translk <command> [config] ...``.

``config`` is a path to a ``key = value`` file or the name of a bundled
config (``default``, ``toy``); omitted means built-in defaults.  Bad flags
exit with status 2, runtime failures with status 1.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, io
from .codec import build_model
from .config import RunConfig, load_config, parse_config, with_model
from .gradcheck import gradcheck_suite
from .tensor import Tensor
from .train import predict, train_toy

ABLATIONS = {
    "heads": ("heads", (2, 3, 4)),
    "mlp": ("mlp_variant", ("ffn", "mlp", "ag_mlp")),
    "decoder": ("decoder_variant", ("ced", "plain_concat")),
}


def resolve_config(name: str | None) -> RunConfig:
    if name is None:
        return load_config(None)
    path = Path(name)
    if path.exists():
        return load_config(path)
    bundled = resources.files("translk") / "configs" / f"{name}.cfg"
    if bundled.is_file():
        return parse_config(bundled.read_text())
    raise FileNotFoundError(f"no config file or bundled config named {name!r}")


def parse_shape(text: str) -> tuple:
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like DxHxW, got {text!r}") from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"shape must have three dims, got {text!r}")
    return dims


def cmd_describe(args) -> int:
    cfg = resolve_config(args.config)
    print(f"config {cfg.digest()}: schedule={cfg.model.schedule_variant} "
          f"widths={cfg.model.block_widths} bottleneck={cfg.model.bottleneck_width}")
    print(analysis.cost_report(cfg.model, args.shape).format())
    return 0


def cmd_flops(args) -> int:
    cfg = resolve_config(args.config)
    report = analysis.count_flops(cfg.model, args.shape)
    print(f"{report.total_flops} FLOPs ({report.total_flops / 1e9:.3f} G) "
          f"at {'x'.join(map(str, args.shape))}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck_suite(args.filter, args.seed)
    if not report.results:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return 1
    print(report.format())
    return 0 if report.ok else 1


def _train(cfg: RunConfig, out: Path | None):
    model = build_model(cfg.model)
    report = train_toy(cfg, out, model=model,
                       log=lambda s, v: print(f"step {s:4d}  loss {v:.5f}", flush=True))
    if out is not None:
        io.save_checkpoint(out / "checkpoint.tlkc", model.params().state_dict())
    return report


def cmd_train(args) -> int:
    cfg = resolve_config(args.config)
    out = Path(args.out)
    report = _train(cfg, out)
    for c, v in report.dsc.items():
        print(f"dsc class {c}: {v:.4f}")
    print(f"mean foreground dsc {report.mean_dsc:.4f}  ({report.wall_clock:.1f} s)")
    if report.diverged:
        print("training diverged (non-finite loss)", file=sys.stderr)
        return 1
    return 0


def cmd_infer(args) -> int:
    cfg = resolve_config(args.config)
    model = build_model(cfg.model)
    model.params().load_state_dict(io.load_checkpoint(args.ckpt))
    vol = io.read_tlk1(args.input)
    labels = predict(model, Tensor(vol))
    io.write_tlk1(args.out, labels[:, None].astype(np.float32))
    print(f"wrote {args.out}: labels {labels.shape}, classes present {sorted(np.unique(labels).tolist())}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args.config)
    key, values = ABLATIONS[args.axis]
    train = args.train or args.axis == "decoder"
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "params", "flops", "dsc"])
    for value in values:
        variant = with_model(cfg, **{key: value})
        cost = analysis.cost_report(variant.model, args.shape)
        dsc = ""
        if train:
            print(f"training {key}={value}", file=sys.stderr, flush=True)
            report = train_toy(variant)
            dsc = f"{report.mean_dsc:.6f}"
        writer.writerow([value, cost.total_params, cost.total_flops, dsc])
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="translk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", nargs="?", help="config file or bundled config name")
        return sp

    sp = with_config("describe", "print per-module parameter and FLOP counts")
    sp.add_argument("--shape", type=parse_shape, default=(96, 96, 96))
    sp.set_defaults(func=cmd_describe)

    sp = with_config("flops", "total forward FLOPs for one input volume")
    sp.add_argument("--shape", type=parse_shape, required=True, help="DxHxW")
    sp.set_defaults(func=cmd_flops)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite (float64)")
    sp.add_argument("--filter", help="glob or substring selecting check names")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = with_config("train", "train on synthetic volumes and write the run artifacts to --out")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = with_config("infer", "segment a TLK1 volume with a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", dest="input", required=True, help="input TLK1 volume (n, c, D, H, W)")
    sp.add_argument("--out", required=True, help="output TLK1 label volume")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("ablate", help="variant sweep; emits variant,params,flops,dsc CSV")
    sp.add_argument("axis", choices=sorted(ABLATIONS))
    sp.add_argument("config", nargs="?", help="config file or bundled config name")
    sp.add_argument("--shape", type=parse_shape, default=(96, 96, 96), help="FLOP input DxHxW")
    sp.add_argument("--train", action="store_true", help="also train each variant (always on for decoder)")
    sp.add_argument("--out", help="also write the CSV here")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # any runtime failure maps to exit status 1
        print(f"translk {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
