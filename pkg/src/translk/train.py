"""AdamW with cosine decay and the desk-scale toy trainer."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import build_model
from .config import RunConfig, dump_config
from .data import make_batch
from .losses import dice_ce_loss, dsc
from .tensor import ParamStore, Tensor, backward

# held-out volumes are drawn far past any training index
EVAL_OFFSET = 1_000_000


def cosine_lr(step: int, total: int, peak: float, warmup: int = 0) -> float:
    if warmup and step < warmup:
        return peak * (step + 1) / warmup
    span = max(total - warmup, 1)
    return 0.5 * peak * (1.0 + math.cos(math.pi * (step - warmup) / span))


class AdamW:
    """Adam with decoupled weight decay (applied to every parameter)."""

    def __init__(self, params: ParamStore, lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.weight_decay = lr, weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = (p.data - lr * update).astype(p.dtype)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    dsc: dict = field(default_factory=dict)  # foreground class -> DSC on the held-out batch
    wall_clock: float = 0.0
    seed: int = 0
    config_hash: str = ""
    diverged: bool = False

    @property
    def mean_dsc(self) -> float:
        return float(np.mean(list(self.dsc.values()))) if self.dsc else float("nan")

    def to_csv(self) -> str:
        rows = ["step,loss"]
        rows += [f"{i},{loss:.8g}" for i, loss in enumerate(self.losses)]
        rows += [f"# dsc,{c},{v:.6f}" for c, v in self.dsc.items()]
        rows.append(f"# seed,{self.seed}")
        rows.append(f"# config,{self.config_hash}")
        rows.append(f"# wall_clock_s,{self.wall_clock:.3f}")
        if self.diverged:
            rows.append("# diverged,1")
        return "\n".join(rows) + "\n"

    def write(self, out_dir: str | Path, cfg: RunConfig) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(self.to_csv())
        (out / "config.cfg").write_text(dump_config(cfg))
        return out / "report.csv"


def predict(model, images: Tensor) -> np.ndarray:
    """Argmax labels without recording a graph."""
    flags = [(t, t.requires_grad) for _, t in model.named_parameters()]
    model.requires_grad_(False)
    model.eval()
    try:
        logits = model(images)
    finally:
        for t, flag in flags:
            t.requires_grad = flag
        model.train()
    return logits.data.argmax(axis=1)


def evaluate(model, cfg: RunConfig) -> dict:
    m, tr = cfg.model, cfg.train
    shape = (tr.input_size,) * 3
    batch = make_batch(cfg.seed, EVAL_OFFSET, tr.eval_volumes, shape, m.num_classes, m.in_channels)
    pred = predict(model, batch.images)
    return {c: dsc(pred, batch.labels, c) for c in range(1, m.num_classes)}


def train_toy(cfg: RunConfig, out_dir: str | Path | None = None, model=None,
              log=None) -> TrainReport:
    """Train on synthetic blobs, then score foreground DSC on a held-out batch.

    Training volumes for step ``s`` are indices ``s*batch .. (s+1)*batch - 1``
    of the seeded stream.  A non-finite loss stops training and flags the
    report as diverged.
    """
    start = time.perf_counter()
    m, tr = cfg.model, cfg.train
    model = model if model is not None else build_model(m)
    store = model.params(seed=cfg.seed)
    opt = AdamW(store, tr.lr, tr.weight_decay)
    shape = (tr.input_size,) * 3
    report = TrainReport(seed=cfg.seed, config_hash=cfg.digest())

    for step in range(tr.steps):
        batch = make_batch(cfg.seed, step * tr.batch_size, tr.batch_size, shape,
                           m.num_classes, m.in_channels)
        loss = dice_ce_loss(model(batch.images), batch.labels)
        value = float(loss.data)
        report.losses.append(value)
        if not math.isfinite(value):
            report.diverged = True
            break
        store.zero_grad()
        backward(loss)
        opt.step(cosine_lr(step, tr.steps, tr.lr, tr.warmup_steps))
        if log is not None:
            log(step, value)

    if not report.diverged:
        report.dsc = evaluate(model, cfg)
    report.wall_clock = time.perf_counter() - start
    if out_dir is not None:
        report.write(out_dir, cfg)
    return report
