"""Model and training configuration plus the ``key = value`` config file format.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  Recognised keys::

    seed
    model.in_channels  model.num_classes  model.base_channels
    model.stage_channels (comma separated)  model.heads
    model.mlp_variant {ffn, mlp, ag_mlp}
    model.decoder_variant {ced, plain_concat}
    model.schedule_variant {narrow, wide}
    model.dropout
    train.steps  train.batch_size  train.lr  train.weight_decay
    train.warmup_steps  train.input_size  train.eval_volumes

Unknown keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MLP_VARIANTS = ("ffn", "mlp", "ag_mlp")
DECODER_VARIANTS = ("ced", "plain_concat")
SCHEDULE_VARIANTS = ("narrow", "wide")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Schedules: ``narrow`` runs the four encoder stages at
    ``(base, s0, s1, s2)`` channels and each stage's stride-2 downsampler
    produces ``s_i``, so the bottleneck sits at ``s3`` and 1/32 resolution.
    ``wide`` lifts the stem output to ``s0`` with a pointwise conv, runs the
    stages at ``s0..s3`` and downsamples ``s3 -> s3`` before the bottleneck.
    """

    in_channels: int = 1
    num_classes: int = 16  # 15 abdominal organs + background
    base_channels: int = 48
    stage_channels: tuple = (96, 192, 384, 768)
    heads: int = 3
    mlp_variant: str = "ag_mlp"
    decoder_variant: str = "ced"
    schedule_variant: str = "narrow"
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        self.validate()

    def validate(self) -> None:
        s = self.stage_channels
        if len(s) != 4:
            raise ConfigError(f"stage_channels needs 4 entries, got {len(s)}")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigError(f"stage_channels must be strictly increasing, got {s}")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if self.in_channels < 1 or self.num_classes < 2 or self.base_channels < 1:
            raise ConfigError("in_channels >= 1, num_classes >= 2 and base_channels >= 1 required")
        if self.mlp_variant not in MLP_VARIANTS:
            raise ConfigError(f"mlp_variant must be one of {MLP_VARIANTS}, got {self.mlp_variant!r}")
        if self.decoder_variant not in DECODER_VARIANTS:
            raise ConfigError(f"decoder_variant must be one of {DECODER_VARIANTS}, got {self.decoder_variant!r}")
        if self.schedule_variant not in SCHEDULE_VARIANTS:
            raise ConfigError(f"schedule_variant must be one of {SCHEDULE_VARIANTS}, got {self.schedule_variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for c in self.block_widths + (self.bottleneck_width,):
            if c % self.heads:
                raise ConfigError(f"block width {c} not divisible by heads N={self.heads}")
        if self.decoder_variant == "ced":
            for c in self.block_widths:
                if c % 2:
                    raise ConfigError(f"decoder width {c} must be even for channel cross-grouping")

    @property
    def block_widths(self) -> tuple:
        s = self.stage_channels
        if self.schedule_variant == "narrow":
            return (self.base_channels,) + s[:3]
        return s

    @property
    def down_widths(self) -> tuple:
        s = self.stage_channels
        if self.schedule_variant == "narrow":
            return s
        return s[1:] + (s[3],)

    @property
    def bottleneck_width(self) -> int:
        return self.down_widths[-1]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 2
    lr: float = 1e-3
    weight_decay: float = 3e-5
    warmup_steps: int = 0
    input_size: int = 32
    eval_volumes: int = 2

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_volumes < 1:
            raise ConfigError("steps >= 0, batch_size >= 1 and eval_volumes >= 1 required")
        if self.input_size % 32:
            raise ConfigError(f"input_size must be divisible by 32, got {self.input_size}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.model.seed

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()[:16]


def _coerce(raw: str, current, key: str):
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}: {exc}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    model_defaults = {f.name: getattr(ModelConfig(), f.name) for f in fields(ModelConfig)}
    train_defaults = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "seed":
            model_kw["seed"] = _coerce(raw, 0, key)
        elif key.startswith("model.") and key[6:] in model_defaults and key[6:] != "seed":
            name = key[6:]
            model_kw[name] = _coerce(raw, model_defaults[name], key)
        elif key.startswith("train.") and key[6:] in train_defaults:
            name = key[6:]
            train_kw[name] = _coerce(raw, train_defaults[name], key)
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    return RunConfig(ModelConfig(**model_kw), TrainConfig(**train_kw))


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.model.seed}"]
    for f in fields(ModelConfig):
        if f.name == "seed":
            continue
        val = getattr(cfg.model, f.name)
        if isinstance(val, tuple):
            val = ", ".join(str(v) for v in val)
        lines.append(f"model.{f.name} = {val}")
    for f in fields(TrainConfig):
        lines.append(f"train.{f.name} = {getattr(cfg.train, f.name)}")
    return "\n".join(lines) + "\n"


def with_model(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, model=replace(cfg.model, **changes))
