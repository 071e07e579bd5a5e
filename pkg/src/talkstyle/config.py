"""Configuration dataclasses and the flat ``key = value`` run-config format."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields

from .content import INVENTORY

CONFIG_ENV = "TALKSTYLE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    hidden: int = 256
    heads: int = 2
    filter: int = 1024
    encoder_blocks: int = 4
    decoder_blocks: int = 6
    conv_kernels: tuple = (9, 1)
    dropout: float = 0.2
    phoneme_vocab: int = len(INVENTORY)
    style_dim: int = 256
    style_hidden: int = 64
    s2_hidden: int = 100
    n_mels: int = 80
    # "mel": trainable conv stubs over MelFrames; "features": precomputed embeddings
    style_source: str = "mel"
    stub_channels: int = 64
    style_input_dim: int = 16

    def validate(self) -> None:
        if self.hidden % self.heads:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.style_dim != self.hidden:
            raise ConfigError("style_dim must equal hidden: the style vector is added to every frame")
        if len(self.conv_kernels) != 2 or any(k % 2 == 0 for k in self.conv_kernels):
            raise ConfigError(f"conv_kernels must be two odd sizes, got {self.conv_kernels}")
        if self.style_source not in ("mel", "features"):
            raise ConfigError(f"style_source must be 'mel' or 'features', got {self.style_source!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class StageSchedule:
    stage: int
    warmup_steps: int
    lr_constant: float  # d_model**-0.5 for stage 1, peak lr for stage 2
    max_steps: int
    clip_norm: float = 1.0

    def validate(self) -> None:
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.warmup_steps <= 0 or self.clip_norm <= 0 or self.max_steps < 0:
            raise ConfigError("warmup_steps and clip_norm must be positive, max_steps >= 0")

    @classmethod
    def stage1(cls, max_steps: int = 500_000, d_model: int = 256) -> "StageSchedule":
        return cls(1, 4000, d_model ** -0.5, max_steps)

    @classmethod
    def stage2(cls, max_steps: int = 20_000) -> "StageSchedule":
        return cls(2, 1600, 0.01, max_steps)


@dataclass
class LossWeights:
    lambda_lap: float = 1.0
    mouth_landmark_weight: float = 2.0
    lambda_tik: float = 0.0
    vertex_mask: bool = True
    landmark_loss: bool = True
    regularize_bias: bool = True

    def validate(self) -> None:
        for name in ("lambda_lap", "mouth_landmark_weight", "lambda_tik"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    max_steps: int = 2000
    warmup_steps: int | None = None
    lr_constant: float | None = None
    clip_norm: float = 1.0
    log_every: int = 10
    eval_every: int = 100
    eval_size: int = 8
    checkpoint_every: int = 0
    # start output biases at the corpus mean (Mel frame / pose) instead of zero
    init_head_bias: bool = True

    def schedule(self, stage: int) -> StageSchedule:
        base = StageSchedule.stage1(self.max_steps, self.backbone.hidden) if stage == 1 \
            else StageSchedule.stage2(self.max_steps)
        if self.warmup_steps is not None:
            base.warmup_steps = self.warmup_steps
        if self.lr_constant is not None:
            base.lr_constant = self.lr_constant
        base.clip_norm = self.clip_norm
        base.validate()
        return base

    def validate(self) -> None:
        self.backbone.validate()
        self.loss.validate()

    def flat(self) -> dict:
        out = {}
        for part in (self.backbone, self.loss):
            out.update(dataclasses.asdict(part))
        for f in fields(self):
            if f.name not in ("backbone", "loss"):
                out[f.name] = getattr(self, f.name)
        out["conv_kernels"] = list(out["conv_kernels"])
        return out

    def to_text(self) -> str:
        lines = []
        for k, v in self.flat().items():
            if v is None:
                continue
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _cast(value: str, current, name: str):
    try:
        if isinstance(current, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(current, tuple):
            return tuple(int(x) for x in value.split(","))
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if current is None:
            return float(value) if any(c in value for c in ".e") else int(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


_INT_OR_NONE = {"warmup_steps"}


def apply_overrides(cfg: RunConfig, items: dict) -> RunConfig:
    """Set flat keys on ``cfg``; unknown keys are rejected."""
    parts = {f.name: cfg.backbone for f in fields(cfg.backbone)}
    parts.update({f.name: cfg.loss for f in fields(cfg.loss)})
    parts.update({f.name: cfg for f in fields(cfg) if f.name not in ("backbone", "loss")})
    for key, raw in items.items():
        if key not in parts:
            raise ConfigError(f"unknown config key {key!r}")
        owner = parts[key]
        current = getattr(owner, key)
        val = raw if not isinstance(raw, str) else _cast(raw, current, key)
        if key in _INT_OR_NONE and val is not None:
            val = int(val)
        if key == "conv_kernels":
            val = tuple(val)
        setattr(owner, key, val)
    cfg.validate()
    return cfg


def parse_config_text(text: str) -> dict:
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file (``path`` or ``$TALKSTYLE_CONFIG``), then overrides."""
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        with open(path) as fh:
            apply_overrides(cfg, parse_config_text(fh.read()))
    if overrides:
        apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def from_flat(flat: dict) -> RunConfig:
    return apply_overrides(RunConfig(), dict(flat))


def desk_config(**overrides) -> RunConfig:
    """Small widths with the full block structure, for single-core runs."""
    cfg = RunConfig()
    apply_overrides(cfg, {"hidden": 32, "style_dim": 32, "filter": 64, "stub_channels": 16,
                          "style_hidden": 32})
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg
