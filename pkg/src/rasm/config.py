"""Key-value run configuration.

A config file is plain text, one ``section.field = value`` per line, with
``#`` comments and blank lines ignored. Sections: model (architecture),
synth (data generator), train (recipe), loss (objective weights). Tuples are
comma-separated. Every field has a default; a file only lists overrides.
The canonical serialization of a full RunConfig is what checkpoints embed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .data import SynthConfig
from .errors import ConfigError
from .losses import LossWeights
from .network import ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 4
    crop_size: int = 64
    grad_clip: float = 1.0        # 0 disables
    lr_init: float = 4e-4
    lr_final: float = 1e-6
    warmup_steps: int = 0
    weight_decay: float = 0.02
    log_every: int = 50
    ckpt_every: int = 500
    augment: bool = True
    mixup: bool = False
    hsv: bool = False
    extractor_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.crop_size < 1:
            raise ConfigError(f"crop_size must be >= 1, got {self.crop_size}")
        if self.grad_clip < 0:
            raise ConfigError(f"grad_clip must be >= 0, got {self.grad_clip}")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    synth: SynthConfig
    train: TrainConfig
    loss: LossWeights

    @classmethod
    def default(cls):
        return cls(ModelConfig(), SynthConfig(), TrainConfig(), LossWeights())


_SECTIONS = {"model": ModelConfig, "synth": SynthConfig,
             "train": TrainConfig, "loss": LossWeights}


def _parse_value(raw, default):
    raw = raw.strip()
    t = type(default)
    try:
        if t is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if t is int:
            return int(raw)
        if t is float:
            return float(raw)
        if t is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(int(s) if float(s) == int(float(s)) else float(s)
                         for s in items)
        if t is str:
            return raw
    except ValueError:
        pass
    raise ConfigError(f"cannot parse {raw!r} as {t.__name__}")


def parse_config_text(text):
    """Flat dict of dotted key -> raw string value; syntax errors name lines."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.field = value', "
                              f"got {line.strip()!r}")
        key, _, val = stripped.partition("=")
        out[key.strip()] = val.strip()
    return out


def from_text(text, base: RunConfig = None):
    """Apply dotted-key overrides from config text onto defaults."""
    base = base or RunConfig.default()
    raw = parse_config_text(text)
    pending = {name: dict() for name in _SECTIONS}
    for key, val in raw.items():
        if "." not in key:
            raise ConfigError(f"config field {key!r} is missing its section "
                              f"(expected e.g. model.{key})")
        section, _, field_name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in field {key!r}")
        cls = _SECTIONS[section]
        known = {f.name: f for f in fields(cls)}
        if field_name not in known:
            raise ConfigError(f"unknown config field {key!r}")
        current = getattr(getattr(base, section), field_name)
        pending[section][field_name] = _parse_value(val, current)
    return RunConfig(
        model=replace(base.model, **pending["model"]),
        synth=replace(base.synth, **pending["synth"]),
        train=replace(base.train, **pending["train"]),
        loss=replace(base.loss, **pending["loss"]))


def from_file(path, base: RunConfig = None):
    with open(path, "r", encoding="utf-8") as f:
        return from_text(f.read(), base)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_text(run: RunConfig):
    """Canonical full serialization; from_text(to_text(run)) == run."""
    lines = []
    for section in ("model", "synth", "train", "loss"):
        obj = getattr(run, section)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
