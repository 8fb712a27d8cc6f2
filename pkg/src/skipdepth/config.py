"""Run configuration: INI-style sections with typed, documented defaults.

``toy`` is the desk-scale preset used by the acceptance runs.  ``paper``
records the published widths and optimiser schedule; it is far too large to
train with the numpy engine and is kept for reference and shape checks.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    encoder_channels: tuple[int, ...] = (16, 32, 64, 128)
    stage_channels: tuple[int, ...] = (16, 32, 64, 128)
    heads: tuple[int, ...] = (2, 4, 8, 16)
    window_size: int = 7
    query_channels: int = 128
    bcp_hidden: int = 64
    n_bins: int = 64
    d_min: float = 1e-3
    d_max: float = 10.0
    fusion: str = "sam"
    final_residual: str = "literal"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 2
    lr_start: float = 1e-3
    lr_end: float = 1e-4
    seed: int = 1
    weight_decay: float = 1e-2
    checkpoint_every: int = 0
    precision: str = "f32"


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    size: tuple[int, ...] = (224, 224)
    count: int = 4
    list_file: str = ""


@dataclass(frozen=True)
class IOConfig:
    out_dir: str = "runs/toy"
    checkpoint: str = "model.ckpt"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    io: IOConfig = field(default_factory=IOConfig)

    def validate(self) -> "RunConfig":
        m, t, d = self.model, self.train, self.data
        if m.fusion not in ("sam", "add_conv", "cat_conv"):
            raise ConfigError(f"model.fusion must be sam, add_conv or cat_conv, got {m.fusion!r}")
        if m.final_residual not in ("literal", "alternative"):
            raise ConfigError(f"model.final_residual must be literal or alternative, got {m.final_residual!r}")
        if not 0 < m.d_min < m.d_max:
            raise ConfigError(f"invalid depth range [{m.d_min}, {m.d_max}]")
        if m.n_bins < 2:
            raise ConfigError("model.n_bins must be at least 2")
        if t.precision not in ("f32", "f64"):
            raise ConfigError(f"train.precision must be f32 or f64, got {t.precision!r}")
        if t.steps < 0 or t.batch_size < 1:
            raise ConfigError("train.steps must be >= 0 and train.batch_size >= 1")
        if d.source not in ("synthetic", "list-file"):
            raise ConfigError(f"data.source must be synthetic or list-file, got {d.source!r}")
        if d.source == "list-file" and not d.list_file:
            raise ConfigError("data.list_file is required when data.source = list-file")
        if len(d.size) != 2 or d.size[0] % 32 or d.size[1] % 32:
            raise ConfigError(f"data.size must be two multiples of 32, got {d.size}")
        if min(d.size) < 192:
            raise ConfigError(f"data.size must be at least 192 so the 1/32 map is 6 pixels wide, got {d.size}")
        return self


PRESETS = {
    "toy": RunConfig(),
    "paper": RunConfig(
        model=ModelConfig(
            encoder_channels=(192, 384, 768, 1536),
            stage_channels=(128, 256, 512, 1024),
            heads=(4, 8, 16, 32),
            query_channels=512,
            bcp_hidden=256,
            n_bins=256,
            d_max=10.0,
        ),
        train=TrainConfig(steps=0, batch_size=8, lr_start=4e-5, lr_end=4e-6, weight_decay=1e-2),
        data=DataConfig(size=(480, 640)),
        io=IOConfig(out_dir="runs/paper"),
    ),
}

_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig, "io": IOConfig}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _coerce(kind, raw: str, key: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r}") from None


def _field_kind(section_cls, name):
    default = getattr(section_cls(), name)
    return tuple if isinstance(default, tuple) else type(default)


def render(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for section in _SECTIONS:
        values = asdict(getattr(cfg, section))
        parser[section] = {k: _format(getattr(getattr(cfg, section), k)) for k in values}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of ``base`` (the toy preset by default); unknown keys are rejected."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = base or PRESETS["toy"]
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTIONS[section]
        known = {f.name for f in fields(cls)}
        updates = {}
        for key, raw in parser[section].items():
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
            updates[key] = _coerce(_field_kind(cls, key), raw, f"{section}.{key}")
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **updates)})
    return cfg.validate()


def load(path, preset: str = "toy") -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), PRESETS[preset])
