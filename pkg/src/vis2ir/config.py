"""Run configuration: a TOML file with one table per component.

Every key has a default; unknown tables or keys are rejected so that a
typo never silently falls back to a default. Schema::

    [generator]      GeneratorSpec fields
    [discriminator]  DiscriminatorSpec fields (input_channels derived if absent)
    [train]          TrainConfig fields (except the loss weights)
    [loss]           lambda_fm, gan_mode
    [data]           dataset location/direction or synthetic recipe
    [superres]       SrSpec fields plus SR training knobs
    [output]         dir
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import DIRECTIONS, INFRARED_TO_VISIBLE, VISIBLE_TO_INFRARED
from .errors import ConfigError
from .losses import LossWeights
from .model import DiscriminatorSpec, GeneratorSpec
from .superres import SrSpec, SrTrainConfig
from .training import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    root: Optional[str] = None
    split: str = "train"
    direction: str = VISIBLE_TO_INFRARED
    synthetic: bool = True
    synthetic_count: int = 8
    synthetic_seed: int = 1
    hotspot_count: int = 3
    blur_radius: float = 1.0
    visible_channels: int = 3
    infrared_channels: int = 1

    def validate(self):
        if self.direction not in DIRECTIONS:
            raise ConfigError("data.direction", f"must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.synthetic and not self.root:
            raise ConfigError("data.root", "required when data.synthetic = false")
        if self.synthetic_count < 0:
            raise ConfigError("data.synthetic_count", "must be >= 0")
        return self

    @property
    def source_channels(self):
        return self.visible_channels if self.direction == VISIBLE_TO_INFRARED else self.infrared_channels

    @property
    def target_channels(self):
        return self.infrared_channels if self.direction == VISIBLE_TO_INFRARED else self.visible_channels


@dataclass(frozen=True)
class RunConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    superres: SrSpec = field(default_factory=SrSpec)
    superres_train: SrTrainConfig = field(default_factory=SrTrainConfig)
    output_dir: str = "runs/default"


_TABLES = ("generator", "discriminator", "train", "loss", "data", "superres", "output")
_SR_TRAIN_KEYS = {f.name for f in dataclasses.fields(SrTrainConfig)}
_TUPLE_KEYS = {"value_range", "betas", "train_resolution"}


def _fields(cls, exclude=()):
    return {f.name for f in dataclasses.fields(cls)} - set(exclude)


def _check_keys(table, given, allowed):
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"{table}.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _coerce(d):
    return {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in d.items()}


def _build(cls, table, values):
    try:
        return cls(**_coerce(values))
    except TypeError as exc:
        raise ConfigError(table, str(exc)) from exc


def parse_config(raw: dict) -> RunConfig:
    _check_keys("<root>", raw, _TABLES)
    for t in _TABLES:
        if t in raw and not isinstance(raw[t], dict):
            raise ConfigError(t, "must be a table")

    data_raw = raw.get("data", {})
    _check_keys("data", data_raw, _fields(DataConfig))
    data = _build(DataConfig, "data", data_raw).validate()

    gen_raw = dict(raw.get("generator", {}))
    _check_keys("generator", gen_raw, _fields(GeneratorSpec))
    gen_raw.setdefault("input_channels", data.source_channels)
    gen_raw.setdefault("output_channels", data.target_channels)
    gen = _build(GeneratorSpec, "generator", gen_raw)

    disc_raw = dict(raw.get("discriminator", {}))
    _check_keys("discriminator", disc_raw, _fields(DiscriminatorSpec))
    disc_raw.setdefault("input_channels", gen.input_channels + gen.output_channels)
    disc = _build(DiscriminatorSpec, "discriminator", disc_raw)

    loss_raw = raw.get("loss", {})
    _check_keys("loss", loss_raw, _fields(LossWeights))
    weights = _build(LossWeights, "loss", loss_raw)

    train_raw = dict(raw.get("train", {}))
    _check_keys("train", train_raw, _fields(TrainConfig, exclude=("weights",)))
    train_raw["weights"] = weights
    train = _build(TrainConfig, "train", train_raw)

    sr_raw = dict(raw.get("superres", {}))
    _check_keys("superres", sr_raw, _fields(SrSpec) | _SR_TRAIN_KEYS)
    sr_train = _build(SrTrainConfig, "superres", {k: sr_raw.pop(k) for k in list(sr_raw) if k in _SR_TRAIN_KEYS})
    sr_raw.setdefault("channels", gen.output_channels)
    sr = _build(SrSpec, "superres", sr_raw)

    out_raw = raw.get("output", {})
    _check_keys("output", out_raw, {"dir"})

    for name, obj in (("generator", gen), ("discriminator", disc), ("train", train), ("superres", sr),
                      ("superres", sr_train)):
        try:
            obj.validate()
        except ConfigError as exc:
            if "." in exc.field:
                raise
            raise ConfigError(f"{name}.{exc.field}", str(exc).split(": ", 1)[-1]) from exc
    return RunConfig(gen, disc, train, data, sr, sr_train, out_raw.get("dir", "runs/default"))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc}") from exc
    return parse_config(raw)


def default_config_path() -> Path:
    return Path(__file__).parent / "configs" / "desk.toml"


__all__ = ["RunConfig", "DataConfig", "parse_config", "load_config", "default_config_path", "INFRARED_TO_VISIBLE"]
