"""JSON run configuration with a versioned schema.

Unknown keys anywhere in the document are rejected so that a misspelt
hyperparameter fails loudly instead of silently taking its default.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import CsvSchema, DriftSpec
from .detector import PipelineConfig
from .mrwpn import DEFAULT_GAMMAS
from .srencdec import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class SchemaSection:
    L: int = 64
    n: int = 1
    label_column: int = 0
    label_map: dict = field(default_factory=lambda: {"0": 0, "1": 1})
    header: bool = False
    delimiter: str = ","

    def to_schema(self) -> CsvSchema:
        return CsvSchema(self.L, self.n, self.label_column, dict(self.label_map),
                         self.header, self.delimiter)


@dataclass
class SplitSection:
    P: float = 0.8


@dataclass
class AutoencoderSection:
    encoder_sizes: list = field(default_factory=lambda: [32, 4])
    decoder_sizes: list | None = None


@dataclass
class MrwpnSection:
    j0: int = 2
    m: int = 3
    gammas: list = field(default_factory=lambda: list(DEFAULT_GAMMAS))


@dataclass
class EarlyWarningSection:
    enabled: bool = True
    window: int = 5
    alert_quantile: float = 0.99


@dataclass
class DriftSection:
    fraction: float = 0.3
    mean: float = 0.3
    variance: float = 0.2

    def to_spec(self) -> DriftSpec:
        return DriftSpec(self.fraction, self.mean, self.variance)


@dataclass
class RunConfig:
    dataset: str = ""
    version: int = SCHEMA_VERSION
    seed: int = 0
    output_dir: str = "run"
    repeats: int = 10
    schema: SchemaSection = field(default_factory=SchemaSection)
    split: SplitSection = field(default_factory=SplitSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    mrwpn: MrwpnSection = field(default_factory=MrwpnSection)
    early_warning: EarlyWarningSection = field(default_factory=EarlyWarningSection)
    drift: DriftSection | None = None

    def pipeline(self, seed: int | None = None) -> PipelineConfig:
        seed = self.seed if seed is None else seed
        return PipelineConfig(
            encoder_sizes=tuple(self.autoencoder.encoder_sizes),
            decoder_sizes=(tuple(self.autoencoder.decoder_sizes)
                           if self.autoencoder.decoder_sizes is not None else None),
            train=dataclasses.replace(self.train, seed=seed),
            j0=self.mrwpn.j0, m=self.mrwpn.m, gammas=tuple(self.mrwpn.gammas),
            early_warning=self.early_warning.enabled,
            early_warning_window=self.early_warning.window,
            alert_quantile=self.early_warning.alert_quantile)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"schema": SchemaSection, "split": SplitSection,
             "autoencoder": AutoencoderSection, "train": TrainConfig,
             "mrwpn": MrwpnSection, "early_warning": EarlyWarningSection,
             "drift": DriftSection}


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if cls is RunConfig and k in _SECTIONS:
            v = None if v is None else _build(_SECTIONS[k], v, f"{where}.{k}")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict, base_dir=None) -> RunConfig:
    version = data.get("version", SCHEMA_VERSION) if isinstance(data, dict) else None
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _build(RunConfig, data, "config")
    if cfg.dataset and base_dir is not None and not os.path.isabs(cfg.dataset):
        cfg.dataset = str(Path(base_dir) / cfg.dataset)
    return cfg


def load_config(path) -> RunConfig:
    """Read a config file; a relative ``dataset`` resolves against the
    config file's directory."""
    path = Path(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)
