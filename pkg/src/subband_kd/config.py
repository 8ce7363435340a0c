"""Run configuration: one JSON file, with command-line overrides applied on top."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from .spectral import StftConfig
from .subband import make_partition
from .training import TrainConfig


@dataclass
class StftSection:
    frame_len: int = 320
    hop: int = 160


@dataclass
class PartitionSection:
    band_width: int = 40


@dataclass
class ModelSection:
    hidden_size: int = 256
    teacher_hidden_size: int | None = None   # defaults to hidden_size


@dataclass
class DistillSection:
    alpha: float = 0.1
    teacher_dir: str = "checkpoints/teachers"


@dataclass
class PathsSection:
    corpus_dir: str = "corpus"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


@dataclass
class RunConfig:
    stft: StftSection = field(default_factory=StftSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillSection = field(default_factory=DistillSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0

    def stft_config(self) -> StftConfig:
        return StftConfig(self.stft.frame_len, self.stft.hop)

    def partition_for(self, total_bins: int | None = None):
        bins = total_bins if total_bins is not None else self.stft.frame_len // 2 + 1
        return make_partition(bins, self.partition.band_width)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**(asdict(self.train) | {"seed": self.seed}))

    @property
    def teacher_hidden(self) -> int:
        return self.model.teacher_hidden_size or self.model.hidden_size

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name: f for f in fields(RunConfig)}


def _build(section_type, values: dict, where: str):
    known = {f.name for f in fields(section_type)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    return section_type(**values)


def from_dict(data: dict) -> RunConfig:
    kwargs = {}
    for key, value in data.items():
        if key not in _SECTIONS:
            raise ValueError(f"unknown config section {key!r}")
        if key == "seed":
            kwargs["seed"] = int(value)
            continue
        section_type = _SECTIONS[key].default_factory().__class__
        kwargs[key] = _build(section_type, value, key)
    return RunConfig(**kwargs)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        return from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from None


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
    data = cfg.to_dict()
    for dotted, value in overrides.items():
        if value is None:
            continue
        if dotted == "seed":
            data["seed"] = value
            continue
        section, key = dotted.split(".")
        if key not in data[section]:
            raise ValueError(f"unknown override {dotted}")
        data[section][key] = value
    return from_dict(data)
