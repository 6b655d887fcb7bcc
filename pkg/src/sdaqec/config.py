"""Unified run configuration: one JSON document, validated before any work starts."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import AugmentConfig
from .neural import ExtractorConfig
from .trainer import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str | None = None
    train_root: str | None = None
    val_root: str | None = None
    features: str | None = None
    target_size: tuple[int, int] = (64, 64)
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        self.target_size = tuple(int(v) for v in self.target_size)
        self.split = tuple(float(v) for v in self.split)
        sources = [self.root is not None, self.train_root is not None, self.features is not None]
        if sum(sources) > 1:
            raise ConfigError("set only one of data.root, data.train_root, data.features")
        if self.train_root is not None and self.val_root is None:
            raise ConfigError("data.train_root needs data.val_root")


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.apply_seed(self.seed)

    def apply_seed(self, seed: int) -> None:
        self.seed = int(seed)
        self.augment.seed = self.seed
        self.train.seed = self.seed

    def to_dict(self) -> dict:
        aug = {f.name: getattr(self.augment, f.name) for f in dataclasses.fields(AugmentConfig)
               if f.init and f.name != "seed"}
        aug["brightness_range"] = list(self.augment.brightness_range)
        train = dataclasses.asdict(self.train)
        train.pop("seed")
        data = dataclasses.asdict(self.data)
        data["target_size"] = list(self.data.target_size)
        data["split"] = list(self.data.split)
        model = self.model.to_dict()
        model.pop("use_quantum")
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": data,
            "augment": aug,
            "model": model,
            "train": train,
        }

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _build(cls, d, section, exclude=()):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls) if f.init} - set(exclude)
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in section {section!r}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    top = {"seed", "out_dir", "data", "augment", "model", "train"}
    unknown = sorted(set(doc) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key {unknown[0]!r}")
    model_doc = dict(doc.get("model", {}))
    ext = _build(ExtractorConfig, model_doc.pop("extractor", {}), "model.extractor")
    model = _build(ModelConfig, model_doc, "model", exclude=("extractor", "use_quantum"))
    model.extractor = ext
    if model.input_dim is None:
        model.reduced_dim = ext.reduced_dim
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    cfg = RunConfig(
        seed=seed,
        out_dir=str(doc.get("out_dir", "runs/default")),
        data=_build(DataConfig, doc.get("data", {}), "data"),
        augment=_build(AugmentConfig, doc.get("augment", {}), "augment", exclude=("seed",)),
        model=model,
        train=_build(TrainConfig, doc.get("train", {}), "train", exclude=("seed",)),
    )
    cfg.model.use_quantum = cfg.train.use_quantum
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)
