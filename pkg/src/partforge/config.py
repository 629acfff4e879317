"""Run configuration: one YAML tree, validated strictly.

Unknown keys anywhere in the tree are an error, so a typo in a hyperparameter
name cannot be silently ignored.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .dataset import TOY_KINDS, CurationThresholds
from .denoiser import DenoiserConfig
from .errors import ConfigError
from .flow import SamplerConfig, TrainingPlan


@dataclass
class DataConfig:
    train_dir: str | None = None
    limit: int | None = None
    encode_seed: int = 0


@dataclass
class ToygenConfig:
    part_counts: list = field(default_factory=lambda: [1, 2, 3, 4])
    per_count: int = 32
    kinds: list = field(default_factory=lambda: list(TOY_KINDS))

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in TOY_KINDS]
        if bad:
            raise ConfigError(f"unknown toy kinds {bad}")
        if self.per_count < 1 or any(int(n) < 1 for n in self.part_counts):
            raise ConfigError("per_count and every part count must be >= 1")


@dataclass
class MetricsConfig:
    n_points: int = 10000
    tau: float = 0.1
    resolution: int = 64

    def __post_init__(self):
        if self.n_points < 1 or self.resolution < 1 or self.tau <= 0:
            raise ConfigError("metrics: n_points, resolution and tau must be positive")


@dataclass
class RunConfig:
    seed: int = 0
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainingPlan = field(default_factory=TrainingPlan)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    toygen: ToygenConfig = field(default_factory=ToygenConfig)
    curate: CurationThresholds = field(default_factory=CurationThresholds)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


_SECTIONS = {f.name: f for f in fields(RunConfig) if f.name != "seed"}


def build_section(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_mapping(data: dict | None) -> RunConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    seed = data.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    kwargs = {name: build_section(f.default_factory().__class__, data.get(name), name)
              for name, f in _SECTIONS.items()}
    return RunConfig(seed=seed, **kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return config_from_mapping(data)


def with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    """Apply a ``--seed`` override to the run seed and the training seed."""
    if seed is None:
        return cfg
    cfg.seed = seed
    cfg.train.seed = seed
    return cfg
