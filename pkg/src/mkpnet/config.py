"""JSON run configuration with strict key checking and materialised defaults."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import SynthSpec
from .model import AblationConfig, ModelConfig
from .trainer import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dir: str | None = None
    synth: SynthSpec = field(default_factory=SynthSpec)


@dataclass
class EnrichConfig:
    core: float = 3.0
    high: float = 2.0
    full: float = 1.0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    enrich: EnrichConfig = field(default_factory=EnrichConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trainer"]["ratio"] = list(d["trainer"]["ratio"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(klass, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    known = {f.name: f for f in fields(klass)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in d.items():
        sub = _NESTED.get((klass, name))
        kwargs[name] = _build(sub, value, f"{where}.{name}") if sub else value
    try:
        return klass(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_NESTED = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "trainer"): TrainerConfig,
    (RunConfig, "data"): DataConfig,
    (RunConfig, "ablation"): AblationConfig,
    (RunConfig, "enrich"): EnrichConfig,
    (DataConfig, "synth"): SynthSpec,
}


def parse_config(d: dict) -> RunConfig:
    return _build(RunConfig, d, "config")


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(d)
