"""Pipeline configuration: flat ``key = value`` files plus flag overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Optional

from .errors import ConfigurationError
from .model import ConvMode, FeatureStage, ModelConfig
from .training import MixupMode, TrainConfig


@dataclass
class PipelineConfig:
    t1: Optional[str] = None
    t2: Optional[str] = None
    ground_truth: Optional[str] = None
    output: str = "gdnet-out"
    checkpoint: Optional[str] = None
    prediction: Optional[str] = None
    r: int = 12
    h1: int = 16
    h2: int = 32
    h3: int = 6
    m: int = 4
    k: int = 3
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    mixup: str = MixupMode.TWO_STAGE.value
    alpha: float = 1.0
    conv: str = ConvMode.GDCONV.value
    per_class_cap: int = 8000
    seed: int = 42
    # synthetic scene generation
    width: int = 256
    height: int = 256
    change_fraction: float = 0.15
    looks: float = 4.0
    feature_stage: str = FeatureStage.AFTER_LAST.value

    def validate(self) -> "PipelineConfig":
        try:
            self.model_config()
            self.train_config()
            FeatureStage(self.feature_stage)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.epochs % 2:
            raise ConfigurationError(f"epochs must be even, got {self.epochs}")
        if self.per_class_cap < 1:
            raise ConfigurationError("per_class_cap must be positive")
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.r, self.h1, self.h2, self.h3, self.m, self.k, ConvMode(self.conv))

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                           MixupMode(self.mixup), self.alpha, self.seed)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                lines.append(f"# {f.name} unset")
            elif isinstance(value, str):
                lines.append(f'{f.name} = "{value}"')
            else:
                lines.append(f"{f.name} = {value!r}")
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _convert(key: str, raw: str):
    kind = FIELD_TYPES[key]
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected {kind}, got {raw.strip()!r}") from None
    return text


def parse_lines(lines, source="<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        # drop trailing comments outside quotes
        if "#" in raw and not raw.lstrip().startswith(("\"", "'")):
            raw = raw.split("#", 1)[0]
        values[key] = _convert(key, raw)
    return values


def parse_config(path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the file (if any), then overrides; the result is validated."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_lines(fh, source=str(path)))
    for key, raw in (overrides or {}).items():
        if key not in FIELD_TYPES:
            raise ConfigurationError(f"unknown key {key!r}")
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    return dataclasses.replace(PipelineConfig(), **values).validate()
