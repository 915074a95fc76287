"""Experiment configuration: YAML in, validated models out, and back."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .gen import GeneratorModel, model_from_spec
from .weights import named_weights

U64_MAX = 2**64 - 1


class ConfigError(ValueError):
    """Schema violation; the message names the offending field path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Strict):
    b: int = Field(2, ge=2)
    law: dict
    include_root: bool = False

    @model_validator(mode="after")
    def _buildable(self):
        try:
            model_from_spec(self.model_dump())
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"invalid law: {e}") from e
        return self

    def build(self) -> GeneratorModel:
        return model_from_spec(self.model_dump())


class PercolationConfig(_Strict):
    betas: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0, 1.25])
    eps: Union[float, Literal["auto"]] = "auto"
    perc_seed: Optional[int] = None
    tolerance: float = Field(0.1, gt=0)
    method: Literal["spine", "survival"] = "spine"
    lo: float = 0.0
    hi: float = 1.0

    @field_validator("betas")
    @classmethod
    def _nonneg(cls, v):
        if any(x < 0 or not math.isfinite(x) for x in v):
            raise ValueError("beta values must be finite and nonnegative")
        return v


class SpectrumConfig(_Strict):
    depths: list[int] = Field(default_factory=lambda: list(range(2, 13)))
    h: list[float] = Field(default_factory=lambda: [x / 4 for x in range(-4, 13)])


class LocalDimConfig(_Strict):
    depth: int = Field(2000, ge=1)
    spines: int = Field(200, ge=1)


class ExperimentConfig(_Strict):
    seed: int = Field(ge=0, le=U64_MAX)
    model: ModelConfig
    weights: dict = Field(default_factory=lambda: {"rule": "unit"})
    depth: int = Field(10, ge=0)
    replicates: int = Field(100, ge=1)
    sufficiency: Literal["default", "unit"] = "default"
    percolation: PercolationConfig = Field(default_factory=PercolationConfig)
    spectrum: SpectrumConfig = Field(default_factory=SpectrumConfig)
    local_dim: LocalDimConfig = Field(default_factory=LocalDimConfig)
    format: Literal["csv", "json"] = "csv"
    out: Optional[str] = None

    @model_validator(mode="after")
    def _weights_buildable(self):
        try:
            named_weights(dict(self.weights), self.model.build())
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"invalid weights: {e}") from e
        return self

    def build_model(self) -> GeneratorModel:
        return self.model.build()

    def build_weights(self):
        return named_weights(dict(self.weights), self.build_model())


def _format_error(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def from_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a mapping")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_error(e)) from None


def parse(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"<root>: not valid YAML ({e})") from None
    return from_dict(data)


def to_dict(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")


def emit(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=None)


def load(path: str | Path) -> ExperimentConfig:
    return parse(Path(path).read_text())
