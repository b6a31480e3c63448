"""Run configuration shared by the service, the CLI, and the pipeline.

A RunConfig carries everything needed to reproduce a run and is embedded
verbatim (plus input content hashes) into every output artifact.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator

UnitKind = Literal["organs", "fcc", "hybrid"]
ScoreKindName = Literal["tp", "fp", "dice", "softdice"]


class UnitsSpec(BaseModel):
    kind: UnitKind = "organs"
    scale_mm: float = Field(default=40.0, gt=0)
    min_fragment: int = Field(default=0, ge=0)


class ScoreSpec(BaseModel):
    kind: ScoreKindName = "softdice"
    target_class: int = Field(default=1, ge=0)
    epsilon: float = Field(default=1e-6, gt=0)


class ShapSpec(BaseModel):
    budget: int = Field(default=2000, ge=1)
    seed: int = 0
    holdout: float = Field(default=0.1, ge=0.0, lt=0.5)
    ridge: float = Field(default=1e-8, ge=0.0)


class InferSpec(BaseModel):
    patch: tuple[int, int, int] = (8, 8, 8)
    overlap: float = Field(default=0.5, gt=0.0, lt=1.0)
    sigma_scale: float = Field(default=0.125, gt=0)

    @field_validator("patch")
    @classmethod
    def _patch_positive(cls, v):
        if any(p < 1 for p in v):
            raise ValueError(f"patch components must be >= 1, got {v}")
        return v


class RunConfig(BaseModel):
    volume: str
    roi: str
    labels: str | None = None
    out_dir: str = "."
    units: UnitsSpec = UnitsSpec()
    score: ScoreSpec = ScoreSpec()
    shap: ShapSpec = ShapSpec()
    infer: InferSpec = InferSpec()
    predictor: str = "synthetic"
    masking_hu: float = -1024.0
    workers: int = Field(default=0, ge=0)  # 0 = auto (1 for non-concurrent predictors)
    curve_max_steps: int = Field(default=20, ge=1)
    curve_scores: list[ScoreKindName] | None = None
    bridge_timeout_s: float = Field(default=30.0, gt=0)


def _deep_merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, value in over.items():
        if value is None:
            continue
        if isinstance(value, dict):
            merged = _deep_merge(out.get(key) if isinstance(out.get(key), dict) else {}, value)
            if merged:
                out[key] = merged
        else:
            out[key] = value
    return out


def build_config(file_values: dict | None, overrides: dict) -> RunConfig:
    """Assemble a RunConfig with precedence: explicit overrides > config file > defaults.

    None values in overrides mean "not set on the command line" and never
    shadow file values.
    """
    return RunConfig.model_validate(_deep_merge(file_values or {}, overrides))
