"""Pydantic models for TASS configuration, manifests and reports."""

from __future__ import annotations

import json
import math
from enum import StrEnum
from pathlib import Path
from typing import Annotated, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from tass.errors import ConfigError


class QuestionType(StrEnum):
    """Synthetic question taxonomy."""

    EXISTENTIAL = "existential"
    COUNTING = "counting"
    TEMPORAL_FIRST = "temporal_first"
    LOCATION = "location"


class Stream(StrEnum):
    SINGLE = "single"
    DUAL = "dual"


class Order(StrEnum):
    """Layout of the joint audio-visual sequence."""

    ILVA = "ILVA"
    ILAV = "ILAV"
    CATVA = "CatVA"
    CATAV = "CatAV"


class FusionMode(StrEnum):
    """How the gated text map combines with the audio map before the outer softmax."""

    ADD = "add"
    MUL = "mul"
    MAX = "max"


def _default_mix() -> dict[QuestionType, float]:
    return {q: 0.25 for q in QuestionType}


class ScenarioSpec(BaseModel):
    """Statistics of a synthetic audio-visual scene collection."""

    model_config = ConfigDict(populate_by_name=True)

    k: Annotated[int, Field(ge=2, alias="K", description="Number of object prototypes")] = 6
    d: Annotated[int, Field(ge=1, description="Feature width")] = 64
    h: Annotated[int, Field(ge=1, description="Feature-map height")] = 7
    w: Annotated[int, Field(ge=1, description="Feature-map width")] = 7
    t1: Annotated[int, Field(ge=1, alias="T1", description="Segments per raw video")] = 10
    noise_std: Annotated[float, Field(ge=0.0, description="Expected norm of the per-cell and per-segment noise")] = 0.1
    distractor_rate: Annotated[float, Field(ge=0.0, le=1.0)] = 0.3
    text_noise: Annotated[float, Field(ge=0.0, description="Expected norm of the text-prototype offset")] = 0.1
    position_scale: Annotated[float, Field(ge=0.0, description="Norm of the left/right side code on every cell")] = 2.0
    activity_scale: Annotated[float, Field(ge=0.0, description="Strength of the cue on a sounding object's cell")] = 1.0
    visual_scale: Annotated[float, Field(gt=0.0, description="Gain applied to rendered visual features")] = 8.0
    onset_window: Annotated[
        float, Field(gt=0.0, le=1.0, description="Leading fraction of the video in which sources start sounding")
    ] = 0.5
    max_sources: Annotated[int, Field(ge=1, description="Most sounding objects in one video")] = 3
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 0
    question_mix: dict[QuestionType, float] = Field(default_factory=_default_mix)
    n_train_videos: Annotated[int, Field(ge=0)] = 500
    n_val_videos: Annotated[int, Field(ge=0)] = 125
    questions_per_video: Annotated[int, Field(ge=1)] = 4

    @field_validator("question_mix")
    @classmethod
    def validate_mix(cls, v: dict[QuestionType, float]) -> dict[QuestionType, float]:
        """Weights are nonnegative and sum to one."""
        if any(weight < 0 for weight in v.values()):
            msg = "question_mix weights must be nonnegative"
            raise ValueError(msg)
        if abs(sum(v.values()) - 1.0) > 1e-9:
            msg = f"question_mix weights must sum to 1, got {sum(v.values())}"
            raise ValueError(msg)
        return v

    @model_validator(mode="after")
    def validate_sources(self) -> ScenarioSpec:
        if self.max_sources > self.k:
            msg = f"max_sources ({self.max_sources}) cannot exceed K ({self.k})"
            raise ValueError(msg)
        return self


class AblationFlags(BaseModel):
    """Switches for the ablation matrix. Defaults give the full model."""

    no_target_aware: bool = False
    no_match_loss: bool = False
    no_cms: bool = False
    no_spatial_grounding: bool = False
    no_temporal_grounding: bool = False
    stream: Stream = Stream.SINGLE
    order: Order = Order.ILVA
    fusion: FusionMode = FusionMode.ADD

    @model_validator(mode="after")
    def validate_consistency(self) -> AblationFlags:
        """A dual-stream model has no joint sequence, so it takes no ordering."""
        if self.stream == Stream.DUAL and self.order != Order.ILVA:
            msg = "order flags are meaningless for the dual-stream model"
            raise ValueError(msg)
        if self.stream == Stream.DUAL and self.no_temporal_grounding:
            msg = "no_temporal_grounding removes the attention that the dual stream duplicates"
            raise ValueError(msg)
        return self


class TrainConfig(BaseModel):
    """Training hyper-parameters, model dimensions and dataset locations."""

    model_config = ConfigDict(populate_by_name=True)

    lambda_match: Annotated[float, Field(ge=0.0, alias="lambda", description="Weight of the match loss")] = 0.5
    tau: Annotated[float, Field(ge=0.0, description="Text-map threshold")] = 0.025
    t: Annotated[int, Field(ge=1, alias="T")] = 10
    d: Annotated[int, Field(ge=1)] = 64
    h: Annotated[int, Field(ge=1)] = 7
    w: Annotated[int, Field(ge=1)] = 7
    n_heads: Annotated[int, Field(ge=1)] = 4
    batch_size: Annotated[int, Field(ge=1)] = 64
    epochs: Annotated[int, Field(ge=0)] = 30
    lr: Annotated[float, Field(gt=0.0)] = 2e-4
    lr_decay: Annotated[float, Field(gt=0.0, le=1.0)] = 0.1
    lr_decay_every: Annotated[int, Field(ge=1)] = 12
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 0
    audio_projection: bool = True
    ablation: AblationFlags = Field(default_factory=AblationFlags)
    train_dir: Path | None = None
    val_dir: Path | None = None

    @model_validator(mode="after")
    def validate_heads(self) -> TrainConfig:
        if self.d % self.n_heads:
            msg = f"d ({self.d}) must be divisible by n_heads ({self.n_heads})"
            raise ValueError(msg)
        return self

    @classmethod
    def full_scale(cls, **overrides: object) -> TrainConfig:
        """Full-width preset (d=512, 8 heads); too slow for CI, kept for reference runs."""
        return cls.model_validate({"d": 512, "n_heads": 8, **overrides})

    def lr_at(self, epoch: int) -> float:
        """Step schedule: multiply by ``lr_decay`` every ``lr_decay_every`` epochs."""
        return self.lr * self.lr_decay ** (epoch // self.lr_decay_every)


class ManifestDims(BaseModel):
    d: Annotated[int, Field(ge=1)]
    h: Annotated[int, Field(ge=1)]
    w: Annotated[int, Field(ge=1)]
    t: Annotated[int, Field(ge=1, description="Segments per video")]


class VideoEntry(BaseModel):
    video_id: str
    audio_file: str
    visual_file: str


class SampleEntry(BaseModel):
    sample_id: str
    video_id: str
    question_file: str
    target_file: Annotated[str | None, Field(description="Target tensor; the question tensor stands in when absent")] = None
    question_type: QuestionType
    answer: Annotated[int, Field(ge=0)]


class ManifestDocument(BaseModel):
    """On-disk manifest; paths are relative to the manifest's directory."""

    answers: list[str]
    dims: ManifestDims
    videos: list[VideoEntry] = Field(default_factory=list)
    samples: list[SampleEntry] = Field(default_factory=list)


class EvalReport(BaseModel):
    """Answer accuracy and loss components on one dataset."""

    per_type_accuracy: dict[str, float] = Field(default_factory=dict)
    per_type_count: dict[str, int] = Field(default_factory=dict)
    overall_accuracy: float = 0.0
    n_samples: int = 0
    loss_qa: float = 0.0
    loss_cms: float = 0.0
    loss_match: float = 0.0
    loss_total: float = 0.0
    diagnostic_js: float | None = None
    trainable_parameters: int = 0
    wall_time_s: float = 0.0

    @field_validator("per_type_accuracy")
    @classmethod
    def validate_accuracies(cls, v: dict[str, float]) -> dict[str, float]:
        for name, acc in v.items():
            if not 0.0 <= acc <= 1.0:
                msg = f"accuracy for {name} outside [0, 1]: {acc}"
                raise ValueError(msg)
        return v

    @model_validator(mode="after")
    def validate_overall(self) -> EvalReport:
        if self.n_samples:
            weighted = sum(self.per_type_accuracy[k] * n for k, n in self.per_type_count.items())
            if not math.isclose(weighted / self.n_samples, self.overall_accuracy, abs_tol=1e-12):
                msg = "overall accuracy is not the sample-weighted mean of per-type accuracies"
                raise ValueError(msg)
        return self


class EpochReport(BaseModel):
    epoch: int
    lr: float
    train_loss: float
    train_loss_qa: float
    train_loss_cms: float
    train_loss_match: float
    val: EvalReport | None = None


M = TypeVar("M", bound=BaseModel)


def format_validation_error(e: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors())


def load_json_model(model: type[M], path: Path | str, **overrides: object) -> M:
    """Read a JSON document into ``model``; problems surface as ConfigError."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e.msg} (line {e.lineno})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate_model(model, raw)


def validate_model(model: type[M], raw: dict[str, object]) -> M:
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {format_validation_error(e)}") from e
