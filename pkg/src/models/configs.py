"""Configuration schemas for every pipeline stage."""
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models.schemas import (
    DEFAULT_VARIANTS,
    SelectionMethod,
    register_variant,
    variant_registry,
)
from src.utils.errors import DataError
from src.utils.validators import parse_grid

MAX_SEED = 2**64 - 1


class _Config(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


class PrescreenConfig(_Config):
    """Thresholds for filtering candidates before initial training."""

    ctc_threshold: float = Field(default=-0.3, le=0.0)
    compactness_low: float = Field(default=1.0, ge=0.0)
    compactness_high: float = Field(default=7.0, gt=0.0)

    @model_validator(mode="after")
    def validate_bounds(self) -> "PrescreenConfig":
        if not self.compactness_low < self.compactness_high:
            raise ValueError("compactness_low must be < compactness_high")
        return self


class QualityWeights(_Config):
    """How noise and distortion degrade training-data quality."""

    w_a: float = Field(default=1.0, ge=0.0)
    w_d: float = Field(default=1.0, ge=0.0)


class CleanserParams(_Config):
    """Effect of one simulated cleanser on the latent state."""

    noise_reduction: float = Field(default=0.0, ge=0.0, le=1.0)
    distortion_reduction: float = Field(default=0.0, ge=0.0, le=1.0)
    artifact_cost: float = Field(default=0.0, ge=0.0)


def _default_cleansers() -> Dict[str, CleanserParams]:
    return {
        "identity": CleanserParams(),
        "denoise": CleanserParams(noise_reduction=0.8, artifact_cost=0.25),
        "restore": CleanserParams(
            noise_reduction=0.6, distortion_reduction=0.85, artifact_cost=0.7
        ),
    }


class TrainerParams(_Config):
    """Speaker-level synthesis-quality model of the simulated trainer."""

    mu0: float = Field(default=1.0, description="Base score")
    alpha: float = Field(default=0.5, ge=0.0, description="Speaker-data weight")
    beta: float = Field(default=0.4, ge=0.0, description="Corpus weight")
    sigma_train: float = Field(default=0.1, ge=0.0)
    sigma_eval: float = Field(default=0.3, ge=0.0)
    unseen_damping: float = Field(default=0.5, ge=0.0, le=1.0)


class CorpusParams(_Config):
    """Distributions of the synthetic candidate pool.

    Speakers record either in clean or degraded conditions; noise and
    distortion levels are gamma distributed per speaker with multiplicative
    log-normal jitter per utterance.
    """

    clean_fraction: float = Field(default=0.25, ge=0.0, le=1.0)
    base_quality_mean: float = Field(default=4.1, ge=1.0, le=5.0)
    base_quality_speaker_sd: float = Field(default=0.45, ge=0.0)
    base_quality_utterance_sd: float = Field(default=0.25, ge=0.0)
    gamma_shape: float = Field(default=2.0, gt=0.0)
    clean_noise_scale: float = Field(default=0.03, ge=0.0)
    clean_distortion_scale: float = Field(default=0.04, ge=0.0)
    degraded_noise_scale: float = Field(default=0.25, ge=0.0)
    degraded_distortion_scale: float = Field(default=0.7, ge=0.0)
    utterance_jitter_sd: float = Field(default=0.3, ge=0.0)

    feature_noise_sd: float = Field(default=0.3, ge=0.0)
    embedding_center_sd: float = Field(default=3.0, gt=0.0)
    target_compactness: float = Field(
        default=3.5, gt=0.0,
        description="Expected within-group embedding spread (trace of covariance)"
    )
    mixed_group_fraction: float = Field(default=0.05, ge=0.0, le=1.0)
    misaligned_fraction: float = Field(default=0.04, ge=0.0, le=1.0)
    misaligned_penalty: float = Field(default=1.5, ge=0.0)
    aligned_ctc_sd: float = Field(default=0.08, ge=0.0)
    duration_range: Tuple[float, float] = (2.0, 6.0)

    acoustic_intercept: float = 4.3
    acoustic_noise_weight: float = Field(default=1.2, ge=0.0)
    acoustic_distortion_weight: float = Field(default=0.3, ge=0.0)
    acoustic_base_weight: float = Field(default=0.2, ge=0.0)
    acoustic_noise_sd: float = Field(default=0.7, ge=0.0)

    reference_speakers: int = Field(default=20, ge=1)
    reference_utterances: int = Field(default=20, ge=2)
    reference_base_quality_sd: float = Field(default=0.3, ge=0.0)

    @field_validator("duration_range")
    @classmethod
    def validate_duration_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not 0.0 < v[0] <= v[1]:
            raise ValueError("duration_range must satisfy 0 < low <= high")
        return v


class SimCostParams(_Config):
    """Simulated compute cost per unit of work, in seconds."""

    train_seconds_per_audio_hour: float = Field(default=78.59, ge=0.0)
    eval_seconds_per_sentence: float = Field(default=0.0158, ge=0.0)
    regress_seconds_per_utterance: float = Field(default=0.00912, ge=0.0)


class SimConfig(_Config):
    """Simulated TTS world: corpus generator, cleansers, trainer, evaluator."""

    n_speakers: int = Field(default=200, gt=0)
    utterances_per_speaker: Tuple[int, int] = (10, 30)
    embedding_dim: int = Field(default=8, gt=0)
    feature_dim: int = Field(default=8, gt=0)
    rng_seed: int = Field(default=0, ge=0, le=MAX_SEED)
    quality_weights: QualityWeights = Field(default_factory=QualityWeights)
    cleanser_params: Dict[str, CleanserParams] = Field(
        default_factory=_default_cleansers
    )
    trainer_params: TrainerParams = Field(default_factory=TrainerParams)
    eval_sentences: int = Field(default=100, ge=1)
    corpus: CorpusParams = Field(default_factory=CorpusParams)
    cost: SimCostParams = Field(default_factory=SimCostParams)

    @field_validator("utterances_per_speaker")
    @classmethod
    def validate_utterance_range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if not 1 <= v[0] <= v[1]:
            raise ValueError("utterances_per_speaker must satisfy 1 <= low <= high")
        return v

    @field_validator("cleanser_params")
    @classmethod
    def validate_cleansers(
        cls, v: Dict[str, CleanserParams]
    ) -> Dict[str, CleanserParams]:
        """Identity must be a no-op and restore must cost more than denoise."""
        identity = v.get("identity")
        if identity is not None and identity != CleanserParams():
            raise ValueError("identity cleanser must not change the latent state")
        if "denoise" in v and "restore" in v:
            if not v["restore"].artifact_cost > v["denoise"].artifact_cost:
                raise ValueError("restore artifact_cost must exceed denoise's")
        return v

    def cleanser(self, variant: str) -> CleanserParams:
        """Parameters for ``variant``; identity is implicit."""
        variant_registry.require(variant)
        if variant == "identity":
            return CleanserParams()
        if variant not in self.cleanser_params:
            raise DataError(f"no cleanser parameters for variant {variant!r}")
        return self.cleanser_params[variant]


class RegressorKind(str, Enum):
    """Supported training-data-quality regressors."""
    KNN = "knn"
    RIDGE = "ridge"


class RegressorConfig(_Config):
    """Regressor hyper-parameters."""

    model_config = ConfigDict(
        frozen=True, extra="forbid", allow_inf_nan=False, populate_by_name=True
    )

    kind: RegressorKind = RegressorKind.KNN
    k: int = Field(default=10, ge=1)
    lam: float = Field(default=1.0, ge=0.0, alias="lambda")
    standardize: bool = True


class LoopConfig(_Config):
    """Evaluation-in-the-loop settings."""

    sampling_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    regressor: RegressorConfig = Field(default_factory=RegressorConfig)
    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    variants: List[str] = Field(default_factory=lambda: list(DEFAULT_VARIANTS))
    concurrent: bool = True

    @field_validator("variants")
    @classmethod
    def validate_variants(cls, v: List[str]) -> List[str]:
        """Variants must be registered; kept in registration order."""
        if not v:
            raise ValueError("at least one variant is required")
        for name in v:
            if not variant_registry.is_registered(name):
                raise ValueError(f"unregistered variant: {name!r}")
        return variant_registry.sort(v)


class SelectionConfig(_Config):
    """How the final corpus is chosen."""

    method: SelectionMethod = SelectionMethod.OURS_UTT
    n: Optional[int] = Field(default=None, gt=0)
    n_fraction: float = Field(default=0.25, gt=0.0, le=1.0)
    theta: Optional[float] = Field(default=None, ge=1.0, le=5.0)
    variant_policy: str = Field(
        default="switch",
        description="'switch' for per-utterance switching, or a variant name"
    )

    @field_validator("variant_policy")
    @classmethod
    def validate_policy(cls, v: str) -> str:
        if v != "switch" and not variant_registry.is_registered(v):
            raise ValueError(f"variant_policy must be 'switch' or a variant, got {v!r}")
        return v

    def resolve_n(self, pool_size: int) -> int:
        """Target corpus size for a pool of ``pool_size`` utterances."""
        if self.method == SelectionMethod.UNSELECTED:
            return pool_size
        if self.n is not None:
            return self.n
        return max(1, math.ceil(self.n_fraction * pool_size))

    @property
    def label(self) -> str:
        return f"{self.method.value}-{self.variant_policy}"


class ReportConfig(_Config):
    """Report rendering options."""

    grid: str = "1.0:5.0:0.05"
    confidence: float = 0.95
    plot_csv: bool = True

    @field_validator("grid")
    @classmethod
    def validate_grid(cls, v: str) -> str:
        parse_grid(v)
        return v

    def grid_values(self) -> List[float]:
        return parse_grid(self.grid)


class RealAdapterConfig(_Config):
    """Stanza for running the loop against real trainer/evaluator adapters."""

    pool: Path
    trainer: str = Field(description="Import path 'module:Class'")
    evaluator: str = Field(description="Import path 'module:Class'")
    reference_scores: Path

    @field_validator("trainer", "evaluator")
    @classmethod
    def validate_import_path(cls, v: str) -> str:
        module, _, attr = v.partition(":")
        if not module or not attr:
            raise ValueError(f"adapter must be 'module:Class', got {v!r}")
        return v


class PipelineConfig(_Config):
    """Single JSON document driving a full run."""

    seed: int = Field(default=0, ge=0, le=MAX_SEED)
    output_dir: Path = Path("runs/ttsops")
    extra_variants: List[str] = Field(
        default_factory=list,
        description="Cleansing variants registered before the rest is validated"
    )
    prescreen: PrescreenConfig = Field(default_factory=PrescreenConfig)
    loop: LoopConfig = Field(default_factory=LoopConfig)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    report: ReportConfig = Field(default_factory=ReportConfig)
    sim: Optional[SimConfig] = None
    real: Optional[RealAdapterConfig] = None

    @model_validator(mode="before")
    @classmethod
    def register_extra_variants(cls, data: Any) -> Any:
        if isinstance(data, dict):
            for name in data.get("extra_variants") or []:
                try:
                    register_variant(name)
                except DataError as e:
                    raise ValueError(str(e)) from e
        return data

    @model_validator(mode="after")
    def validate_mode(self) -> "PipelineConfig":
        """Exactly one of the sim and real stanzas must be present."""
        if (self.sim is None) == (self.real is None):
            raise ValueError("exactly one of 'sim' or 'real' must be configured")
        policy = self.selection.variant_policy
        if policy != "switch" and policy not in self.loop.variants:
            raise ValueError(
                f"variant_policy {policy!r} is not among loop variants"
            )
        return self
