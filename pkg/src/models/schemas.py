"""Pydantic models for corpora, selections, quality tables and reports."""
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.utils.errors import DataError
from src.utils.validators import validate_variant_name

IDENTITY = "identity"
DEFAULT_VARIANTS: Tuple[str, ...] = ("identity", "denoise", "restore")


class VariantRegistry:
    """Ordered set of known cleansing variants.

    Registration order is the tie-break order wherever variants compete, so
    ``identity`` is always first.
    """

    def __init__(self, names: Sequence[str] = DEFAULT_VARIANTS):
        self._names: List[str] = []
        self.register(IDENTITY)
        for name in names:
            self.register(name)

    def register(self, name: str) -> None:
        """Register a variant; registering twice is a no-op."""
        if not validate_variant_name(name):
            raise DataError(f"invalid variant name: {name!r}")
        if name not in self._names:
            self._names.append(name)

    def is_registered(self, name: str) -> bool:
        return name in self._names

    def require(self, name: str) -> str:
        """Return ``name`` or raise if it was never registered."""
        if name not in self._names:
            raise DataError(f"unregistered variant: {name!r}")
        return name

    def order(self, name: str) -> int:
        return self._names.index(self.require(name))

    def sort(self, names: Sequence[str]) -> List[str]:
        """Sort variant names by registration order, dropping duplicates."""
        return sorted(set(names), key=self.order)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._names)


variant_registry = VariantRegistry()


def register_variant(name: str) -> None:
    """Register an additional cleansing variant globally."""
    variant_registry.register(name)


class LatentState(BaseModel):
    """Ground-truth state of a simulated utterance."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    base_quality: float = Field(ge=1.0, le=5.0)
    noise_level: float = Field(ge=0.0)
    device_distortion: float = Field(ge=0.0)


class UtteranceRecord(BaseModel):
    """One candidate utterance."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    utterance_id: str = Field(min_length=1)
    group_id: str = Field(min_length=1)
    ctc_score: float = Field(le=0.0, description="Log-domain alignment score")
    embedding: Tuple[float, ...] = Field(min_length=1)
    features: Tuple[float, ...] = Field(min_length=1)
    duration_s: float = Field(gt=0.0)
    acoustic_quality: float = Field(ge=1.0, le=5.0)
    latent: Optional[LatentState] = None


class Manifest(BaseModel):
    """An ordered, homogeneous set of utterance records for one variant."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    records: Tuple[UtteranceRecord, ...]
    variant: str = IDENTITY

    @field_validator("variant")
    @classmethod
    def validate_variant(cls, v: str) -> str:
        """Variants must be registered before use."""
        return variant_registry.require(v)

    @model_validator(mode="after")
    def validate_records(self) -> "Manifest":
        """Enforce non-emptiness, unique ids and homogeneous dimensions."""
        if not self.records:
            raise DataError("manifest must be non-empty")
        first = self.records[0]
        seen = set()
        for i, record in enumerate(self.records):
            if record.utterance_id in seen:
                raise DataError(f"duplicate utterance_id {record.utterance_id!r}")
            seen.add(record.utterance_id)
            if len(record.embedding) != len(first.embedding):
                raise DataError(
                    f"record {i} embedding dimension {len(record.embedding)} "
                    f"!= {len(first.embedding)}"
                )
            if len(record.features) != len(first.features):
                raise DataError(
                    f"record {i} feature dimension {len(record.features)} "
                    f"!= {len(first.features)}"
                )
        return self

    @property
    def embedding_dim(self) -> int:
        return len(self.records[0].embedding)

    @property
    def feature_dim(self) -> int:
        return len(self.records[0].features)

    @property
    def has_latent(self) -> bool:
        return all(r.latent is not None for r in self.records)

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> List[str]:
        return [r.utterance_id for r in self.records]

    def by_id(self) -> Dict[str, UtteranceRecord]:
        return {r.utterance_id: r for r in self.records}

    def groups(self) -> Dict[str, List[UtteranceRecord]]:
        """Group records by group_id in first-appearance order."""
        grouped: Dict[str, List[UtteranceRecord]] = {}
        for record in self.records:
            grouped.setdefault(record.group_id, []).append(record)
        return grouped

    def group_ids(self) -> List[str]:
        return sorted(self.groups())

    def with_records(self, records: Sequence[UtteranceRecord]) -> "Manifest":
        """Return a manifest of the same variant holding ``records``."""
        return Manifest(records=tuple(records), variant=self.variant)

    def subset(self, ids: Iterable[str]) -> "Manifest":
        """Records whose id is in ``ids``, in manifest order."""
        wanted = set(ids)
        return self.with_records([r for r in self.records if r.utterance_id in wanted])

    def feature_matrix(self) -> np.ndarray:
        return np.array([r.features for r in self.records], dtype=np.float64)

    def embedding_matrix(self) -> np.ndarray:
        return np.array([r.embedding for r in self.records], dtype=np.float64)


class SelectionMethod(str, Enum):
    """Corpus construction methods."""
    UNSELECTED = "unselected"
    ACOUSTIC_THETA = "acoustic_theta"
    OURS_UTT = "ours_utt"
    OURS_SPK = "ours_spk"


class SelectionEntry(BaseModel):
    """One chosen (utterance, variant) pair."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    utterance_id: str
    variant: str = IDENTITY


ProvenanceValue = Union[float, int, str, None]


class CorpusSelection(BaseModel):
    """A selected training corpus plus how it was chosen."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    entries: Tuple[SelectionEntry, ...]
    method: SelectionMethod
    n: int = Field(ge=0)
    provenance: Dict[str, ProvenanceValue] = Field(default_factory=dict)

    @model_validator(mode="after")
    def validate_entries(self) -> "CorpusSelection":
        """Ids are unique, variants registered and ``n`` matches the entries."""
        if self.n != len(self.entries):
            raise DataError(f"selection n={self.n} but {len(self.entries)} entries")
        ids = set()
        for entry in self.entries:
            if entry.utterance_id in ids:
                raise DataError(f"utterance {entry.utterance_id!r} selected twice")
            ids.add(entry.utterance_id)
            variant_registry.require(entry.variant)
        return self

    def ids(self) -> List[str]:
        return [e.utterance_id for e in self.entries]

    def variant_of(self) -> Dict[str, str]:
        return {e.utterance_id: e.variant for e in self.entries}


class QualityTable(BaseModel):
    """Training-data-quality scores per (utterance, variant).

    ``speaker_scores`` holds the speaker-wise pseudo MOS of each variant's
    initial model and ``seen_speakers`` the speakers present in that model's
    training sample.
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    variants: Tuple[str, ...]
    scores: Dict[str, Dict[str, float]]
    speaker_scores: Dict[str, Dict[str, float]]
    seen_speakers: Dict[str, Tuple[str, ...]]

    @model_validator(mode="after")
    def validate_coverage(self) -> "QualityTable":
        """Every variant covers the same utterance set with in-range scores."""
        if not self.variants:
            raise DataError("quality table has no variants")
        if len(set(self.variants)) != len(self.variants):
            raise DataError("quality table variants must be unique")
        expected = None
        for variant in self.variants:
            variant_registry.require(variant)
            if variant not in self.scores or variant not in self.speaker_scores:
                raise DataError(f"quality table misses variant {variant!r}")
            ids = set(self.scores[variant])
            if expected is None:
                expected = ids
            elif ids != expected:
                raise DataError(
                    f"variant {variant!r} covers a different utterance set"
                )
            for uid, score in self.scores[variant].items():
                if not 1.0 <= score <= 5.0:
                    raise DataError(
                        f"score {score} for ({uid!r}, {variant!r}) outside [1, 5]"
                    )
        extra = set(self.scores) - set(self.variants)
        if extra:
            raise DataError(f"scores for undeclared variants: {sorted(extra)}")
        return self

    def utterance_ids(self) -> List[str]:
        return sorted(self.scores[self.variants[0]])

    def score(self, utterance_id: str, variant: str) -> float:
        try:
            return self.scores[variant][utterance_id]
        except KeyError as e:
            raise DataError(
                f"no quality entry for ({utterance_id!r}, {variant!r})"
            ) from e

    def __len__(self) -> int:
        return sum(len(self.scores[v]) for v in self.variants)

    @classmethod
    def merge(cls, tables: Sequence["QualityTable"]) -> "QualityTable":
        """Merge single-variant tables, ordering variants by registration."""
        variants = variant_registry.sort([v for t in tables for v in t.variants])
        if len(variants) != sum(len(t.variants) for t in tables):
            raise DataError("cannot merge tables sharing a variant")
        scores: Dict[str, Dict[str, float]] = {}
        speakers: Dict[str, Dict[str, float]] = {}
        seen: Dict[str, Tuple[str, ...]] = {}
        for table in tables:
            for v in table.variants:
                scores[v] = table.scores[v]
                speakers[v] = table.speaker_scores[v]
                seen[v] = table.seen_speakers[v]
        return cls(
            variants=tuple(variants),
            scores=scores,
            speaker_scores=speakers,
            seen_speakers=seen
        )


class SpeakerScore(BaseModel):
    """Pseudo MOS of one speaker under a trained model."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    group_id: str
    pseudo_mos: float = Field(ge=1.0, le=5.0)
    seen: bool = True


class HqThreshold(BaseModel):
    """Score a speaker must exceed to count as high quality."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    value: float = Field(ge=1.0, le=5.0)
    source: str = "reference-model minimum"


class HqCount(BaseModel):
    """High-quality speaker count with its exact and formatted ratio."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    count: int = Field(ge=0)
    total: int = Field(ge=0)
    fraction: str = Field(description="Exact ratio as count/total")
    percent: str = Field(description="Ratio rounded to one decimal percent")


class Histogram(BaseModel):
    """Cumulative histogram: counts[i] speakers score above grid[i]."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    grid: List[float]
    counts: List[int]


class CorrelationBlock(BaseModel):
    """Pearson correlation with its Fisher confidence interval."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    r: float
    n: int
    confidence: float
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None


class CostAccount(BaseModel):
    """Computation-time account of one evaluation-in-the-loop run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    train_s: float = Field(ge=0.0)
    eval_s: float = Field(ge=0.0)
    regress_s: float = Field(ge=0.0)
    total_s: float = Field(ge=0.0)
    total: str
    variant_loops: int = Field(default=1, ge=1)


class Report(BaseModel):
    """Evaluation summary of one corpus-construction method."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    method: SelectionMethod
    variant_policy: str
    n_selected: int = Field(ge=0)
    speakers: List[SpeakerScore]
    mean_pseudo_mos: float
    threshold: HqThreshold
    hq_overall: HqCount
    hq_seen: HqCount
    hq_unseen: HqCount
    mst_cost: float = Field(ge=0.0)
    histogram: Histogram
    variant_shares: Dict[str, float] = Field(default_factory=dict)
    pool_switch_shares: Dict[str, float] = Field(default_factory=dict)
    correlations: Dict[str, CorrelationBlock] = Field(default_factory=dict)
    cost: Optional[CostAccount] = None
