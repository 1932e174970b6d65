"""Pytest configuration and fixtures."""
from typing import Dict, Optional, Sequence

import pytest

from src.models.configs import CorpusParams, LoopConfig, PipelineConfig, SimConfig
from src.models.schemas import (
    DEFAULT_VARIANTS,
    IDENTITY,
    LatentState,
    Manifest,
    QualityTable,
    UtteranceRecord,
    variant_registry,
)
from src.simulation.corpus import generate_variant_corpora


def make_record(
    utterance_id: str,
    group_id: str,
    embedding: Sequence[float] = (0.0, 0.0),
    features: Sequence[float] = (0.0, 0.0),
    ctc_score: float = -0.1,
    acoustic_quality: float = 3.0,
    duration_s: float = 3.0,
    latent: Optional[LatentState] = None
) -> UtteranceRecord:
    """Hand-built utterance record with harmless defaults."""
    return UtteranceRecord(
        utterance_id=utterance_id,
        group_id=group_id,
        ctc_score=ctc_score,
        embedding=tuple(embedding),
        features=tuple(features),
        duration_s=duration_s,
        acoustic_quality=acoustic_quality,
        latent=latent
    )


def make_table(scores: Dict[str, Dict[str, float]]) -> QualityTable:
    """QualityTable from ``{variant: {utterance_id: score}}`` with flat speaker scores."""
    variants = tuple(scores)
    return QualityTable(
        variants=variants,
        scores=scores,
        speaker_scores={v: {"g": 3.0} for v in variants},
        seen_speakers={v: ("g",) for v in variants}
    )


@pytest.fixture
def small_sim() -> SimConfig:
    """A simulated world small enough for unit tests."""
    return SimConfig(
        n_speakers=24,
        utterances_per_speaker=(6, 10),
        eval_sentences=20,
        rng_seed=3,
        corpus=CorpusParams(reference_speakers=5, reference_utterances=6)
    )


@pytest.fixture
def small_corpora(small_sim) -> Dict[str, Manifest]:
    """Identity, denoise and restore copies of the small pool."""
    return generate_variant_corpora(small_sim, DEFAULT_VARIANTS)


@pytest.fixture
def loop_cfg() -> LoopConfig:
    """Sequential loop with a small k."""
    return LoopConfig(
        seed=5,
        concurrent=False,
        regressor={"kind": "knn", "k": 3}
    )


@pytest.fixture
def tiny_manifest() -> Manifest:
    """Two compact speakers and one two-speaker group."""
    records = [
        make_record("a_1", "a", embedding=(0.0, 0.0), features=(1.0, 0.0)),
        make_record("a_2", "a", embedding=(2.0, 0.0), features=(1.1, 0.1)),
        make_record("a_3", "a", embedding=(0.0, 2.0), features=(0.9, 0.0), ctc_score=-0.9),
        make_record("b_1", "b", embedding=(5.0, 5.0), features=(0.0, 1.0)),
        make_record("b_2", "b", embedding=(8.0, 5.0), features=(0.1, 1.1)),
        make_record("m_1", "m", embedding=(0.0, 0.0), features=(0.5, 0.5)),
        make_record("m_2", "m", embedding=(10.0, 10.0), features=(0.5, 0.4)),
    ]
    return Manifest(records=tuple(records), variant=IDENTITY)


@pytest.fixture
def pipeline_cfg(tmp_path, small_sim) -> PipelineConfig:
    """Simulated pipeline over the small world, writing under ``tmp_path``."""
    return PipelineConfig(
        seed=11,
        output_dir=tmp_path / "run",
        loop=LoopConfig(concurrent=False, regressor={"kind": "knn", "k": 3}),
        sim=small_sim
    )


@pytest.fixture
def isolated_registry(monkeypatch):
    """Variants registered inside a test are forgotten afterwards."""
    monkeypatch.setattr(variant_registry, "_names", list(variant_registry.names))
    return variant_registry
