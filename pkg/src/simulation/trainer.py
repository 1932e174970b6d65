"""Simulated TTS trainer, pseudo-MOS evaluator and compute-cost model."""
import hashlib
import logging
import math
from dataclasses import dataclass
from datetime import timedelta
from typing import Dict, FrozenSet, List, Mapping, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from src.analysis.metrics import speaker_centroids
from src.analysis.quality_loop import Evaluator, Pool, Trainer
from src.models.configs import SimConfig
from src.models.schemas import IDENTITY, CorpusSelection, Manifest, UtteranceRecord
from src.simulation.corpus import record_quality
from src.simulation.rng import make_rng
from src.utils.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimModel:
    """Synthesis quality Q(s) the simulated model reaches for every speaker."""
    speaker_quality: Mapping[str, float]
    seen: FrozenSet[str]
    corpus_digest: str
    seed: int
    training_audio_s: float = 0.0

    def quality(self, speaker: str) -> float:
        if speaker not in self.speaker_quality:
            raise DataError(f"unknown speaker {speaker!r}")
        return self.speaker_quality[speaker]


def selection_digest(selection: CorpusSelection) -> str:
    """SHA-256 over the sorted (utterance, variant) pairs of a selection."""
    h = hashlib.sha256()
    for entry in sorted(selection.entries, key=lambda e: e.utterance_id):
        h.update(f"{entry.utterance_id}\t{entry.variant}\n".encode("utf-8"))
    return h.hexdigest()


def _clamp(x: float) -> float:
    return min(5.0, max(1.0, x))


def _resolve_records(
    selection: CorpusSelection,
    pool: Pool
) -> Tuple[Manifest, List[UtteranceRecord]]:
    pools = {pool.variant: pool} if isinstance(pool, Manifest) else dict(pool)
    if not pools:
        raise DataError("empty pool")
    lookups: Dict[str, Dict[str, UtteranceRecord]] = {}
    records = []
    for entry in selection.entries:
        if entry.variant not in pools:
            raise DataError(f"no pool manifest for variant {entry.variant!r}")
        if entry.variant not in lookups:
            lookups[entry.variant] = pools[entry.variant].by_id()
        record = lookups[entry.variant].get(entry.utterance_id)
        if record is None:
            raise DataError(f"selected utterance {entry.utterance_id!r} not in pool")
        records.append(record)
    base = pools[IDENTITY] if IDENTITY in pools else next(iter(pools.values()))
    return base, records


def sim_train(
    selection: CorpusSelection,
    pool: Pool,
    cfg: SimConfig,
    seed: int
) -> SimModel:
    """Train the simulated model.

    A seen speaker reaches
    ``Q(s) = clamp(mu0 + alpha*mean_s(q) + beta*mean(q) + eps_s, 1, 5)``;
    an unseen speaker borrows the speaker term of the nearest seen speaker by
    centroid embedding distance, damped. Ties in distance go to the smaller
    group_id.

    Raises:
        DataError: Empty selection or selected ids missing from the pool
    """
    if not selection.entries:
        raise DataError("cannot train on an empty selection")
    base, records = _resolve_records(selection, pool)
    params = cfg.trainer_params

    per_speaker: Dict[str, List[float]] = {}
    for record in records:
        per_speaker.setdefault(record.group_id, []).append(record_quality(record, cfg))
    all_q = [q for qs in per_speaker.values() for q in qs]
    corpus_term = params.beta * math.fsum(all_q) / len(all_q)
    speaker_term = {
        s: params.alpha * math.fsum(qs) / len(qs) for s, qs in per_speaker.items()
    }

    centroids = speaker_centroids(base)
    missing = set(per_speaker) - set(centroids)
    if missing:
        raise DataError(f"selected speakers missing from pool: {sorted(missing)[:3]}")
    seen_sorted = sorted(speaker_term)
    unseen = sorted(set(centroids) - set(speaker_term))
    borrowed: Dict[str, float] = {}
    if unseen:
        dist = cdist(
            np.array([centroids[g] for g in unseen]),
            np.array([centroids[g] for g in seen_sorted]),
        )
        for g, row in zip(unseen, dist):
            nearest = seen_sorted[int(np.argmin(row))]
            borrowed[g] = params.unseen_damping * speaker_term[nearest]

    quality = {}
    for g in sorted(centroids):
        eps = 0.0
        if params.sigma_train > 0:
            eps = float(make_rng(seed, "train", g).normal(0.0, params.sigma_train))
        term = speaker_term[g] if g in speaker_term else borrowed[g]
        quality[g] = _clamp(params.mu0 + term + corpus_term + eps)

    model = SimModel(
        speaker_quality=quality,
        seen=frozenset(speaker_term),
        corpus_digest=selection_digest(selection),
        seed=seed,
        training_audio_s=math.fsum(r.duration_s for r in records)
    )
    logger.debug(
        f"Simulated training on {len(records)} utterances: "
        f"{len(speaker_term)} seen, {len(unseen)} unseen speakers"
    )
    return model


def sim_eval_speaker(model: SimModel, speaker: str, cfg: SimConfig, seed: int) -> float:
    """Mean pseudo MOS over ``cfg.eval_sentences`` noisy synthetic sentences.

    Raises:
        DataError: Speaker unknown to the model
    """
    q = model.quality(speaker)
    sigma = cfg.trainer_params.sigma_eval
    if sigma == 0:
        return q
    rng = make_rng(seed, "eval", speaker)
    draws = np.clip(q + rng.normal(0.0, sigma, cfg.eval_sentences), 1.0, 5.0)
    return float(np.mean(draws))


class SimTrainer(Trainer):
    """Trainer adapter over ``sim_train``."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg

    def train(self, selection: CorpusSelection, pool: Pool, seed: int) -> SimModel:
        return sim_train(selection, pool, self.cfg, seed)


class SimEvaluator(Evaluator):
    """Evaluator adapter over ``sim_eval_speaker``."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg

    def eval_speaker(self, model: SimModel, speaker: str, seed: int) -> float:
        return sim_eval_speaker(model, speaker, self.cfg, seed)


def sim_cost(
    cfg: SimConfig,
    training_audio_s: float,
    n_speakers: int,
    n_utterances: int
) -> Tuple[timedelta, timedelta, timedelta]:
    """Simulated (train, evaluation, regression) compute time of one loop."""
    cost = cfg.cost
    train = training_audio_s / 3600.0 * cost.train_seconds_per_audio_hour
    evaluate = n_speakers * cfg.eval_sentences * cost.eval_seconds_per_sentence
    regress = n_utterances * cost.regress_seconds_per_utterance
    return timedelta(seconds=train), timedelta(seconds=evaluate), timedelta(seconds=regress)
