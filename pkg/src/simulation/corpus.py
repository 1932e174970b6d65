"""Synthetic candidate corpora and simulated cleansers.

The training-data quality of an utterance is
``q(u) = clamp(b - w_a*a - w_d*d, 1, 5)`` for base quality ``b``, additive
noise ``a`` and device distortion ``d``. The observable acoustic quality is a
noisy, differently weighted view of the same state: it mostly hears noise and
barely hears base quality or cleanser artifacts.
"""
import logging
import math
from functools import lru_cache
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from src.models.configs import SimConfig
from src.models.schemas import (
    IDENTITY,
    LatentState,
    Manifest,
    UtteranceRecord,
    variant_registry,
)
from src.simulation.rng import make_rng
from src.utils.errors import DataError

logger = logging.getLogger(__name__)


def _clamp(x: float, low: float = 1.0, high: float = 5.0) -> float:
    return min(high, max(low, x))


def latent_quality(latent: LatentState, cfg: SimConfig) -> float:
    """Ground-truth training-data quality q of a latent state."""
    w = cfg.quality_weights
    return _clamp(
        latent.base_quality
        - w.w_a * latent.noise_level
        - w.w_d * latent.device_distortion
    )


def record_quality(record: UtteranceRecord, cfg: SimConfig) -> float:
    """q(u) of a simulated record.

    Raises:
        DataError: If the record carries no latent state
    """
    if record.latent is None:
        raise DataError(f"record {record.utterance_id!r} has no latent state")
    return latent_quality(record.latent, cfg)


@lru_cache(maxsize=32)
def _projection(seed: int, feature_dim: int) -> Tuple[Tuple[float, ...], ...]:
    rng = make_rng(seed, "feature-projection")
    return tuple(tuple(row) for row in rng.normal(size=(feature_dim, 3)).tolist())


def observe(
    latent: LatentState,
    utterance_id: str,
    cfg: SimConfig
) -> Tuple[Tuple[float, ...], float]:
    """Features and acoustic quality of an utterance in ``latent`` state.

    Observation noise is fixed per (seed, utterance), so re-observing a
    cleansed version only changes what the latent change explains.
    """
    p = cfg.corpus
    rng = make_rng(cfg.rng_seed, "observation", utterance_id)
    feature_noise = rng.normal(0.0, p.feature_noise_sd, cfg.feature_dim)
    acoustic_noise = float(rng.normal(0.0, p.acoustic_noise_sd))

    z = np.array([
        latent.base_quality - p.base_quality_mean,
        latent.noise_level,
        latent.device_distortion,
    ])
    w = np.asarray(_projection(cfg.rng_seed, cfg.feature_dim))
    features = tuple(float(x) for x in w @ z + feature_noise)

    acoustic = _clamp(
        p.acoustic_intercept
        - p.acoustic_noise_weight * latent.noise_level
        - p.acoustic_distortion_weight * latent.device_distortion
        + p.acoustic_base_weight * (latent.base_quality - p.base_quality_mean)
        + acoustic_noise
    )
    return features, acoustic


def _make_record(
    utterance_id: str,
    group_id: str,
    ctc_score: float,
    embedding: np.ndarray,
    duration_s: float,
    latent: LatentState,
    cfg: SimConfig
) -> UtteranceRecord:
    features, acoustic = observe(latent, utterance_id, cfg)
    return UtteranceRecord(
        utterance_id=utterance_id,
        group_id=group_id,
        ctc_score=ctc_score,
        embedding=tuple(float(x) for x in embedding),
        features=features,
        duration_s=duration_s,
        acoustic_quality=acoustic,
        latent=latent
    )


def generate_corpus(cfg: SimConfig) -> Manifest:
    """Generate the identity-variant candidate pool for ``cfg``.

    Each group is one recording session (a video analog) of one speaker in
    clean or degraded conditions. A few groups mix two speakers and a few
    utterances are misaligned; pre-screening is expected to catch both.
    """
    p = cfg.corpus
    lo, hi = cfg.utterances_per_speaker
    embedding_sd = math.sqrt(p.target_compactness / cfg.embedding_dim)
    records: List[UtteranceRecord] = []

    for s in range(cfg.n_speakers):
        rng = make_rng(cfg.rng_seed, "speaker", s)
        group_id = f"spk{s:04d}"
        n_utts = int(rng.integers(lo, hi + 1))
        clean = bool(rng.random() < p.clean_fraction)
        base = float(rng.normal(p.base_quality_mean, p.base_quality_speaker_sd))
        if clean:
            noise = float(rng.gamma(p.gamma_shape, p.clean_noise_scale))
            distortion = float(rng.gamma(p.gamma_shape, p.clean_distortion_scale))
        else:
            noise = float(rng.gamma(p.gamma_shape, p.degraded_noise_scale))
            distortion = float(rng.gamma(p.gamma_shape, p.degraded_distortion_scale))
        center = rng.normal(0.0, p.embedding_center_sd, cfg.embedding_dim)
        mixed = bool(rng.random() < p.mixed_group_fraction)
        other_center = rng.normal(0.0, p.embedding_center_sd, cfg.embedding_dim)

        for j in range(n_utts):
            b = _clamp(base + float(rng.normal(0.0, p.base_quality_utterance_sd)))
            a = noise * math.exp(float(rng.normal(0.0, p.utterance_jitter_sd)))
            d = distortion * math.exp(float(rng.normal(0.0, p.utterance_jitter_sd)))
            misaligned = bool(rng.random() < p.misaligned_fraction)
            if misaligned:
                ctc = -float(rng.uniform(0.35, 2.0))
                b = max(1.0, b - p.misaligned_penalty)
            else:
                ctc = -abs(float(rng.normal(0.0, p.aligned_ctc_sd)))
            speaker_center = other_center if (mixed and j % 2 == 1) else center
            embedding = speaker_center + rng.normal(0.0, embedding_sd, cfg.embedding_dim)
            duration = float(rng.uniform(*p.duration_range))
            records.append(_make_record(
                utterance_id=f"{group_id}_u{j:03d}",
                group_id=group_id,
                ctc_score=ctc,
                embedding=embedding,
                duration_s=duration,
                latent=LatentState(
                    base_quality=b, noise_level=a, device_distortion=d
                ),
                cfg=cfg
            ))

    manifest = Manifest(records=tuple(records), variant=IDENTITY)
    logger.info(
        f"Generated {len(manifest)} utterances for {cfg.n_speakers} groups "
        f"(seed {cfg.rng_seed}); corr(acoustic, q) = "
        f"{corpus_correlation(manifest, cfg):.3f}"
    )
    return manifest


def reference_corpus(cfg: SimConfig) -> Manifest:
    """Small clean, studio-like corpus whose model sets the HQ threshold."""
    p = cfg.corpus
    embedding_sd = math.sqrt(p.target_compactness / cfg.embedding_dim)
    records: List[UtteranceRecord] = []
    for s in range(p.reference_speakers):
        rng = make_rng(cfg.rng_seed, "reference", s)
        group_id = f"ref{s:03d}"
        base = float(rng.normal(p.base_quality_mean, p.reference_base_quality_sd))
        noise = float(rng.gamma(p.gamma_shape, p.clean_noise_scale))
        distortion = float(rng.gamma(p.gamma_shape, p.clean_distortion_scale))
        center = rng.normal(0.0, p.embedding_center_sd, cfg.embedding_dim)
        for j in range(p.reference_utterances):
            b = _clamp(base + float(rng.normal(0.0, p.base_quality_utterance_sd)))
            records.append(_make_record(
                utterance_id=f"{group_id}_u{j:03d}",
                group_id=group_id,
                ctc_score=-abs(float(rng.normal(0.0, p.aligned_ctc_sd))),
                embedding=center + rng.normal(0.0, embedding_sd, cfg.embedding_dim),
                duration_s=float(rng.uniform(*p.duration_range)),
                latent=LatentState(
                    base_quality=b,
                    noise_level=noise * math.exp(float(rng.normal(0.0, p.utterance_jitter_sd))),
                    device_distortion=distortion * math.exp(
                        float(rng.normal(0.0, p.utterance_jitter_sd))
                    ),
                ),
                cfg=cfg
            ))
    return Manifest(records=tuple(records), variant=IDENTITY)


def sim_cleanse(u: UtteranceRecord, v: str, cfg: SimConfig) -> UtteranceRecord:
    """Apply the simulated cleanser ``v`` to one utterance.

    Noise and distortion shrink by the cleanser's reduction factors and the
    base quality pays its artifact cost; ids and embedding are unchanged and
    features and acoustic quality are re-observed.

    Raises:
        DataError: Unregistered variant or missing latent state
    """
    params = cfg.cleanser(v)
    if u.latent is None:
        raise DataError(f"record {u.utterance_id!r} has no latent state")
    if v == IDENTITY:
        return u
    latent = LatentState(
        base_quality=max(1.0, u.latent.base_quality - params.artifact_cost),
        noise_level=u.latent.noise_level * (1.0 - params.noise_reduction),
        device_distortion=u.latent.device_distortion * (1.0 - params.distortion_reduction),
    )
    features, acoustic = observe(latent, u.utterance_id, cfg)
    return u.model_copy(
        update={"latent": latent, "features": features, "acoustic_quality": acoustic}
    )


def cleanse_manifest(m: Manifest, v: str, cfg: SimConfig) -> Manifest:
    """Uniformly apply cleanser ``v`` to every record of ``m``."""
    return Manifest(
        records=tuple(sim_cleanse(r, v, cfg) for r in m.records),
        variant=v
    )


def generate_variant_corpora(
    cfg: SimConfig,
    variants: Sequence[str]
) -> Dict[str, Manifest]:
    """Identity pool plus one uniformly cleansed copy per variant.

    The identity manifest is always included.
    """
    base = generate_corpus(cfg)
    wanted = set(variants) | {IDENTITY}
    return {
        v: base if v == IDENTITY else cleanse_manifest(base, v, cfg)
        for v in variant_registry.sort(wanted)
    }


def latent_preferences(
    corpora: Mapping[str, Manifest],
    cfg: SimConfig
) -> Dict[str, str]:
    """Variant maximizing latent q for every utterance.

    Ties go to the earlier registered variant.
    """
    variants = variant_registry.sort(list(corpora))
    lookups = {v: corpora[v].by_id() for v in variants}
    choice = {}
    for uid in sorted(lookups[variants[0]]):
        best_v, best_q = variants[0], -math.inf
        for v in variants:
            q = record_quality(lookups[v][uid], cfg)
            if q > best_q:
                best_v, best_q = v, q
        choice[uid] = best_v
    return choice


def corpus_correlation(m: Manifest, cfg: SimConfig) -> float:
    """Pearson correlation between acoustic quality and latent q over ``m``."""
    if len(m) < 3 or not m.has_latent:
        return float("nan")
    aq = np.array([r.acoustic_quality for r in m.records])
    q = np.array([record_quality(r, cfg) for r in m.records])
    if np.ptp(aq) == 0 or np.ptp(q) == 0:
        return float("nan")
    return float(np.corrcoef(aq, q)[0, 1])
