"""Pre-screening: drop utterances and groups too broken for initial training."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from src.models.configs import PrescreenConfig
from src.models.schemas import Manifest
from src.utils.errors import DataError
from src.utils.validators import require_same_dimension

logger = logging.getLogger(__name__)


@dataclass
class PrescreenSummary:
    """Counts of what each filter removed."""
    candidates: int
    after_compactness: int
    after_ctc: int
    dropped_groups: List[str] = field(default_factory=list)
    group_scores: Dict[str, float] = field(default_factory=dict)


def ctc_filter(m: Manifest, threshold: float) -> Manifest:
    """Keep records whose alignment score is at least ``threshold``.

    Raises:
        DataError: If every candidate is filtered
    """
    kept = [r for r in m.records if r.ctc_score >= threshold]
    if not kept:
        raise DataError("all candidates filtered")
    logger.info(f"CTC filter ({threshold}): kept {len(kept)}/{len(m)} utterances")
    return m.with_records(kept)


def compactness_score(group: Sequence[Sequence[float]]) -> float:
    """Spread of a group's embeddings.

    Trace of the biased covariance, i.e. the mean squared Euclidean distance
    of the embeddings from their mean.

    Raises:
        DataError: Empty group or dimension mismatch
    """
    require_same_dimension(group, "embedding")
    x = np.asarray(group, dtype=np.float64)
    centered = x - x.mean(axis=0)
    return float(np.mean(np.sum(centered * centered, axis=1)))


def group_compactness(m: Manifest) -> Dict[str, float]:
    """Compactness score of every group in ``m``."""
    return {
        group_id: compactness_score([r.embedding for r in records])
        for group_id, records in m.groups().items()
    }


def compactness_filter(m: Manifest, cfg: PrescreenConfig) -> Manifest:
    """Drop every group whose compactness lies outside the configured bounds.

    Surviving groups are treated as one speaker each.

    Raises:
        DataError: If every group is filtered
    """
    scores = group_compactness(m)
    kept_groups = {
        g for g, s in scores.items()
        if cfg.compactness_low <= s <= cfg.compactness_high
    }
    kept = [r for r in m.records if r.group_id in kept_groups]
    if not kept:
        raise DataError("all candidates filtered")
    logger.info(
        f"Compactness filter [{cfg.compactness_low}, {cfg.compactness_high}]: "
        f"kept {len(kept_groups)}/{len(scores)} groups"
    )
    return m.with_records(kept)


def prescreen(m: Manifest, cfg: PrescreenConfig) -> Tuple[Manifest, PrescreenSummary]:
    """Apply the compactness filter then the CTC filter.

    Compactness is computed over the records present, so the two orders agree
    whenever removing misaligned utterances does not move a group across a
    compactness bound.
    """
    scores = group_compactness(m)
    after_compactness = compactness_filter(m, cfg)
    screened = ctc_filter(after_compactness, cfg.ctc_threshold)
    surviving = {r.group_id for r in after_compactness.records}
    summary = PrescreenSummary(
        candidates=len(m),
        after_compactness=len(after_compactness),
        after_ctc=len(screened),
        dropped_groups=sorted(set(scores) - surviving),
        group_scores=scores
    )
    return screened, summary


def apply_to_variants(
    screened: Manifest,
    variants: Mapping[str, Manifest]
) -> Dict[str, Manifest]:
    """Restrict every variant manifest to the ids that survived screening.

    Cleansing leaves ids, alignment scores and embeddings unchanged, so the
    decisions taken on the identity manifest hold for every variant.
    """
    keep = set(screened.ids())
    restricted = {}
    for variant, manifest in variants.items():
        records = [r for r in manifest.records if r.utterance_id in keep]
        if len(records) != len(keep):
            raise DataError(f"variant {variant!r} lacks screened utterances")
        restricted[variant] = manifest.with_records(records)
    return restricted
