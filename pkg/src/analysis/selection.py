"""Corpus determination: variant switching and utterance/speaker selection."""
import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from src.models.configs import SelectionConfig
from src.models.schemas import (
    IDENTITY,
    CorpusSelection,
    Manifest,
    QualityTable,
    SelectionEntry,
    SelectionMethod,
    variant_registry,
)
from src.utils.errors import DataError

logger = logging.getLogger(__name__)

Choice = Tuple[str, float]
PoolVariants = Mapping[str, Manifest]


def _argmax_variant(scores: Iterable[Tuple[str, float]]) -> Choice:
    """Best (variant, score); the first of equal scores wins."""
    best: Optional[Choice] = None
    for variant, score in scores:
        if best is None or score > best[1]:
            best = (variant, score)
    if best is None:
        raise DataError("no variants to choose from")
    return best


def switch_variants(q: QualityTable) -> Dict[str, Choice]:
    """Per utterance, the variant with the highest training-data quality.

    Ties go to the earlier registered variant, so ``identity`` wins whenever
    cleansing does not help. The returned score is that maximum.

    Raises:
        DataError: Missing (utterance, variant) entry
    """
    variants = variant_registry.sort(q.variants)
    return {
        uid: _argmax_variant((v, q.score(uid, v)) for v in variants)
        for uid in q.utterance_ids()
    }


def switch_speakers(q: QualityTable) -> Dict[str, Choice]:
    """Per speaker, the variant whose initial model scored it highest."""
    variants = variant_registry.sort(q.variants)
    speakers = sorted(q.speaker_scores[variants[0]])
    choice = {}
    for g in speakers:
        try:
            choice[g] = _argmax_variant((v, q.speaker_scores[v][g]) for v in variants)
        except KeyError as e:
            raise DataError(f"no speaker score for {g!r} under {e}") from e
    return choice


def uniform_variant(q: QualityTable, variant: str) -> Dict[str, float]:
    """Score map of a single variant."""
    if variant not in q.variants:
        raise DataError(f"quality table has no variant {variant!r}")
    return dict(q.scores[variant])


def variant_shares(
    choice: Mapping[str, str],
    variants: Optional[Sequence[str]] = None
) -> Dict[str, float]:
    """Share of utterances assigned to each variant.

    Args:
        choice: utterance_id -> chosen variant
        variants: Variants to report (zero shares included); defaults to the
            variants present in ``choice``
    """
    names = variant_registry.sort(list(variants or []) + list(choice.values()))
    total = len(choice)
    counts = {v: 0 for v in names}
    for v in choice.values():
        counts[v] += 1
    return {v: (counts[v] / total if total else 0.0) for v in names}


def _entries(
    ids: Iterable[str],
    variant_of: Mapping[str, str],
    default: str
) -> Tuple[SelectionEntry, ...]:
    return tuple(
        SelectionEntry(utterance_id=uid, variant=variant_of.get(uid, default))
        for uid in sorted(ids)
    )


def select_top_n(
    scored: Mapping[str, float],
    n: int,
    method: SelectionMethod = SelectionMethod.OURS_UTT,
    variant_of: Optional[Mapping[str, str]] = None,
    provenance: Optional[Dict] = None
) -> CorpusSelection:
    """The ``n`` highest-scoring utterances.

    Ties are broken by lexicographic utterance_id.

    Raises:
        DataError: n <= 0 or n > number of scored utterances
    """
    if n <= 0:
        raise DataError(f"n must be positive, got {n}")
    if n > len(scored):
        raise DataError(f"n={n} exceeds the {len(scored)} scored utterances")
    ranked = sorted(scored.items(), key=lambda kv: (-kv[1], kv[0]))
    chosen = [uid for uid, _ in ranked[:n]]
    info = dict(provenance or {})
    info.setdefault("target_n", n)
    info.setdefault("min_selected_score", ranked[n - 1][1])
    return CorpusSelection(
        entries=_entries(chosen, variant_of or {}, IDENTITY),
        method=method,
        n=n,
        provenance=info
    )


def select_speaker_wise(
    speaker_scores: Mapping[str, float],
    pool: Manifest,
    n: int,
    speaker_variants: Optional[Mapping[str, str]] = None,
    provenance: Optional[Dict] = None
) -> CorpusSelection:
    """Admit whole speakers in descending score order while the total fits ``n``.

    A speaker that would overflow ``n`` is skipped and scanning continues, so
    the selection never exceeds ``n`` and never splits a speaker.

    Raises:
        DataError: n <= 0 or a pool speaker without a score
    """
    if n <= 0:
        raise DataError(f"n must be positive, got {n}")
    groups = pool.groups()
    missing = set(groups) - set(speaker_scores)
    if missing:
        raise DataError(f"no speaker score for {sorted(missing)[:3]}")

    ranked = sorted(groups, key=lambda g: (-speaker_scores[g], g))
    chosen: List[str] = []
    admitted: List[str] = []
    for g in ranked:
        size = len(groups[g])
        if len(chosen) + size > n:
            continue
        chosen.extend(r.utterance_id for r in groups[g])
        admitted.append(g)

    speaker_variants = speaker_variants or {}
    variant_of = {
        r.utterance_id: speaker_variants.get(g, pool.variant)
        for g in admitted for r in groups[g]
    }
    info = dict(provenance or {})
    info["target_n"] = n
    info["speakers"] = len(admitted)
    logger.info(f"Speaker-wise selection: {len(admitted)} speakers, {len(chosen)}/{n} utterances")
    return CorpusSelection(
        entries=_entries(chosen, variant_of, pool.variant),
        method=SelectionMethod.OURS_SPK,
        n=len(chosen),
        provenance=info
    )


def acoustic_switch(pool: Union[Manifest, PoolVariants]) -> Dict[str, Choice]:
    """Per utterance, the variant with the highest acoustic quality.

    A single manifest yields its own variant for every utterance.
    """
    if isinstance(pool, Manifest):
        return {r.utterance_id: (pool.variant, r.acoustic_quality) for r in pool.records}
    variants = variant_registry.sort(list(pool))
    lookups = {v: pool[v].by_id() for v in variants}
    ids = sorted(lookups[variants[0]])
    choice = {}
    for uid in ids:
        try:
            choice[uid] = _argmax_variant(
                (v, lookups[v][uid].acoustic_quality) for v in variants
            )
        except KeyError as e:
            raise DataError(f"utterance {uid!r} missing from a variant manifest") from e
    return choice


def acoustic_threshold_select(
    pool: Union[Manifest, PoolVariants],
    theta: float
) -> CorpusSelection:
    """Keep utterances whose acoustic quality is strictly higher than ``theta``."""
    if not 1.0 <= theta <= 5.0:
        raise DataError(f"theta must lie in [1, 5], got {theta}")
    choice = acoustic_switch(pool)
    kept = [uid for uid, (_, aq) in choice.items() if aq > theta]
    if not kept:
        logger.warning(f"Acoustic threshold {theta} selects no utterances")
    return CorpusSelection(
        entries=_entries(kept, {uid: v for uid, (v, _) in choice.items()}, IDENTITY),
        method=SelectionMethod.ACOUSTIC_THETA,
        n=len(kept),
        provenance={"theta": theta}
    )


def acoustic_top_n(pool: Union[Manifest, PoolVariants], n: int) -> CorpusSelection:
    """Acoustic-quality baseline at a matched corpus size.

    The implied threshold is the lowest acoustic quality admitted.
    """
    choice = acoustic_switch(pool)
    selection = select_top_n(
        {uid: aq for uid, (_, aq) in choice.items()},
        n,
        method=SelectionMethod.ACOUSTIC_THETA,
        variant_of={uid: v for uid, (v, _) in choice.items()}
    )
    provenance = dict(selection.provenance)
    provenance["theta"] = provenance.pop("min_selected_score")
    return selection.model_copy(update={"provenance": provenance})


def select_utterances(q: QualityTable, n: int, policy: str = "switch") -> CorpusSelection:
    """Utterance-wise top-n on switched scores, or on one variant's scores.

    Args:
        q: Quality table
        n: Corpus size
        policy: ``"switch"`` or a variant name
    """
    if policy == "switch":
        choice = switch_variants(q)
        scored = {u: s for u, (_, s) in choice.items()}
        variant_of = {u: v for u, (v, _) in choice.items()}
    else:
        scored = uniform_variant(q, policy)
        variant_of = {u: policy for u in scored}
    selection = select_top_n(scored, n, variant_of=variant_of, provenance={"policy": policy})
    logger.info(f"Utterance-wise selection: {selection.n} utterances ({policy})")
    return selection


def unselected_selection(
    ids: Iterable[str],
    variant_of: Optional[Mapping[str, str]] = None,
    variant: str = IDENTITY
) -> CorpusSelection:
    """Every candidate, each under its chosen (or the given) variant."""
    chosen = sorted(ids)
    return CorpusSelection(
        entries=_entries(chosen, variant_of or {}, variant),
        method=SelectionMethod.UNSELECTED,
        n=len(chosen),
        provenance={}
    )


def build_selection(
    cfg: SelectionConfig,
    pool_variants: PoolVariants,
    q: Optional[QualityTable] = None
) -> CorpusSelection:
    """Build the final corpus for ``cfg.method`` and ``cfg.variant_policy``.

    Args:
        cfg: Method, size and variant policy
        pool_variants: Pre-screened manifests per variant
        q: Quality table; required by the ours_* methods and by switching
            with the unselected method

    Raises:
        DataError: Missing inputs, unknown policy variant or invalid size
    """
    switching = cfg.variant_policy == "switch"
    if not switching and cfg.variant_policy not in pool_variants:
        raise DataError(f"no manifest for variant {cfg.variant_policy!r}")
    if IDENTITY in pool_variants:
        base = pool_variants[IDENTITY]
    else:
        base = next(iter(pool_variants.values()))
    n = cfg.resolve_n(len(base))
    tags = {"policy": cfg.variant_policy}

    if cfg.method == SelectionMethod.ACOUSTIC_THETA:
        pool = pool_variants if switching else pool_variants[cfg.variant_policy]
        if cfg.theta is not None:
            selection = acoustic_threshold_select(pool, cfg.theta)
        else:
            selection = acoustic_top_n(pool, n)
        return selection.model_copy(update={"provenance": {**selection.provenance, **tags}})

    if q is None:
        if cfg.method == SelectionMethod.UNSELECTED and not switching:
            return unselected_selection(base.ids(), variant=cfg.variant_policy)
        raise DataError(f"method {cfg.method.value} needs a quality table")

    if cfg.method == SelectionMethod.UNSELECTED:
        if switching:
            choice = switch_variants(q)
            return unselected_selection(base.ids(), {u: v for u, (v, _) in choice.items()})
        return unselected_selection(base.ids(), variant=cfg.variant_policy)

    if cfg.method == SelectionMethod.OURS_UTT:
        return select_utterances(q, n, cfg.variant_policy)

    if switching:
        speakers = switch_speakers(q)
        scores = {g: s for g, (_, s) in speakers.items()}
        speaker_variants = {g: v for g, (v, _) in speakers.items()}
        pool = base
    else:
        scores = dict(q.speaker_scores[cfg.variant_policy])
        speaker_variants = {}
        pool = pool_variants[cfg.variant_policy]
    return select_speaker_wise(scores, pool, n, speaker_variants, provenance=tags)
