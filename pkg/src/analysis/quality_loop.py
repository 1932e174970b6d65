"""Evaluation-in-the-loop: train, evaluate per speaker, regress, score.

One loop runs per cleansing variant. Each loop trains an initial model on all
(or a seeded sample of) the pre-screened candidates, scores every speaker of
the pool with the evaluator, fits a regressor from utterance features to the
speaker scores and finally scores every candidate utterance.
"""
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np

from src.analysis.regressor import FittedRegressor, fit, predict_many
from src.config.settings import settings
from src.data_collection.manifest import check_same_ids
from src.models.configs import LoopConfig
from src.models.schemas import (
    CorpusSelection,
    Manifest,
    QualityTable,
    SelectionEntry,
    SelectionMethod,
    variant_registry,
)
from src.simulation.rng import derive_seed, make_rng
from src.utils.errors import ConfigError, DataError, StageError

logger = logging.getLogger(__name__)

Pool = Union[Manifest, Mapping[str, Manifest]]


class Trainer:
    """Trains a TTS model on a selected corpus."""

    def train(self, selection: CorpusSelection, pool: Pool, seed: int) -> Any:
        """Train a model on ``selection``.

        Args:
            selection: Utterances (and their variants) to train on
            pool: Manifest holding the selected records, or a mapping from
                variant to manifest when the selection mixes variants
            seed: Training seed; equal inputs and seed give an equal model

        Returns:
            Opaque model handed back to the evaluator
        """
        raise NotImplementedError


class Evaluator:
    """Scores a trained model's synthetic speech for one speaker."""

    def eval_speaker(self, model: Any, speaker: str, seed: int) -> float:
        """Speaker-wise pseudo MOS in [1, 5]."""
        raise NotImplementedError


@dataclass
class LoopTimings:
    """Wall-clock seconds spent in each stage of one loop."""
    variant: str
    train_s: float = 0.0
    eval_s: float = 0.0
    regress_s: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class LoopOutcome:
    """Everything one variant loop produced."""
    table: QualityTable
    timings: LoopTimings
    regressor: FittedRegressor
    seed: int
    sample_ids: List[str] = field(default_factory=list)


def _initial_selection(pool: Manifest, fraction: float, seed: int) -> CorpusSelection:
    ids = sorted(pool.ids())
    if not ids:
        raise DataError("empty sample")
    if fraction >= 1.0:
        chosen = ids
    else:
        size = math.ceil(fraction * len(ids))
        rng = make_rng(seed, "sample")
        picked = np.sort(rng.choice(len(ids), size=size, replace=False))
        chosen = [ids[i] for i in picked]
    if not chosen:
        raise DataError("empty sample")
    return CorpusSelection(
        entries=tuple(SelectionEntry(utterance_id=i, variant=pool.variant) for i in chosen),
        method=SelectionMethod.UNSELECTED,
        n=len(chosen),
        provenance={"sampling_fraction": fraction, "seed": seed}
    )


def evaluate_speakers(
    model: Any,
    speakers: List[str],
    evaluator: Evaluator,
    seed: int,
    variant: Optional[str] = None,
    stage: str = "loop.evaluate"
) -> Dict[str, float]:
    """Score every speaker, clamping out-of-range scores with a warning.

    Raises:
        StageError: Evaluator failure or non-finite score
    """
    scores = {}
    for speaker in speakers:
        try:
            score = float(evaluator.eval_speaker(model, speaker, seed))
        except StageError:
            raise
        except Exception as e:
            raise StageError(
                stage, f"speaker {speaker!r}: {e}", variant=variant
            ) from e
        if not math.isfinite(score):
            raise StageError(
                stage, f"speaker {speaker!r}: non-finite score", variant=variant
            )
        if not 1.0 <= score <= 5.0:
            clamped = min(5.0, max(1.0, score))
            logger.warning(
                f"[{variant or stage}] evaluator score {score} for {speaker!r} "
                f"outside [1, 5]; clamped to {clamped}"
            )
            score = clamped
        scores[speaker] = score
    return scores


def execute_quality_loop(
    pool: Manifest,
    trainer: Trainer,
    evaluator: Evaluator,
    cfg: LoopConfig
) -> LoopOutcome:
    """Run one loop and keep its intermediate state.

    The loop seed is derived from ``cfg.seed`` and the pool's variant, so a
    variant scores identically whether it runs alone or beside others.

    Raises:
        DataError: Empty pool
        StageError: Trainer, evaluator or regressor failure
    """
    variant = pool.variant
    seed = derive_seed(cfg.seed, variant)
    timings = LoopTimings(variant=variant)

    selection = _initial_selection(pool, cfg.sampling_fraction, seed)
    logger.info(
        f"[{variant}] initial training on {selection.n}/{len(pool)} utterances"
    )

    start = time.perf_counter()
    try:
        model = trainer.train(selection, pool, seed)
    except StageError:
        raise
    except Exception as e:
        raise StageError("loop.train", str(e), variant=variant) from e
    timings.train_s = time.perf_counter() - start

    start = time.perf_counter()
    speakers = pool.group_ids()
    speaker_scores = evaluate_speakers(model, speakers, evaluator, seed, variant)
    timings.eval_s = time.perf_counter() - start

    start = time.perf_counter()
    by_id = pool.by_id()
    sampled = [by_id[i] for i in selection.ids()]
    seen = sorted({r.group_id for r in sampled})
    try:
        regressor = fit(
            [r.features for r in sampled],
            [speaker_scores[r.group_id] for r in sampled],
            cfg.regressor
        )
        ordered = sorted(by_id)
        predictions = predict_many(regressor, [by_id[i].features for i in ordered])
    except DataError as e:
        raise StageError("loop.regress", str(e), variant=variant) from e
    timings.regress_s = time.perf_counter() - start

    logger.info(
        f"[{variant}] scored {len(ordered)} utterances "
        f"(train {timings.train_s:.2f}s, eval {timings.eval_s:.2f}s, "
        f"regress {timings.regress_s:.2f}s)"
    )
    table = QualityTable(
        variants=(variant,),
        scores={variant: {uid: float(s) for uid, s in zip(ordered, predictions)}},
        speaker_scores={variant: speaker_scores},
        seen_speakers={variant: tuple(seen)}
    )
    return LoopOutcome(
        table=table,
        timings=timings,
        regressor=regressor,
        seed=seed,
        sample_ids=selection.ids()
    )


def run_quality_loop(
    pool: Manifest,
    trainer: Trainer,
    evaluator: Evaluator,
    cfg: LoopConfig
) -> QualityTable:
    """Single-variant QualityTable for ``pool``."""
    return execute_quality_loop(pool, trainer, evaluator, cfg).table


def execute_variant_loops(
    pool_variants: Mapping[str, Manifest],
    trainer: Trainer,
    evaluator: Evaluator,
    cfg: LoopConfig,
    max_workers: Optional[int] = None
) -> Dict[str, LoopOutcome]:
    """Run one independent loop per variant.

    Loops run on a thread pool when ``cfg.concurrent`` is set; results are
    collected in registration order and equal a sequential run.

    Raises:
        DataError: Variants cover different utterance sets
        StageError: A loop failed
    """
    if not pool_variants:
        raise DataError("no variant manifests given")
    for key, manifest in pool_variants.items():
        if manifest.variant != key:
            raise DataError(f"manifest for {key!r} is tagged {manifest.variant!r}")
    check_same_ids(pool_variants)
    variants = variant_registry.sort(list(pool_variants))

    workers = min(max_workers or settings.max_workers, len(variants))
    if cfg.concurrent and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {
                v: executor.submit(
                    execute_quality_loop, pool_variants[v], trainer, evaluator, cfg
                )
                for v in variants
            }
            return {v: futures[v].result() for v in variants}
    return {
        v: execute_quality_loop(pool_variants[v], trainer, evaluator, cfg)
        for v in variants
    }


def run_variant_loops(
    pool_variants: Mapping[str, Manifest],
    trainer: Trainer,
    evaluator: Evaluator,
    cfg: LoopConfig,
    max_workers: Optional[int] = None
) -> QualityTable:
    """Merged QualityTable over every variant."""
    outcomes = execute_variant_loops(pool_variants, trainer, evaluator, cfg, max_workers)
    return QualityTable.merge([o.table for o in outcomes.values()])


# Computation time

_DURATION = re.compile(r"^(?:(\d+)h)?(?:(\d+)m)?(?:(\d+(?:\.\d+)?)s)?$")


def parse_duration(text: str) -> timedelta:
    """Parse ``"1h26m27s"``-style durations.

    Raises:
        ConfigError: Malformed duration
    """
    match = _DURATION.match(text.strip())
    if not text.strip() or match is None:
        raise ConfigError(f"invalid duration {text!r}; expected e.g. '1h26m27s'")
    hours, minutes, seconds = match.groups()
    return timedelta(
        hours=int(hours or 0), minutes=int(minutes or 0), seconds=float(seconds or 0)
    )


def format_duration(value: timedelta) -> str:
    """Render a duration as ``4h13m37s``, rounded to whole seconds."""
    total = int(round(value.total_seconds()))
    if total < 0:
        raise DataError("duration must be non-negative")
    hours, rest = divmod(total, 3600)
    minutes, seconds = divmod(rest, 60)
    if hours:
        return f"{hours}h{minutes}m{seconds}s"
    if minutes:
        return f"{minutes}m{seconds}s"
    return f"{seconds}s"


def cost_account(
    train_time: timedelta,
    eval_time: timedelta,
    regress_time: timedelta
) -> timedelta:
    """Total computation time of one loop plus the final retrain.

    Training happens twice (initial model and retrain), evaluation and
    regression once.

    Raises:
        DataError: Negative duration
    """
    for name, value in (("train", train_time), ("eval", eval_time), ("regress", regress_time)):
        if value < timedelta(0):
            raise DataError(f"{name} time must be non-negative")
    return 2 * train_time + eval_time + regress_time
