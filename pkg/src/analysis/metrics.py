"""Evaluation metrics: high-quality speakers, speaker variation, correlations."""
import logging
import math
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from src.data_collection.artifacts import atomic_write_text
from src.models.schemas import (
    CorrelationBlock,
    CostAccount,
    HqCount,
    HqThreshold,
    Histogram,
    Manifest,
    Report,
    SelectionMethod,
    SpeakerScore,
)
from src.utils.errors import DataError
from src.utils.validators import require_same_dimension

logger = logging.getLogger(__name__)

# Two-sided standard normal critical values.
Z_CRITICAL: Dict[float, float] = {
    0.90: 1.644854,
    0.95: 1.959964,
    0.99: 2.575829,
}


def hq_threshold(reference_scores: Mapping[str, float]) -> HqThreshold:
    """Lowest speaker score of the reference-corpus model.

    Raises:
        DataError: No reference scores
    """
    if not reference_scores:
        raise DataError("reference scores are empty")
    return HqThreshold(value=min(reference_scores.values()))


def format_percent(count: int, total: int) -> str:
    """``count / total`` as a one-decimal percentage, half-up rounded."""
    if total == 0:
        return "0.0%"
    ratio = Decimal(count * 100) / Decimal(total)
    return f"{ratio.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP)}%"


def count_hq(scores: Mapping[str, float], t: HqThreshold) -> HqCount:
    """Number of speakers scoring strictly higher than the threshold."""
    count = sum(1 for s in scores.values() if s > t.value)
    total = len(scores)
    return HqCount(
        count=count,
        total=total,
        fraction=f"{count}/{total}",
        percent=format_percent(count, total)
    )


def mst_cost(points: Sequence[Sequence[float]]) -> float:
    """Total edge length of the Euclidean minimum spanning tree.

    Dense Prim over the complete graph.

    Raises:
        DataError: Fewer than 2 points or mismatched dimensions
    """
    if len(points) < 2:
        raise DataError("minimum spanning tree needs at least 2 points")
    require_same_dimension(points, "point")
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]

    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = np.sqrt(np.sum((x - x[0]) ** 2, axis=1))
    total = 0.0
    for _ in range(n - 1):
        candidates = np.where(in_tree, np.inf, best)
        j = int(np.argmin(candidates))
        total += float(best[j])
        in_tree[j] = True
        best = np.minimum(best, np.sqrt(np.sum((x - x[j]) ** 2, axis=1)))
    return total


def cumulative_histogram(scores: Iterable[float], grid: Sequence[float]) -> List[int]:
    """count[i] = number of scores strictly greater than grid[i].

    Raises:
        DataError: Grid not strictly ascending
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.size and np.any(np.diff(g) <= 0):
        raise DataError("histogram grid must be strictly ascending")
    s = np.sort(np.asarray(list(scores), dtype=np.float64))
    return [int(c) for c in s.size - np.searchsorted(s, g, side="right")]


def histogram_frame(scores: Iterable[float], grid: Sequence[float]) -> pd.DataFrame:
    """Plot-ready cumulative histogram with ``threshold`` and ``count`` columns."""
    return pd.DataFrame({
        "threshold": list(grid),
        "count": cumulative_histogram(scores, grid),
    })


def write_histogram_csv(frame: pd.DataFrame, path: Path) -> None:
    text = frame.to_csv(index=False, float_format="%.6g", lineterminator="\n")
    atomic_write_text(Path(path), text)


def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation.

    Raises:
        DataError: Length mismatch, fewer than 3 pairs, or zero variance
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("pearson_r needs two equal-length sequences")
    if a.size < 3:
        raise DataError("pearson_r needs at least 3 pairs")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DataError("pearson_r is undefined for zero variance")
    r = float(pearsonr(a, b)[0])
    return min(1.0, max(-1.0, r))


def fisher_ci(r: float, n: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Confidence interval for a correlation via the Fisher transformation.

    Raises:
        DataError: |r| >= 1, n < 4, or an unsupported confidence level
    """
    if not abs(r) < 1.0:
        raise DataError(f"fisher_ci needs |r| < 1, got {r}")
    if n < 4:
        raise DataError(f"fisher_ci needs n >= 4, got {n}")
    z_crit = Z_CRITICAL.get(round(confidence, 2))
    if z_crit is None:
        raise DataError(
            f"unsupported confidence {confidence}; use one of {sorted(Z_CRITICAL)}"
        )
    z = math.atanh(r)
    half_width = z_crit / math.sqrt(n - 3)
    return math.tanh(z - half_width), math.tanh(z + half_width)


def correlation_block(
    x: Sequence[float],
    y: Sequence[float],
    confidence: float = 0.95
) -> CorrelationBlock:
    """Pearson r with its Fisher interval; the interval is omitted when undefined."""
    r = pearson_r(x, y)
    n = len(x)
    if n >= 4 and abs(r) < 1.0:
        low, high = fisher_ci(r, n, confidence)
        return CorrelationBlock(r=r, n=n, confidence=confidence, ci_low=low, ci_high=high)
    return CorrelationBlock(r=r, n=n, confidence=confidence)


def speaker_centroids(m: Manifest) -> Dict[str, np.ndarray]:
    """Speaker embedding of every group: the centroid of its utterances."""
    return {
        g: np.mean(np.array([r.embedding for r in records]), axis=0)
        for g, records in m.groups().items()
    }


def speaker_variation(
    scores: Mapping[str, float],
    t: HqThreshold,
    centroids: Mapping[str, np.ndarray]
) -> float:
    """MST cost over high-quality speakers' centroids; 0 below two speakers."""
    hq = sorted(g for g, s in scores.items() if s > t.value)
    if len(hq) < 2:
        return 0.0
    missing = [g for g in hq if g not in centroids]
    if missing:
        raise DataError(f"no embedding for speakers {missing[:3]}")
    return mst_cost([centroids[g] for g in hq])


def build_report(
    method: SelectionMethod,
    variant_policy: str,
    n_selected: int,
    speaker_scores: Mapping[str, float],
    seen: Iterable[str],
    threshold: HqThreshold,
    centroids: Optional[Mapping[str, np.ndarray]],
    grid: Sequence[float],
    variant_shares: Optional[Mapping[str, float]] = None,
    pool_switch_shares: Optional[Mapping[str, float]] = None,
    correlations: Optional[Mapping[str, CorrelationBlock]] = None,
    cost: Optional[CostAccount] = None
) -> Report:
    """Assemble the evaluation report of one retrained model.

    Without ``centroids`` the speaker variation is reported as 0. ``variant_shares``
    describe the selected corpus, ``pool_switch_shares`` the switching choice
    over the whole screened pool.

    Raises:
        DataError: No speaker scores
    """
    if not speaker_scores:
        raise DataError("no speaker scores to report")
    seen = set(seen)
    ordered = sorted(speaker_scores)
    seen_scores = {g: speaker_scores[g] for g in ordered if g in seen}
    unseen_scores = {g: speaker_scores[g] for g in ordered if g not in seen}
    overall = count_hq(speaker_scores, threshold)
    logger.info(
        f"{method.value}-{variant_policy}: {overall.count}/{overall.total} "
        f"high-quality speakers ({overall.percent})"
    )
    return Report(
        method=method,
        variant_policy=variant_policy,
        n_selected=n_selected,
        speakers=[
            SpeakerScore(group_id=g, pseudo_mos=speaker_scores[g], seen=g in seen)
            for g in ordered
        ],
        mean_pseudo_mos=math.fsum(speaker_scores.values()) / len(speaker_scores),
        threshold=threshold,
        hq_overall=overall,
        hq_seen=count_hq(seen_scores, threshold),
        hq_unseen=count_hq(unseen_scores, threshold),
        mst_cost=(
            speaker_variation(speaker_scores, threshold, centroids)
            if centroids is not None else 0.0
        ),
        histogram=Histogram(
            grid=list(grid),
            counts=cumulative_histogram(speaker_scores.values(), grid)
        ),
        variant_shares=dict(variant_shares or {}),
        pool_switch_shares=dict(pool_switch_shares or {}),
        correlations=dict(correlations or {}),
        cost=cost
    )
