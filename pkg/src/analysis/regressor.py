"""Utterance-level training-data-quality regressors.

Both kinds map an utterance's acoustic feature vector to the pseudo MOS of
the speaker it came from. Features are standardized with per-feature mean and
scale learned at fit time; zero-variance features keep a scale of 1.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.linear_model import Ridge
from sklearn.preprocessing import StandardScaler

from src.data_collection.artifacts import atomic_write_text, read_json
from src.models.configs import RegressorConfig, RegressorKind
from src.utils.errors import DataError

logger = logging.getLogger(__name__)

SCORE_MIN = 1.0
SCORE_MAX = 5.0
PREDICT_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class FittedRegressor:
    """Immutable fitted state; safe to share across threads.

    For knn ``train_x`` holds the standardized training features in insertion
    order; for ridge ``weights`` and ``intercept`` act on standardized inputs.
    """
    kind: RegressorKind
    k: int
    lam: float
    standardize: bool
    mean: np.ndarray
    scale: np.ndarray
    train_x: Optional[np.ndarray] = None
    train_y: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    intercept: float = 0.0

    @property
    def feature_dim(self) -> int:
        return int(self.mean.shape[0])

    def coefficients(self) -> Tuple[np.ndarray, float]:
        """Ridge weights and intercept in the original feature space."""
        if self.kind != RegressorKind.RIDGE or self.weights is None:
            raise DataError("coefficients are only defined for ridge regressors")
        weights = self.weights / self.scale
        intercept = self.intercept - float(np.dot(weights, self.mean))
        return weights, intercept


def _as_matrix(features: Sequence[Sequence[float]], what: str) -> np.ndarray:
    try:
        x = np.asarray(features, dtype=np.float64)
    except ValueError as e:
        raise DataError(f"{what} must be a rectangular matrix: {e}") from e
    if x.ndim != 2 or x.shape[1] == 0:
        raise DataError(f"{what} must be a non-empty list of vectors")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{what} contain non-finite values")
    return x


def fit(
    features: Sequence[Sequence[float]],
    targets: Sequence[float],
    cfg: RegressorConfig
) -> FittedRegressor:
    """Fit a regressor on (feature, speaker score) pairs.

    Args:
        features: One F-vector per training utterance
        targets: Pseudo MOS of each utterance's speaker, in [1, 5]
        cfg: Regressor hyper-parameters

    Returns:
        FittedRegressor

    Raises:
        DataError: Size mismatch, too few pairs, or non-finite input
    """
    x = _as_matrix(features, "features")
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DataError(f"{x.shape[0]} feature vectors but {y.size} targets")
    if not np.all(np.isfinite(y)):
        raise DataError("targets contain non-finite values")
    if np.any((y < SCORE_MIN) | (y > SCORE_MAX)):
        raise DataError("targets must lie in [1, 5]")
    minimum = max(cfg.k, 2) if cfg.kind == RegressorKind.KNN else 2
    if x.shape[0] < minimum:
        raise DataError(f"need at least {minimum} training pairs, got {x.shape[0]}")

    if cfg.standardize:
        scaler = StandardScaler().fit(x)
        mean = scaler.mean_.astype(np.float64)
        scale = scaler.scale_.astype(np.float64)
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    xs = (x - mean) / scale

    if cfg.kind == RegressorKind.KNN:
        fitted = FittedRegressor(
            kind=cfg.kind, k=cfg.k, lam=cfg.lam, standardize=cfg.standardize,
            mean=mean, scale=scale, train_x=xs, train_y=y.copy()
        )
    else:
        model = Ridge(alpha=cfg.lam, fit_intercept=True, solver="cholesky")
        model.fit(xs, y)
        fitted = FittedRegressor(
            kind=cfg.kind, k=cfg.k, lam=cfg.lam, standardize=cfg.standardize,
            mean=mean, scale=scale,
            weights=np.asarray(model.coef_, dtype=np.float64),
            intercept=float(model.intercept_)
        )
    logger.debug(f"Fitted {cfg.kind.value} regressor on {x.shape[0]} pairs")
    return fitted


def predict_many(r: FittedRegressor, features: Sequence[Sequence[float]]) -> np.ndarray:
    """Predict a batch of feature vectors, clamped to [1, 5].

    knn averages the targets of the k nearest standardized training points;
    equal distances go to the earlier inserted point.

    Raises:
        DataError: Dimension mismatch or non-finite input
    """
    x = _as_matrix(features, "features")
    if x.shape[1] != r.feature_dim:
        raise DataError(f"feature dimension {x.shape[1]} != fitted {r.feature_dim}")
    xs = (x - r.mean) / r.scale

    if r.kind == RegressorKind.RIDGE:
        out = xs @ r.weights + r.intercept
    else:
        out = np.empty(xs.shape[0])
        for start in range(0, xs.shape[0], PREDICT_CHUNK):
            block = xs[start:start + PREDICT_CHUNK]
            dist = cdist(block, r.train_x, metric="sqeuclidean")
            nearest = np.argsort(dist, axis=1, kind="stable")[:, :r.k]
            out[start:start + block.shape[0]] = r.train_y[nearest].mean(axis=1)
    return np.clip(out, SCORE_MIN, SCORE_MAX)


def predict(r: FittedRegressor, feature: Sequence[float]) -> float:
    """Predict one feature vector."""
    return float(predict_many(r, [feature])[0])


def _to_dict(r: FittedRegressor) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "kind": r.kind.value,
        "k": r.k,
        "lambda": r.lam,
        "standardize": r.standardize,
        "mean": r.mean.tolist(),
        "scale": r.scale.tolist(),
    }
    if r.kind == RegressorKind.KNN:
        data["train_x"] = r.train_x.tolist()
        data["train_y"] = r.train_y.tolist()
    else:
        data["weights"] = r.weights.tolist()
        data["intercept"] = r.intercept
    return data


def dump_regressor(r: FittedRegressor, path: Path) -> None:
    """Write the fitted state as JSON.

    Floats keep full precision so a reloaded regressor predicts identically.
    """
    atomic_write_text(Path(path), json.dumps(_to_dict(r), sort_keys=True, indent=1) + "\n")


def load_regressor(path: Path) -> FittedRegressor:
    data = read_json(path)
    try:
        kind = RegressorKind(data["kind"])
        common = dict(
            kind=kind,
            k=int(data["k"]),
            lam=float(data["lambda"]),
            standardize=bool(data["standardize"]),
            mean=np.asarray(data["mean"], dtype=np.float64),
            scale=np.asarray(data["scale"], dtype=np.float64),
        )
        if kind == RegressorKind.KNN:
            return FittedRegressor(
                **common,
                train_x=np.asarray(data["train_x"], dtype=np.float64),
                train_y=np.asarray(data["train_y"], dtype=np.float64),
            )
        return FittedRegressor(
            **common,
            weights=np.asarray(data["weights"], dtype=np.float64),
            intercept=float(data["intercept"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{path}: invalid regressor dump: {e}") from e
