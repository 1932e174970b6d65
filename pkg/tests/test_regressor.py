"""Tests for training-data-quality regressors."""
import numpy as np
import pytest

from src.analysis.regressor import (
    dump_regressor,
    fit,
    load_regressor,
    predict,
    predict_many,
)
from src.models.configs import RegressorConfig
from src.utils.errors import DataError


def _planted(rng, n=60, dim=4):
    x = rng.normal(size=(n, dim))
    w = np.array([0.3, -0.2, 0.1, 0.05])[:dim]
    y = x @ w + 3.0
    return x, y, w


def test_ridge_without_penalty_recovers_planted_weights():
    """Test lambda=0 is ordinary least squares."""
    rng = np.random.default_rng(1)
    x, y, w = _planted(rng)

    r = fit(x, y, RegressorConfig(kind="ridge", lam=0.0))
    weights, intercept = r.coefficients()

    np.testing.assert_allclose(weights, w, atol=1e-6)
    assert intercept == pytest.approx(3.0, abs=1e-6)
    np.testing.assert_allclose(predict_many(r, x), y, atol=1e-6)


def test_ridge_penalty_shrinks_weights():
    """Test a large lambda pulls predictions towards the mean."""
    rng = np.random.default_rng(2)
    x, y, _ = _planted(rng)

    loose = fit(x, y, RegressorConfig(kind="ridge", lam=0.0))
    tight = fit(x, y, RegressorConfig(kind="ridge", lam=1e4))

    assert np.linalg.norm(tight.coefficients()[0]) < np.linalg.norm(loose.coefficients()[0])
    assert np.ptp(predict_many(tight, x)) < np.ptp(predict_many(loose, x))


@pytest.mark.parametrize("lam", [0.1, 1.0, 25.0])
def test_ridge_solution_zeroes_the_objective_gradient(lam):
    """Test the fitted weights are a stationary point of the penalized squared loss."""
    rng = np.random.default_rng(3)
    x = rng.normal(size=(80, 5))
    y = np.clip(3.0 + x @ rng.normal(0.0, 0.3, 5) + rng.normal(0.0, 0.2, 80), 1.0, 5.0)

    r = fit(x, y, RegressorConfig(kind="ridge", lam=lam))

    xs = (x - r.mean) / r.scale
    residual = y - xs @ r.weights - r.intercept
    grad_w = -2.0 * xs.T @ residual + 2.0 * lam * r.weights
    grad_b = -2.0 * residual.sum()
    assert np.max(np.abs(np.append(grad_w, grad_b))) <= 1e-8


def test_knn_k1_recalls_training_targets():
    """Test k=1 returns the target of each training point."""
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 5))
    y = rng.uniform(1.0, 5.0, size=30)

    r = fit(x, y, RegressorConfig(kind="knn", k=1))

    np.testing.assert_array_equal(predict_many(r, x), y)


def test_knn_averages_k_neighbours():
    """Test prediction is the mean target of the k nearest points."""
    x = [[0.0], [1.0], [2.0], [10.0]]
    y = [1.0, 2.0, 3.0, 5.0]

    r = fit(x, y, RegressorConfig(kind="knn", k=3, standardize=False))

    assert predict(r, [1.0]) == pytest.approx(2.0)
    assert predict(r, [11.0]) == pytest.approx((5.0 + 3.0 + 2.0) / 3)


def test_knn_ties_go_to_earlier_point():
    """Test equidistant neighbours resolve by insertion order."""
    r = fit([[0.0], [2.0]], [1.0, 5.0], RegressorConfig(kind="knn", k=1, standardize=False))

    assert predict(r, [1.0]) == 1.0


@pytest.mark.parametrize("kind", ["knn", "ridge"])
def test_affine_rescaling_invariance(kind):
    """Test standardized regressors ignore per-feature positive affine maps."""
    rng = np.random.default_rng(4)
    cfg = RegressorConfig(kind=kind, k=3, lam=0.5)
    for _ in range(100):
        n, dim = int(rng.integers(5, 20)), int(rng.integers(1, 5))
        x = rng.normal(size=(n, dim))
        y = rng.uniform(1.0, 5.0, size=n)
        query = rng.normal(size=(4, dim))
        scale = rng.uniform(0.1, 10.0, size=dim)
        shift = rng.normal(scale=5.0, size=dim)

        plain = predict_many(fit(x, y, cfg), query)
        moved = predict_many(fit(x * scale + shift, y, cfg), query * scale + shift)

        np.testing.assert_allclose(plain, moved, atol=1e-8)


def test_predictions_are_clamped():
    """Test extrapolation stays on the MOS scale."""
    r = fit([[0.0], [1.0], [2.0]], [3.0, 4.0, 5.0], RegressorConfig(kind="ridge", lam=0.0))

    assert predict(r, [10.0]) == 5.0
    assert predict(r, [-10.0]) == 1.0


def test_zero_variance_feature_keeps_unit_scale():
    """Test constant features do not divide by zero."""
    x = [[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]

    r = fit(x, [2.0, 3.0, 4.0], RegressorConfig(kind="ridge", lam=1.0))

    assert r.scale[0] == 1.0
    assert predict(r, [1.0, 1.0]) == pytest.approx(3.0)


def test_fit_rejects_bad_input():
    """Test size mismatches, too few pairs and out-of-range targets."""
    with pytest.raises(DataError):
        fit([[0.0], [1.0]], [3.0], RegressorConfig())
    with pytest.raises(DataError):
        fit([[0.0], [1.0]], [3.0, 4.0], RegressorConfig(kind="knn", k=3))
    with pytest.raises(DataError):
        fit([[0.0]], [3.0], RegressorConfig(kind="ridge"))
    with pytest.raises(DataError):
        fit([[0.0], [1.0]], [3.0, 6.0], RegressorConfig(kind="ridge"))
    with pytest.raises(DataError):
        fit([[0.0], [float("nan")]], [3.0, 4.0], RegressorConfig(kind="ridge"))


def test_predict_rejects_dimension_mismatch():
    """Test the query dimension must match the fitted one."""
    r = fit([[0.0, 1.0], [1.0, 0.0]], [2.0, 3.0], RegressorConfig(kind="ridge"))

    with pytest.raises(DataError):
        predict(r, [1.0])


def test_coefficients_only_for_ridge():
    """Test knn has no linear coefficients."""
    r = fit([[0.0], [1.0]], [2.0, 3.0], RegressorConfig(kind="knn", k=1))

    with pytest.raises(DataError):
        r.coefficients()


@pytest.mark.parametrize("kind", ["knn", "ridge"])
def test_dump_and_load_predict_identically(tmp_path, kind):
    """Test a reloaded regressor gives the same predictions."""
    rng = np.random.default_rng(5)
    x = rng.normal(size=(25, 3))
    y = rng.uniform(1.0, 5.0, size=25)
    r = fit(x, y, RegressorConfig(kind=kind, k=4, lam=0.3))
    path = tmp_path / f"{kind}.json"

    dump_regressor(r, path)
    loaded = load_regressor(path)

    assert loaded.kind == r.kind
    np.testing.assert_array_equal(predict_many(loaded, x), predict_many(r, x))


def test_load_regressor_rejects_garbage(tmp_path):
    """Test a dump missing fields is a data error."""
    path = tmp_path / "bad.json"
    path.write_text('{"kind": "ridge"}', encoding="utf-8")

    with pytest.raises(DataError):
        load_regressor(path)
