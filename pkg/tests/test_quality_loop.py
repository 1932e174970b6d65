"""Tests for the evaluation-in-the-loop engine."""
import logging
import math
from datetime import timedelta
from unittest.mock import MagicMock

import pytest

from src.analysis.quality_loop import (
    Evaluator,
    cost_account,
    execute_quality_loop,
    execute_variant_loops,
    format_duration,
    parse_duration,
    run_quality_loop,
    run_variant_loops,
)
from src.analysis.regressor import fit, predict
from src.analysis.selection import unselected_selection
from src.models.configs import RegressorConfig, TrainerParams
from src.models.schemas import IDENTITY, Manifest, QualityTable
from src.simulation.rng import derive_seed
from src.simulation.trainer import SimEvaluator, SimTrainer, sim_train
from src.utils.errors import ConfigError, DataError, StageError
from tests.conftest import make_record


class ConstantEvaluator(Evaluator):
    """Returns the same score for every speaker."""

    def __init__(self, score: float):
        self.score = score

    def eval_speaker(self, model, speaker, seed):
        return self.score


def test_run_quality_loop_scores_every_utterance(small_sim, small_corpora, loop_cfg):
    """Test one loop scores all candidates and every speaker on the MOS scale."""
    pool = small_corpora[IDENTITY]

    table = run_quality_loop(pool, SimTrainer(small_sim), SimEvaluator(small_sim), loop_cfg)

    assert table.variants == (IDENTITY,)
    assert table.utterance_ids() == sorted(pool.ids())
    assert all(1.0 <= s <= 5.0 for s in table.scores[IDENTITY].values())
    assert set(table.speaker_scores[IDENTITY]) == set(pool.group_ids())
    assert set(table.seen_speakers[IDENTITY]) == set(pool.group_ids())


def test_quality_loop_is_deterministic(small_sim, small_corpora, loop_cfg):
    """Test equal inputs and seed give an equal table."""
    pool = small_corpora["denoise"]
    trainer, evaluator = SimTrainer(small_sim), SimEvaluator(small_sim)

    first = run_quality_loop(pool, trainer, evaluator, loop_cfg)
    second = run_quality_loop(pool, trainer, evaluator, loop_cfg)

    assert first == second


def test_sampling_fraction_trains_on_a_seeded_subset(small_sim, small_corpora, loop_cfg):
    """Test the initial model sees ceil(fraction * n) utterances."""
    pool = small_corpora[IDENTITY]
    cfg = loop_cfg.model_copy(update={"sampling_fraction": 0.3})
    trainer, evaluator = SimTrainer(small_sim), SimEvaluator(small_sim)

    outcome = execute_quality_loop(pool, trainer, evaluator, cfg)
    again = execute_quality_loop(pool, trainer, evaluator, cfg)

    assert len(outcome.sample_ids) == math.ceil(0.3 * len(pool))
    assert outcome.sample_ids == sorted(outcome.sample_ids)
    assert outcome.sample_ids == again.sample_ids
    assert len(outcome.table.scores[IDENTITY]) == len(pool)


def test_noiseless_loop_recovers_speaker_quality(small_sim, small_corpora, loop_cfg):
    """Test k=1 on the full pool returns each utterance's speaker quality exactly."""
    sim = small_sim.model_copy(update={
        "trainer_params": TrainerParams(sigma_train=0.0, sigma_eval=0.0)
    })
    cfg = loop_cfg.model_copy(update={"regressor": RegressorConfig(k=1)})
    pool = small_corpora[IDENTITY]

    table = run_quality_loop(pool, SimTrainer(sim), SimEvaluator(sim), cfg)

    model = sim_train(unselected_selection(pool.ids()), pool, sim, seed=0)
    assert table.speaker_scores[IDENTITY] == dict(model.speaker_quality)
    for record in pool.records:
        assert table.score(record.utterance_id, IDENTITY) == pytest.approx(
            model.speaker_quality[record.group_id], abs=1e-12
        )


def test_unsampled_scores_come_from_the_sample_regressor(small_sim, small_corpora, loop_cfg):
    """Test unsampled utterances are scored by a regressor fit on the sample alone."""
    pool = small_corpora["denoise"]
    cfg = loop_cfg.model_copy(update={"sampling_fraction": 0.3})

    outcome = execute_quality_loop(pool, SimTrainer(small_sim), SimEvaluator(small_sim), cfg)

    by_id = pool.by_id()
    speaker_scores = outcome.table.speaker_scores["denoise"]
    refit = fit(
        [by_id[u].features for u in outcome.sample_ids],
        [speaker_scores[by_id[u].group_id] for u in outcome.sample_ids],
        cfg.regressor
    )
    unsampled = sorted(set(pool.ids()) - set(outcome.sample_ids))
    assert unsampled
    for u in unsampled:
        assert outcome.table.score(u, "denoise") == pytest.approx(
            predict(refit, by_id[u].features), abs=1e-12
        )


def test_variant_seed_isolation(small_sim, small_corpora, loop_cfg):
    """Test reseeding one variant's loop leaves the other variants' scores alone."""
    trainer, evaluator = SimTrainer(small_sim), SimEvaluator(small_sim)
    reseeded = loop_cfg.model_copy(update={"seed": loop_cfg.seed + 1})

    baseline = run_variant_loops(small_corpora, trainer, evaluator, loop_cfg)
    others = {v: m for v, m in small_corpora.items() if v != "restore"}
    mixed = QualityTable.merge([
        run_variant_loops(others, trainer, evaluator, loop_cfg),
        run_quality_loop(small_corpora["restore"], trainer, evaluator, reseeded),
    ])

    assert len({derive_seed(loop_cfg.seed, v) for v in small_corpora}) == 3
    assert mixed.scores["restore"] != baseline.scores["restore"]
    for v in ("identity", "denoise"):
        assert mixed.scores[v] == baseline.scores[v]
        assert mixed.speaker_scores[v] == baseline.speaker_scores[v]


def test_variant_loops_match_single_runs(small_sim, small_corpora, loop_cfg):
    """Test each variant scores the same alone as beside others."""
    trainer, evaluator = SimTrainer(small_sim), SimEvaluator(small_sim)

    merged = run_variant_loops(small_corpora, trainer, evaluator, loop_cfg)
    alone = run_quality_loop(small_corpora["restore"], trainer, evaluator, loop_cfg)

    assert merged.variants == ("identity", "denoise", "restore")
    assert merged.scores["restore"] == alone.scores["restore"]
    assert merged.speaker_scores["restore"] == alone.speaker_scores["restore"]


def test_concurrent_loops_equal_sequential(small_sim, small_corpora, loop_cfg):
    """Test the thread pool gives the same table as a sequential run."""
    trainer, evaluator = SimTrainer(small_sim), SimEvaluator(small_sim)
    concurrent = loop_cfg.model_copy(update={"concurrent": True})

    sequential_table = run_variant_loops(small_corpora, trainer, evaluator, loop_cfg)
    concurrent_table = run_variant_loops(
        small_corpora, trainer, evaluator, concurrent, max_workers=3
    )

    assert concurrent_table == sequential_table


def test_variant_loops_reject_mismatched_pools(small_corpora, loop_cfg):
    """Test every variant must cover the same utterances."""
    pools = dict(small_corpora)
    pools["denoise"] = pools["denoise"].with_records(pools["denoise"].records[:-1])

    with pytest.raises(DataError):
        execute_variant_loops(pools, MagicMock(), MagicMock(), loop_cfg)


def test_variant_loops_reject_mislabelled_manifest(small_corpora, loop_cfg):
    """Test the mapping key must match the manifest's variant."""
    pools = {"denoise": small_corpora[IDENTITY]}

    with pytest.raises(DataError):
        execute_variant_loops(pools, MagicMock(), MagicMock(), loop_cfg)


def test_trainer_failure_is_a_stage_error(small_corpora, loop_cfg):
    """Test trainer exceptions name the stage and the variant."""
    trainer = MagicMock()
    trainer.train.side_effect = RuntimeError("out of memory")

    with pytest.raises(StageError) as exc:
        run_quality_loop(small_corpora["restore"], trainer, MagicMock(), loop_cfg)

    assert exc.value.stage == "loop.train"
    assert exc.value.variant == "restore"
    assert "out of memory" in str(exc.value)


def test_evaluator_failure_is_a_stage_error(small_sim, small_corpora, loop_cfg):
    """Test evaluator exceptions abort the loop."""
    evaluator = MagicMock()
    evaluator.eval_speaker.side_effect = ValueError("no audio")

    with pytest.raises(StageError) as exc:
        run_quality_loop(small_corpora[IDENTITY], SimTrainer(small_sim), evaluator, loop_cfg)

    assert exc.value.stage == "loop.evaluate"


def test_non_finite_score_is_a_stage_error(small_sim, small_corpora, loop_cfg):
    """Test NaN scores are never clamped into the table."""
    with pytest.raises(StageError, match="non-finite"):
        run_quality_loop(
            small_corpora[IDENTITY], SimTrainer(small_sim), ConstantEvaluator(math.nan), loop_cfg
        )


def test_out_of_range_score_is_clamped(small_sim, small_corpora, loop_cfg, caplog):
    """Test scores above 5 are clamped with a warning."""
    with caplog.at_level(logging.WARNING):
        table = run_quality_loop(
            small_corpora[IDENTITY], SimTrainer(small_sim), ConstantEvaluator(6.5), loop_cfg
        )

    assert set(table.speaker_scores[IDENTITY].values()) == {5.0}
    assert all(s == 5.0 for s in table.scores[IDENTITY].values())
    assert "clamped" in caplog.text


def test_regressor_needs_enough_pairs(small_sim, loop_cfg):
    """Test a sample smaller than k fails in the regression stage."""
    pool = Manifest(records=(
        make_record("a", "g1", embedding=(0.0, 0.0), latent=None),
        make_record("b", "g2", embedding=(1.0, 1.0), latent=None),
    ))
    trainer = MagicMock()

    with pytest.raises(StageError) as exc:
        run_quality_loop(pool, trainer, ConstantEvaluator(3.0), loop_cfg)

    assert exc.value.stage == "loop.regress"


class TestDurations:
    """Computation-time accounting."""

    def test_parse_duration(self):
        """Test h/m/s components parse into a timedelta."""
        assert parse_duration("1h26m27s") == timedelta(hours=1, minutes=26, seconds=27)
        assert parse_duration("9m7s") == timedelta(minutes=9, seconds=7)
        assert parse_duration("45s") == timedelta(seconds=45)

    @pytest.mark.parametrize("text", ["", "1d", "h5", "5 minutes"])
    def test_parse_duration_rejects_garbage(self, text):
        """Test malformed durations are config errors."""
        with pytest.raises(ConfigError):
            parse_duration(text)

    def test_format_duration(self):
        """Test rendering drops leading zero components."""
        assert format_duration(timedelta(hours=4, minutes=13, seconds=37)) == "4h13m37s"
        assert format_duration(timedelta(minutes=9, seconds=7)) == "9m7s"
        assert format_duration(timedelta(0)) == "0s"
        assert format_duration(timedelta(hours=2, seconds=5)) == "2h0m5s"

    @pytest.mark.parametrize(("train", "evaluate", "regress", "total"), [
        ("1h26m27s", "1h11m36s", "9m7s", "4h13m37s"),
        ("5h9m33s", "2h1m14s", "9m7s", "12h29m27s"),
    ])
    def test_cost_account(self, train, evaluate, regress, total):
        """Test total = 2 x training + evaluation + regression."""
        result = cost_account(
            parse_duration(train), parse_duration(evaluate), parse_duration(regress)
        )

        assert format_duration(result) == total

    def test_cost_account_rejects_negative(self):
        """Test negative durations are data errors."""
        with pytest.raises(DataError):
            cost_account(timedelta(seconds=-1), timedelta(0), timedelta(0))
