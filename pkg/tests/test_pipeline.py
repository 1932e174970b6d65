"""End-to-end tests of the resumable pipeline on a small simulated world."""
from unittest.mock import patch

import pytest

from src.analysis.pipeline import (
    PipelineRunner,
    apply_overrides,
    compare_methods,
    config_digest,
    load_adapter,
    load_pipeline_config,
    parse_method,
    run_pipeline,
    validate_config,
)
from src.config.settings import settings
from src.data_collection.artifacts import read_json, read_selection, write_json
from src.data_collection.manifest import load_manifest
from src.models.configs import PipelineConfig, SelectionConfig
from src.models.schemas import IDENTITY, SelectionMethod
from src.utils.errors import ConfigError, DataError, StageError

pytestmark = pytest.mark.integration


class TestConfigHandling:
    """Config loading, overrides and digests."""

    def test_parse_method_aliases(self):
        """Test dashed names map onto methods."""
        assert parse_method("ours-utt") == SelectionMethod.OURS_UTT
        assert parse_method("Acoustic") == SelectionMethod.ACOUSTIC_THETA
        assert parse_method("ours_spk") == SelectionMethod.OURS_SPK
        with pytest.raises(ConfigError):
            parse_method("random")

    def test_apply_overrides(self, pipeline_cfg, tmp_path):
        """Test overrides replace fields and are validated."""
        cfg = apply_overrides(
            pipeline_cfg, seed=3, method="ours-spk", n=40, fraction=0.5,
            output_dir=tmp_path / "elsewhere"
        )

        assert cfg.seed == 3
        assert cfg.selection.method == SelectionMethod.OURS_SPK
        assert cfg.selection.n == 40
        assert cfg.loop.sampling_fraction == 0.5
        assert cfg.output_dir == tmp_path / "elsewhere"
        with pytest.raises(ConfigError):
            apply_overrides(pipeline_cfg, fraction=1.5)

    def test_digest_ignores_output_dir(self, pipeline_cfg, tmp_path):
        """Test moving a run does not change its digest, reseeding does."""
        moved = apply_overrides(pipeline_cfg, output_dir=tmp_path / "other")

        assert config_digest(moved) == config_digest(pipeline_cfg)
        assert config_digest(apply_overrides(pipeline_cfg, seed=12)) != config_digest(
            pipeline_cfg
        )

    def test_load_pipeline_config(self, pipeline_cfg, tmp_path):
        """Test a dumped config reloads and bad documents are config errors."""
        path = tmp_path / "config.json"
        write_json(path, pipeline_cfg.model_dump(mode="json"))

        assert load_pipeline_config(path) == pipeline_cfg

        write_json(path, {"seed": 1})
        with pytest.raises(ConfigError, match="sim"):
            load_pipeline_config(path)
        with pytest.raises(ConfigError):
            load_pipeline_config(tmp_path / "missing.json")

    def test_config_registers_extra_variants(self, pipeline_cfg, isolated_registry):
        """Test extra variants are registered before the loop variants are checked."""
        data = pipeline_cfg.model_dump(mode="json")
        data["extra_variants"] = ["dereverb"]
        data["loop"]["variants"] = ["dereverb", "identity"]

        cfg = validate_config(PipelineConfig, data)

        assert cfg.loop.variants == ["identity", "dereverb"]
        assert isolated_registry.is_registered("dereverb")
        data["extra_variants"] = ["Not Valid"]
        with pytest.raises(ConfigError, match="invalid variant name"):
            validate_config(PipelineConfig, data)

    def test_load_adapter_rejects_unknown(self):
        """Test unimportable adapters are config errors."""
        with pytest.raises(ConfigError):
            load_adapter("no_such_module:Trainer")
        with pytest.raises(ConfigError):
            load_adapter("src.simulation.trainer:NoSuchClass")

    def test_output_dir_precedence(self, pipeline_cfg, tmp_path, monkeypatch):
        """Test explicit dir beats the environment, which beats the config."""
        assert PipelineRunner(pipeline_cfg).out == pipeline_cfg.output_dir

        monkeypatch.setattr(settings, "output_dir", tmp_path / "env")
        assert PipelineRunner(pipeline_cfg).out == tmp_path / "env"
        assert PipelineRunner(pipeline_cfg, tmp_path / "cli").out == tmp_path / "cli"


class TestRun:
    """Full runs."""

    def test_run_writes_every_artifact(self, pipeline_cfg):
        """Test a run leaves the documented files behind."""
        report = run_pipeline(pipeline_cfg)
        out = pipeline_cfg.output_dir

        for name in (
            "corpus/corpus.jsonl", "corpus/corpus.denoise.jsonl",
            "screened.jsonl", "screened.restore.jsonl", "prescreen.json",
            "quality.jsonl", "quality.speakers.jsonl", "loop.json", "timings.json",
            "reference.jsonl", "selection.jsonl", "retrained.speakers.jsonl",
            "report.json", "histogram.csv", "stages.json",
        ):
            assert (out / name).exists(), name
        assert report.method == SelectionMethod.OURS_UTT
        assert report.hq_overall.total == len(load_manifest(out / "screened.jsonl").group_ids())
        assert "training_quality_vs_latent" in report.correlations
        assert report.cost.variant_loops == 3
        assert set(report.pool_switch_shares) == {"identity", "denoise", "restore"}
        assert sum(report.pool_switch_shares.values()) == pytest.approx(1.0, rel=1e-5)
        cost = report.cost
        assert cost.total_s == pytest.approx(2 * cost.train_s + cost.eval_s + cost.regress_s)

    def test_runs_are_deterministic(self, pipeline_cfg, tmp_path):
        """Test two runs with one seed give byte-identical reports."""
        run_pipeline(pipeline_cfg, output_dir=tmp_path / "a")
        run_pipeline(pipeline_cfg, output_dir=tmp_path / "b")

        for name in ("report.json", "selection.jsonl", "quality.jsonl", "histogram.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unselected_uses_whole_screened_pool(self, pipeline_cfg):
        """Test the unselected corpus is every screened utterance."""
        cfg = pipeline_cfg.model_copy(update={
            "selection": SelectionConfig(
                method=SelectionMethod.UNSELECTED, variant_policy=IDENTITY
            )
        })

        report = run_pipeline(cfg)

        screened = load_manifest(cfg.output_dir / "screened.jsonl")
        assert report.n_selected == len(screened)
        assert report.variant_shares[IDENTITY] == 1.0
        assert report.hq_unseen.total == 0

    def test_ours_spk_keeps_whole_speakers(self, pipeline_cfg):
        """Test speaker-wise selection never splits a speaker."""
        cfg = apply_overrides(pipeline_cfg, method="ours-spk")

        run_pipeline(cfg)

        selection = read_selection(cfg.output_dir / "selection.jsonl")
        groups = load_manifest(cfg.output_dir / "screened.jsonl").groups()
        chosen = set(selection.ids())
        for records in groups.values():
            ids = {r.utterance_id for r in records}
            assert ids <= chosen or not ids & chosen


class TestResume:
    """Stage ledger and resumption."""

    def test_failure_reports_completed_artifacts(self, pipeline_cfg):
        """Test a failing stage names itself and what finished before it."""
        with patch.object(
            PipelineRunner, "_stage_retrain", side_effect=DataError("disk full")
        ):
            with pytest.raises(StageError) as exc:
                run_pipeline(pipeline_cfg)

        out = pipeline_cfg.output_dir
        assert exc.value.stage == "retrain"
        assert "disk full" in str(exc.value)
        assert out / "quality.jsonl" in exc.value.completed
        assert out / "selection.jsonl" in exc.value.completed
        assert not (out / "report.json").exists()

    def test_resumed_run_equals_uninterrupted_run(self, pipeline_cfg, tmp_path):
        """Test resuming after a failure gives the same report bytes."""
        interrupted = tmp_path / "interrupted"
        with patch.object(
            PipelineRunner, "_stage_report", side_effect=DataError("killed")
        ):
            with pytest.raises(StageError):
                run_pipeline(pipeline_cfg, output_dir=interrupted)

        with patch.object(
            PipelineRunner, "_stage_loop", side_effect=AssertionError("loop rerun")
        ):
            run_pipeline(pipeline_cfg, output_dir=interrupted, resume=True)
        run_pipeline(pipeline_cfg, output_dir=tmp_path / "straight")

        assert (interrupted / "report.json").read_bytes() == (
            tmp_path / "straight" / "report.json"
        ).read_bytes()

    def test_resume_reruns_stages_with_missing_artifacts(self, pipeline_cfg):
        """Test a deleted artifact makes its stage run again."""
        run_pipeline(pipeline_cfg)
        out = pipeline_cfg.output_dir
        before = (out / "report.json").read_bytes()
        (out / "reference.jsonl").unlink()

        run_pipeline(pipeline_cfg, resume=True)

        assert (out / "reference.jsonl").exists()
        assert (out / "report.json").read_bytes() == before
        assert read_json(out / "stages.json")["order"][3] == "reference"

    def test_resume_rejects_other_config(self, pipeline_cfg):
        """Test a directory cannot be resumed under a different config."""
        run_pipeline(pipeline_cfg)

        with pytest.raises(ConfigError, match="different configuration"):
            run_pipeline(apply_overrides(pipeline_cfg, seed=12), resume=True)

    def test_stage_ledger_contents(self, pipeline_cfg):
        """Test stages.json records each stage's relative artifacts."""
        run_pipeline(pipeline_cfg)

        ledger = read_json(pipeline_cfg.output_dir / "stages.json")

        assert ledger["config_digest"] == config_digest(pipeline_cfg)
        assert ledger["completed"]["reference"] == ["reference.jsonl"]
        assert ledger["order"] == [
            "corpus", "prescreen", "loop", "reference", "select", "retrain", "report"
        ]
        assert set(ledger["completed"]) == set(ledger["order"])


def test_compare_methods_shares_one_loop(pipeline_cfg):
    """Test each method gets its own directory and the loop runs once."""
    selections = [
        SelectionConfig(),
        SelectionConfig(method=SelectionMethod.OURS_SPK),
        SelectionConfig(method=SelectionMethod.ACOUSTIC_THETA, theta=3.0),
        SelectionConfig(method=SelectionMethod.UNSELECTED, variant_policy=IDENTITY),
    ]

    reports = compare_methods(pipeline_cfg, selections)

    out = pipeline_cfg.output_dir
    assert list(reports) == [
        "ours_utt-switch",
        "ours_spk-switch",
        "acoustic_theta-switch-theta3",
        "unselected-identity",
    ]
    for label in reports:
        assert (out / "methods" / label / "report.json").exists()
    ledger = read_json(out / "stages.json")["completed"]
    assert "loop" in ledger
    assert "report:ours_spk-switch" in ledger
    assert reports["unselected-identity"].n_selected > reports["ours_utt-switch"].n_selected
