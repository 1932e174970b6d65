"""End-to-end pipeline with on-disk stage artifacts and resumable runs.

Stages run in order and every stage reads its inputs from files written by
earlier stages, so an interrupted run resumed with ``resume=True`` produces
the same artifacts as an uninterrupted one. ``stages.json`` records which
stages completed for which configuration.
"""
import hashlib
import importlib
import json
import logging
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

from src.analysis.metrics import (
    build_report,
    correlation_block,
    histogram_frame,
    hq_threshold,
    speaker_centroids,
    write_histogram_csv,
)
from src.analysis.quality_loop import (
    Evaluator,
    Trainer,
    cost_account,
    evaluate_speakers,
    execute_variant_loops,
    format_duration,
)
from src.analysis.selection import (
    build_selection,
    switch_variants,
    uniform_variant,
    unselected_selection,
    variant_shares,
)
from src.config.settings import settings
from src.data_collection.artifacts import (
    canonical,
    read_json,
    read_quality_table,
    read_report,
    read_selection,
    read_speaker_scores,
    write_json,
    write_quality_table,
    write_report,
    write_selection,
    write_speaker_scores,
)
from src.data_collection.manifest import (
    load_manifest,
    load_variant_manifests,
    write_variant_manifests,
)
from src.data_collection.prescreen import apply_to_variants, prescreen
from src.models.configs import LoopConfig, PipelineConfig, SelectionConfig, SimConfig
from src.models.schemas import (
    IDENTITY,
    CostAccount,
    Manifest,
    QualityTable,
    Report,
    SelectionMethod,
    SpeakerScore,
    variant_registry,
)
from src.simulation.corpus import generate_variant_corpora, record_quality, reference_corpus
from src.simulation.rng import derive_seed
from src.simulation.trainer import SimEvaluator, SimTrainer, sim_cost
from src.utils.errors import ConfigError, DataError, StageError, TTSOpsError

logger = logging.getLogger(__name__)

SHARED_STAGES = ("corpus", "prescreen", "loop", "reference")

METHOD_ALIASES = {
    "unselected": SelectionMethod.UNSELECTED,
    "acoustic": SelectionMethod.ACOUSTIC_THETA,
    "acoustic-theta": SelectionMethod.ACOUSTIC_THETA,
    "ours-utt": SelectionMethod.OURS_UTT,
    "ours-spk": SelectionMethod.OURS_SPK,
}


def parse_method(name: str) -> SelectionMethod:
    """Accept ``ours-utt`` style names as well as the enum values."""
    key = name.strip().lower()
    if key in METHOD_ALIASES:
        return METHOD_ALIASES[key]
    try:
        return SelectionMethod(key.replace("-", "_"))
    except ValueError as e:
        raise ConfigError(
            f"unknown method {name!r}; choose from {sorted(METHOD_ALIASES)}"
        ) from e


def load_pipeline_config(path: Path) -> PipelineConfig:
    """Read and validate a pipeline config document.

    Raises:
        ConfigError: Unreadable file or invalid configuration
    """
    try:
        data = read_json(path)
    except DataError as e:
        raise ConfigError(str(e)) from e
    return validate_config(PipelineConfig, data)


def validate_config(model: Any, data: Dict[str, Any]) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "config"
        raise ConfigError(f"invalid config at {where}: {first.get('msg')}") from e
    except DataError as e:
        raise ConfigError(f"invalid config: {e}") from e


def apply_overrides(
    cfg: PipelineConfig,
    seed: Optional[int] = None,
    method: Optional[str] = None,
    n: Optional[int] = None,
    fraction: Optional[float] = None,
    output_dir: Optional[Path] = None
) -> PipelineConfig:
    """Return ``cfg`` with command-line overrides applied and re-validated."""
    data = cfg.model_dump()
    if seed is not None:
        data["seed"] = seed
    if method is not None:
        data["selection"]["method"] = parse_method(method)
    if n is not None:
        data["selection"]["n"] = n
    if fraction is not None:
        data["loop"]["sampling_fraction"] = fraction
    if output_dir is not None:
        data["output_dir"] = Path(output_dir)
    return validate_config(PipelineConfig, data)


def config_digest(cfg: PipelineConfig) -> str:
    """Digest of everything that influences artifacts (not the output dir)."""
    data = cfg.model_dump(mode="json", exclude={"output_dir"})
    text = json.dumps(canonical(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_adapter(path: str) -> Any:
    """Instantiate a ``module:Class`` adapter.

    Raises:
        ConfigError: Module or class cannot be loaded
    """
    module_name, _, attr = path.partition(":")
    try:
        module = importlib.import_module(module_name)
        cls = getattr(module, attr)
    except (ImportError, AttributeError) as e:
        raise ConfigError(f"cannot load adapter {path!r}: {e}") from e
    return cls()


class StageLedger:
    """Completed stages of a run directory, persisted as ``stages.json``."""

    def __init__(self, path: Path, digest: str):
        self.path = path
        self.digest = digest
        self.completed: Dict[str, List[str]] = {}

    def load(self) -> None:
        """Adopt the completed stages of a previous run of the same config.

        Raises:
            ConfigError: The directory holds a run of a different config
        """
        if not self.path.exists():
            return
        data = read_json(self.path)
        if data.get("config_digest") != self.digest:
            raise ConfigError(
                f"{self.path.parent} holds a run of a different configuration; "
                "rerun without --resume or choose another output dir"
            )
        completed = {k: list(v) for k, v in data.get("completed", {}).items()}
        # JSON keys are written sorted; "order" keeps execution order
        order = [s for s in data.get("order", []) if s in completed]
        order += sorted(s for s in completed if s not in order)
        self.completed = {s: completed[s] for s in order}

    def is_done(self, stage: str) -> bool:
        paths = self.completed.get(stage)
        return paths is not None and all((self.path.parent / p).exists() for p in paths)

    def order(self) -> List[str]:
        return list(self.completed)

    def mark(self, stage: str, artifacts: Sequence[Path]) -> None:
        root = self.path.parent
        self.completed[stage] = [str(Path(p).relative_to(root)) for p in artifacts]
        write_json(self.path, {
            "config_digest": self.digest,
            "completed": self.completed,
            "order": self.order(),
        })

    def artifacts(self) -> List[Path]:
        root = self.path.parent
        return [root / p for paths in self.completed.values() for p in paths]


@dataclass(frozen=True)
class MethodPaths:
    """Artifacts of one selection method's select/retrain/report stages."""
    selection: Path
    retrained: Path
    report: Path
    histogram: Path

    @classmethod
    def under(cls, root: Path) -> "MethodPaths":
        return cls(
            selection=root / "selection.jsonl",
            retrained=root / "retrained.speakers.jsonl",
            report=root / "report.json",
            histogram=root / "histogram.csv",
        )


class PipelineRunner:
    """Runs prescreen, variant loops, selection, retraining and reporting."""

    def __init__(
        self,
        cfg: PipelineConfig,
        output_dir: Optional[Path] = None,
        max_workers: Optional[int] = None
    ):
        """Initialize the runner.

        Args:
            cfg: Validated pipeline configuration
            output_dir: Overrides both the environment and the config
            max_workers: Thread pool size for the variant loops
        """
        self.cfg = cfg
        self.out = Path(output_dir or settings.output_dir or cfg.output_dir)
        self.max_workers = max_workers
        self.ledger = StageLedger(self.out / "stages.json", config_digest(cfg))
        # One seed drives the whole run: corpus, loops, reference and retrain.
        self.sim: Optional[SimConfig] = (
            cfg.sim.model_copy(update={"rng_seed": cfg.seed}) if cfg.sim else None
        )
        self.loop_cfg: LoopConfig = cfg.loop.model_copy(update={"seed": cfg.seed})
        self._trainer: Optional[Trainer] = None
        self._evaluator: Optional[Evaluator] = None

    # Paths

    @property
    def pool_path(self) -> Path:
        if self.cfg.real is not None:
            return Path(self.cfg.real.pool)
        return self.out / "corpus" / "corpus.jsonl"

    @property
    def screened_path(self) -> Path:
        return self.out / "screened.jsonl"

    @property
    def quality_path(self) -> Path:
        return self.out / "quality.jsonl"

    @property
    def reference_path(self) -> Path:
        return self.out / "reference.jsonl"

    @property
    def variants(self) -> List[str]:
        return list(self.cfg.loop.variants)

    # Adapters

    @property
    def trainer(self) -> Trainer:
        if self._trainer is None:
            if self.sim is not None:
                self._trainer = SimTrainer(self.sim)
            else:
                self._trainer = load_adapter(self.cfg.real.trainer)
        return self._trainer

    @property
    def evaluator(self) -> Evaluator:
        if self._evaluator is None:
            if self.sim is not None:
                self._evaluator = SimEvaluator(self.sim)
            else:
                self._evaluator = load_adapter(self.cfg.real.evaluator)
        return self._evaluator

    # Driving

    def run(self, resume: bool = False) -> Report:
        """Run every stage for the configured selection method."""
        self._start(resume)
        self._run_shared()
        return self._run_method(self.cfg.selection, MethodPaths.under(self.out), "")

    def compare(
        self,
        selections: Sequence[SelectionConfig],
        resume: bool = False
    ) -> Dict[str, Report]:
        """Run the shared stages once, then one select/retrain/report per method.

        Method artifacts go to ``methods/<label>/``.
        """
        self._start(resume)
        self._run_shared()
        reports = {}
        for sel in selections:
            label = sel.label if sel.theta is None else f"{sel.label}-theta{sel.theta:g}"
            paths = MethodPaths.under(self.out / "methods" / label)
            reports[label] = self._run_method(sel, paths, f":{label}")
        return reports

    def _start(self, resume: bool) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        if resume:
            self.ledger.load()
            logger.info(f"Resuming run in {self.out} ({len(self.ledger.completed)} stages done)")
        else:
            self.ledger.completed = {}

    def _run_shared(self) -> None:
        steps: Dict[str, Callable[[], List[Path]]] = {
            "corpus": self._stage_corpus,
            "prescreen": self._stage_prescreen,
            "loop": self._stage_loop,
            "reference": self._stage_reference,
        }
        for name in SHARED_STAGES:
            self._execute(name, steps[name])

    def _run_method(self, sel: SelectionConfig, paths: MethodPaths, suffix: str) -> Report:
        self._execute(f"select{suffix}", lambda: self._stage_select(sel, paths))
        self._execute(f"retrain{suffix}", lambda: self._stage_retrain(paths))
        self._execute(f"report{suffix}", lambda: self._stage_report(sel, paths))
        return read_report(paths.report)

    def _execute(self, stage: str, step: Callable[[], List[Path]]) -> None:
        if self.ledger.is_done(stage):
            logger.info(f"Stage {stage}: already complete, skipping")
            return
        logger.info(f"Stage {stage}: starting")
        try:
            artifacts = step()
        except ConfigError:
            raise
        except StageError as e:
            raise StageError(
                stage, str(e), variant=e.variant, completed=self.ledger.artifacts()
            ) from e
        except (TTSOpsError, OSError, ValueError) as e:
            raise StageError(stage, str(e), completed=self.ledger.artifacts()) from e
        self.ledger.mark(stage, artifacts)
        logger.info(f"Stage {stage}: done ({len(artifacts)} artifacts)")

    # Stages

    def _stage_corpus(self) -> List[Path]:
        if self.sim is None:
            load_variant_manifests(self.pool_path, self.variants)
            return []
        corpora = generate_variant_corpora(self.sim, self.variants)
        return write_variant_manifests(corpora, self.pool_path)

    def _stage_prescreen(self) -> List[Path]:
        base = load_manifest(self.pool_path, variant=IDENTITY)
        screened, summary = prescreen(base, self.cfg.prescreen)
        variants = load_variant_manifests(self.pool_path, self.variants)
        variants[IDENTITY] = variants.get(IDENTITY, base)
        restricted = apply_to_variants(screened, variants)
        paths = write_variant_manifests(
            restricted, self.screened_path, real_mode=self.sim is None
        )
        summary_path = self.out / "prescreen.json"
        write_json(summary_path, {
            "candidates": summary.candidates,
            "after_compactness": summary.after_compactness,
            "after_ctc": summary.after_ctc,
            "dropped_groups": summary.dropped_groups,
        })
        logger.info(
            f"Pre-screening kept {summary.after_ctc}/{summary.candidates} utterances, "
            f"dropped {len(summary.dropped_groups)} groups"
        )
        return paths + [summary_path]

    def _screened(self) -> Dict[str, Manifest]:
        variants = variant_registry.sort(list(self.variants) + [IDENTITY])
        return load_variant_manifests(self.screened_path, variants)

    def _stage_loop(self) -> List[Path]:
        pools = load_variant_manifests(self.screened_path, self.variants)
        outcomes = execute_variant_loops(
            pools, self.trainer, self.evaluator, self.loop_cfg, self.max_workers
        )
        table = QualityTable.merge([o.table for o in outcomes.values()])
        speakers_path = write_quality_table(table, self.quality_path)

        first = next(iter(outcomes.values()))
        lookup = pools[first.timings.variant].by_id()
        loop_path = self.out / "loop.json"
        write_json(loop_path, {
            "variants": list(outcomes),
            "sampling_fraction": self.cfg.loop.sampling_fraction,
            "training_audio_s": sum(lookup[i].duration_s for i in first.sample_ids),
            "n_speakers": len(pools[first.timings.variant].group_ids()),
            "n_utterances": len(lookup),
        })
        timings_path = self.out / "timings.json"
        write_json(timings_path, {
            v: o.timings.to_dict() for v, o in outcomes.items()
        })
        return [self.quality_path, speakers_path, loop_path, timings_path]

    def _stage_reference(self) -> List[Path]:
        if self.sim is None:
            scores = read_speaker_scores(Path(self.cfg.real.reference_scores))
        else:
            seed = derive_seed(self.cfg.seed, "reference")
            pool = reference_corpus(self.sim)
            model = self.trainer.train(unselected_selection(pool.ids()), pool, seed)
            values = evaluate_speakers(
                model, pool.group_ids(), self.evaluator, seed, stage="reference"
            )
            scores = [SpeakerScore(group_id=g, pseudo_mos=s) for g, s in values.items()]
        write_speaker_scores(scores, self.reference_path)
        return [self.reference_path]

    def _stage_select(self, sel: SelectionConfig, paths: MethodPaths) -> List[Path]:
        pools = self._screened()
        needs_table = sel.method in (SelectionMethod.OURS_UTT, SelectionMethod.OURS_SPK) or (
            sel.method == SelectionMethod.UNSELECTED and sel.variant_policy == "switch"
        )
        q = read_quality_table(self.quality_path) if needs_table else None
        selection = build_selection(sel, pools, q)
        write_selection(selection, paths.selection)
        logger.info(f"Selected {selection.n} utterances ({sel.label})")
        return [paths.selection]

    def _stage_retrain(self, paths: MethodPaths) -> List[Path]:
        selection = read_selection(paths.selection)
        pools = self._screened()
        seed = derive_seed(self.cfg.seed, "retrain")
        model = self.trainer.train(selection, pools, seed)
        groups = pools[IDENTITY].group_ids()
        values = evaluate_speakers(model, groups, self.evaluator, seed, stage="retrain")
        seen = {pools[IDENTITY].by_id()[u].group_id for u in selection.ids()}
        write_speaker_scores(
            [SpeakerScore(group_id=g, pseudo_mos=s, seen=g in seen) for g, s in values.items()],
            paths.retrained
        )
        return [paths.retrained]

    def _stage_report(self, sel: SelectionConfig, paths: MethodPaths) -> List[Path]:
        speakers = read_speaker_scores(paths.retrained)
        reference = read_speaker_scores(self.reference_path)
        selection = read_selection(paths.selection)
        pools = self._screened()
        threshold = hq_threshold({s.group_id: s.pseudo_mos for s in reference})
        grid = self.cfg.report.grid_values()

        report = build_report(
            method=sel.method,
            variant_policy=sel.variant_policy,
            n_selected=selection.n,
            speaker_scores={s.group_id: s.pseudo_mos for s in speakers},
            seen=[s.group_id for s in speakers if s.seen],
            threshold=threshold,
            centroids=speaker_centroids(pools[IDENTITY]),
            grid=grid,
            variant_shares=variant_shares(selection.variant_of(), self.variants),
            pool_switch_shares=self._pool_switch_shares(),
            correlations=self._correlations(sel, pools),
            cost=self._cost()
        )
        write_report(report, paths.report)
        artifacts = [paths.report]
        if self.cfg.report.plot_csv:
            frame = histogram_frame([s.pseudo_mos for s in speakers], grid)
            write_histogram_csv(frame, paths.histogram)
            artifacts.append(paths.histogram)
        return artifacts

    def _pool_switch_shares(self) -> Dict[str, float]:
        if not self.quality_path.exists():
            return {}
        chosen = switch_variants(read_quality_table(self.quality_path))
        return variant_shares({u: v for u, (v, _) in chosen.items()}, self.variants)

    def _correlations(
        self,
        sel: SelectionConfig,
        pools: Dict[str, Manifest]
    ) -> Dict[str, Any]:
        """Estimated vs latent quality and acoustic vs latent quality (simulation only)."""
        if self.sim is None or not self.quality_path.exists():
            return {}
        q = read_quality_table(self.quality_path)
        if sel.variant_policy == "switch":
            chosen = switch_variants(q)
        else:
            chosen = {
                u: (sel.variant_policy, s)
                for u, s in uniform_variant(q, sel.variant_policy).items()
            }
        lookups = {v: pools[v].by_id() for v in pools}
        ids = sorted(chosen)
        estimated = [chosen[u][1] for u in ids]
        latent = [record_quality(lookups[chosen[u][0]][u], self.sim) for u in ids]
        identity = pools[IDENTITY].by_id()
        acoustic = [identity[u].acoustic_quality for u in ids]
        identity_latent = [record_quality(identity[u], self.sim) for u in ids]
        confidence = self.cfg.report.confidence
        blocks = {}
        for name, x, y in (
            ("training_quality_vs_latent", estimated, latent),
            ("acoustic_vs_latent", acoustic, identity_latent),
        ):
            try:
                blocks[name] = correlation_block(x, y, confidence)
            except DataError as e:
                logger.warning(f"Skipping correlation {name}: {e}")
        return blocks

    def _cost(self) -> CostAccount:
        loop = read_json(self.out / "loop.json")
        if self.sim is not None:
            train, evaluate, regress = sim_cost(
                self.sim,
                float(loop["training_audio_s"]),
                int(loop["n_speakers"]),
                int(loop["n_utterances"]),
            )
        else:
            timings = read_json(self.out / "timings.json")
            first = timings[loop["variants"][0]]
            train = timedelta(seconds=first["train_s"])
            evaluate = timedelta(seconds=first["eval_s"])
            regress = timedelta(seconds=first["regress_s"])
        total = cost_account(train, evaluate, regress)
        return CostAccount(
            train_s=train.total_seconds(),
            eval_s=evaluate.total_seconds(),
            regress_s=regress.total_seconds(),
            total_s=total.total_seconds(),
            total=format_duration(total),
            variant_loops=len(loop["variants"])
        )


def run_pipeline(
    cfg: PipelineConfig,
    output_dir: Optional[Path] = None,
    resume: bool = False
) -> Report:
    """Run the full pipeline and return the final report."""
    return PipelineRunner(cfg, output_dir=output_dir).run(resume=resume)


def compare_methods(
    cfg: PipelineConfig,
    selections: Sequence[SelectionConfig],
    output_dir: Optional[Path] = None,
    resume: bool = False
) -> Dict[str, Report]:
    """Reports of several selection methods sharing one loop run."""
    return PipelineRunner(cfg, output_dir=output_dir).compare(selections, resume=resume)
