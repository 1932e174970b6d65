"""Command-line interface: ``ttsops <command>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.
"""
import functools
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import click

from src import __version__
from src.analysis.metrics import (
    build_report,
    histogram_frame,
    hq_threshold,
    speaker_centroids,
    write_histogram_csv,
)
from src.analysis.pipeline import (
    PipelineRunner,
    apply_overrides,
    load_adapter,
    load_pipeline_config,
    parse_method,
    validate_config,
)
from src.analysis.quality_loop import (
    Evaluator,
    Trainer,
    evaluate_speakers,
    execute_variant_loops,
)
from src.analysis.regressor import dump_regressor
from src.analysis.selection import build_selection, select_utterances, variant_shares
from src.config.settings import settings
from src.data_collection.artifacts import (
    read_json,
    read_quality_table,
    read_selection,
    read_speaker_scores,
    sidecar_path,
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
from src.data_collection.prescreen import apply_to_variants, prescreen as run_prescreen
from src.models.configs import (
    LoopConfig,
    PrescreenConfig,
    SelectionConfig,
    SimConfig,
)
from src.models.schemas import (
    IDENTITY,
    QualityTable,
    SelectionMethod,
    SpeakerScore,
    register_variant,
    variant_registry,
)
from src.simulation.corpus import generate_variant_corpora
from src.simulation.trainer import SimEvaluator, SimTrainer
from src.utils.errors import ConfigError, DataError, StageError, TTSOpsError
from src.utils.logger import setup_logging
from src.utils.validators import parse_bounds, parse_grid, parse_variant_list

logger = logging.getLogger(__name__)


def handle_errors(func: Callable) -> Callable:
    """Report pipeline errors on stderr and exit with their code."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except TTSOpsError as e:
            click.echo(f"error: {e}", err=True)
            if isinstance(e, StageError) and e.completed:
                click.echo("completed artifacts:", err=True)
                for path in e.completed:
                    click.echo(f"  {path}", err=True)
            sys.exit(e.exit_code)

    return wrapper


def _load_config(model: Any, path: Optional[str]) -> Any:
    if path is None:
        return model()
    try:
        data = read_json(Path(path))
    except DataError as e:
        raise ConfigError(str(e)) from e
    return validate_config(model, data)


def _variants(text: Optional[str]) -> List[str]:
    names = parse_variant_list(text)
    for name in names:
        if not variant_registry.is_registered(name):
            raise ConfigError(f"unregistered variant: {name!r}")
    return variant_registry.sort(names)


def _adapters(
    sim_path: Optional[str],
    trainer: Optional[str],
    evaluator: Optional[str],
    seed: int
) -> Tuple[Trainer, Evaluator]:
    if sim_path is not None:
        sim = _load_config(SimConfig, sim_path).model_copy(update={"rng_seed": seed})
        return SimTrainer(sim), SimEvaluator(sim)
    if trainer and evaluator:
        return load_adapter(trainer), load_adapter(evaluator)
    raise ConfigError("give --sim, or both --trainer and --evaluator")


@click.group()
@click.option("--log-level", default=None, help="Override TTSOPS_LOG_LEVEL.")
@click.option("--register-variant", "extra_variants", multiple=True,
              help="Register an extra cleansing variant (repeatable).")
def cli(log_level: Optional[str], extra_variants: Tuple[str, ...]) -> None:
    """Closed-loop TTS corpus construction from uncurated speech."""
    setup_logging(log_level or settings.log_level, settings.log_dir)
    for name in extra_variants:
        try:
            register_variant(name)
        except DataError as e:
            raise click.UsageError(str(e)) from e


@cli.command()
def version() -> None:
    """Print the package version."""
    click.echo(__version__)


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="SimConfig JSON; defaults apply when omitted.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Identity manifest; variants go to sibling files.")
@click.option("--variants", default="identity", show_default=True,
              help="Comma-separated cleansing variants to emit.")
@click.option("--seed", type=int, default=None, help="Override rng_seed.")
@handle_errors
def simgen(
    config_path: Optional[str],
    out_path: str,
    variants: str,
    seed: Optional[int]
) -> None:
    """Generate a simulated candidate pool."""
    sim = _load_config(SimConfig, config_path)
    if seed is not None:
        sim = validate_config(SimConfig, {**sim.model_dump(), "rng_seed": seed})
    corpora = generate_variant_corpora(sim, _variants(variants))
    for path in write_variant_manifests(corpora, Path(out_path)):
        click.echo(str(path))


@cli.command()
@click.option("--pool", "--in", "pool_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--variants", default="identity", show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="PrescreenConfig JSON.")
@click.option("--ctc", "ctc_threshold", type=float, default=None)
@click.option("--compactness", default=None, help="Bounds as low:high.")
@click.option("--real", "real_mode", is_flag=True, help="Drop latent blocks from output.")
@handle_errors
def prescreen(
    pool_path: str,
    out_path: str,
    variants: str,
    config_path: Optional[str],
    ctc_threshold: Optional[float],
    compactness: Optional[str],
    real_mode: bool
) -> None:
    """Drop misaligned utterances and multi-speaker groups."""
    cfg = _load_config(PrescreenConfig, config_path)
    overrides: Dict[str, Any] = {}
    if ctc_threshold is not None:
        overrides["ctc_threshold"] = ctc_threshold
    if compactness is not None:
        overrides["compactness_low"], overrides["compactness_high"] = parse_bounds(compactness)
    if overrides:
        cfg = validate_config(PrescreenConfig, {**cfg.model_dump(), **overrides})

    names = _variants(variants)
    base = load_manifest(Path(pool_path), variant=IDENTITY)
    screened, summary = run_prescreen(base, cfg)
    manifests = load_variant_manifests(Path(pool_path), names)
    manifests[IDENTITY] = manifests.get(IDENTITY, base)
    restricted = apply_to_variants(screened, manifests)
    write_variant_manifests(restricted, Path(out_path), real_mode=real_mode)
    click.echo(
        f"kept {summary.after_ctc}/{summary.candidates} utterances, "
        f"dropped {len(summary.dropped_groups)} groups"
    )


@cli.command()
@click.option("--pool", "pool_path", type=click.Path(), required=True,
              help="Pre-screened identity manifest.")
@click.option("--variants", default="identity", show_default=True)
@click.option("--sim", "sim_path", type=click.Path(), default=None)
@click.option("--trainer", default=None, help="Real trainer as module:Class.")
@click.option("--evaluator", default=None, help="Real evaluator as module:Class.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--fraction", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=None, help="Defaults to TTSOPS_DEFAULT_SEED.")
@click.option("--regressor", "kind", type=click.Choice(["knn", "ridge"]), default="knn",
              show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--sequential", is_flag=True, help="Run variant loops one after another.")
@click.option("--dump-regressor", "dump_dir", type=click.Path(), default=None,
              help="Directory receiving one regressor JSON per variant.")
@handle_errors
def loop(
    pool_path: str,
    variants: str,
    sim_path: Optional[str],
    trainer: Optional[str],
    evaluator: Optional[str],
    out_path: str,
    fraction: float,
    seed: Optional[int],
    kind: str,
    k: int,
    lam: float,
    sequential: bool,
    dump_dir: Optional[str]
) -> None:
    """Score every utterance under every variant."""
    seed = settings.default_seed if seed is None else seed
    cfg = validate_config(LoopConfig, {
        "sampling_fraction": fraction,
        "seed": seed,
        "variants": _variants(variants),
        "concurrent": not sequential,
        "regressor": {"kind": kind, "k": k, "lambda": lam},
    })
    model_trainer, model_evaluator = _adapters(sim_path, trainer, evaluator, seed)
    pools = load_variant_manifests(Path(pool_path), cfg.variants)
    outcomes = execute_variant_loops(pools, model_trainer, model_evaluator, cfg)

    table = QualityTable.merge([o.table for o in outcomes.values()])
    write_quality_table(table, Path(out_path))
    write_json(sidecar_path(Path(out_path), "timings").with_suffix(".json"), {
        v: o.timings.to_dict() for v, o in outcomes.items()
    })
    if dump_dir is not None:
        for v, outcome in outcomes.items():
            dump_regressor(outcome.regressor, Path(dump_dir) / f"regressor.{v}.json")
    click.echo(f"scored {len(table)} (utterance, variant) pairs")


@cli.command()
@click.option("--quality", "quality_path", type=click.Path(), required=True)
@click.option("--pool", "pool_path", type=click.Path(), default=None,
              help="Pre-screened manifest; required except for ours-utt.")
@click.option("--variants", default=None, help="Defaults to the quality table's variants.")
@click.option("--method", default="ours-utt", show_default=True,
              help="unselected, acoustic, ours-utt or ours-spk.")
@click.option("--n", type=int, default=None)
@click.option("--fraction", type=float, default=0.25, show_default=True,
              help="Corpus size as a share of the pool when --n is absent.")
@click.option("--theta", type=float, default=None, help="Acoustic threshold.")
@click.option("--policy", default="switch", show_default=True,
              help="'switch' or a single variant.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def select(
    quality_path: str,
    pool_path: Optional[str],
    variants: Optional[str],
    method: str,
    n: Optional[int],
    fraction: float,
    theta: Optional[float],
    policy: str,
    out_path: str
) -> None:
    """Choose the final training corpus."""
    cfg = validate_config(SelectionConfig, {
        "method": parse_method(method),
        "n": n,
        "n_fraction": fraction,
        "theta": theta,
        "variant_policy": policy,
    })
    q = read_quality_table(Path(quality_path)) if Path(quality_path).exists() else None
    if pool_path is None:
        if cfg.method != SelectionMethod.OURS_UTT or q is None:
            raise ConfigError(f"--pool is required for method {cfg.method.value}")
        selection = select_utterances(q, cfg.resolve_n(len(q.utterance_ids())), policy)
    else:
        names = _variants(variants) if variants else list(q.variants if q else [IDENTITY])
        pools = load_variant_manifests(Path(pool_path), names)
        selection = build_selection(cfg, pools, q)
    write_selection(selection, Path(out_path))
    click.echo(f"selected {selection.n} utterances")


@cli.command()
@click.option("--selection", "selection_path", type=click.Path(), required=True)
@click.option("--pool", "pool_path", type=click.Path(), required=True)
@click.option("--variants", default=None, help="Defaults to the variants selected.")
@click.option("--sim", "sim_path", type=click.Path(), default=None)
@click.option("--trainer", default=None)
@click.option("--evaluator", default=None)
@click.option("--seed", type=int, default=None, help="Defaults to TTSOPS_DEFAULT_SEED.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@handle_errors
def retrain(
    selection_path: str,
    pool_path: str,
    variants: Optional[str],
    sim_path: Optional[str],
    trainer: Optional[str],
    evaluator: Optional[str],
    seed: Optional[int],
    out_path: str
) -> None:
    """Retrain on a selection and score every speaker of the pool."""
    seed = settings.default_seed if seed is None else seed
    selection = read_selection(Path(selection_path))
    names = _variants(variants) if variants else variant_registry.sort(
        [e.variant for e in selection.entries] + [IDENTITY]
    )
    pools = load_variant_manifests(Path(pool_path), names)
    model_trainer, model_evaluator = _adapters(sim_path, trainer, evaluator, seed)
    model = model_trainer.train(selection, pools, seed)
    base = pools[IDENTITY]
    scores = evaluate_speakers(
        model, base.group_ids(), model_evaluator, seed, stage="retrain"
    )
    lookup = base.by_id()
    seen = {lookup[u].group_id for u in selection.ids()}
    write_speaker_scores(
        [SpeakerScore(group_id=g, pseudo_mos=s, seen=g in seen) for g, s in scores.items()],
        Path(out_path)
    )
    click.echo(f"scored {len(scores)} speakers")


@cli.command()
@click.option("--scores", "scores_path", type=click.Path(), required=True)
@click.option("--reference", "reference_path", type=click.Path(), required=True)
@click.option("--grid", default="1.0:5.0:0.05", show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--plot-csv", "csv_path", type=click.Path(), default=None)
@click.option("--pool", "pool_path", type=click.Path(), default=None,
              help="Manifest for speaker embeddings; without it speaker variation is 0.")
@click.option("--selection", "selection_path", type=click.Path(), default=None)
@handle_errors
def report(
    scores_path: str,
    reference_path: str,
    grid: str,
    out_path: str,
    csv_path: Optional[str],
    pool_path: Optional[str],
    selection_path: Optional[str]
) -> None:
    """Summarize a retrained model's speaker scores."""
    grid_values = parse_grid(grid)
    speakers = read_speaker_scores(Path(scores_path))
    reference = read_speaker_scores(Path(reference_path))
    centroids = speaker_centroids(load_manifest(Path(pool_path))) if pool_path else None

    method, policy, n_selected, shares = SelectionMethod.UNSELECTED, "identity", 0, {}
    if selection_path is not None:
        selection = read_selection(Path(selection_path))
        method, n_selected = selection.method, selection.n
        policy = str(selection.provenance.get("policy", "switch"))
        shares = variant_shares(selection.variant_of())

    result = build_report(
        method=method,
        variant_policy=policy,
        n_selected=n_selected,
        speaker_scores={s.group_id: s.pseudo_mos for s in speakers},
        seen=[s.group_id for s in speakers if s.seen],
        threshold=hq_threshold({s.group_id: s.pseudo_mos for s in reference}),
        centroids=centroids,
        grid=grid_values,
        variant_shares=shares
    )
    write_report(result, Path(out_path))
    if csv_path is not None:
        frame = histogram_frame([s.pseudo_mos for s in speakers], grid_values)
        write_histogram_csv(frame, Path(csv_path))
    click.echo(
        f"{result.hq_overall.count}/{result.hq_overall.total} high-quality speakers "
        f"({result.hq_overall.percent})"
    )


@cli.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--resume", is_flag=True, help="Skip stages completed by a previous run.")
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", "out_dir", type=click.Path(), default=None)
@click.option("--method", default=None)
@click.option("--n", type=int, default=None)
@click.option("--fraction", type=float, default=None)
@handle_errors
def run(
    config_path: str,
    resume: bool,
    seed: Optional[int],
    out_dir: Optional[str],
    method: Optional[str],
    n: Optional[int],
    fraction: Optional[float]
) -> None:
    """Run the whole pipeline from one config document."""
    cfg = apply_overrides(
        load_pipeline_config(Path(config_path)),
        seed=seed, method=method, n=n, fraction=fraction
    )
    runner = PipelineRunner(cfg, output_dir=Path(out_dir) if out_dir else None)
    result = runner.run(resume=resume)
    click.echo(
        f"{result.method.value}: {result.hq_overall.count}/{result.hq_overall.total} "
        f"high-quality speakers ({result.hq_overall.percent}); report in {runner.out}"
    )


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
