#!/usr/bin/env python3
"""
Compare corpus selection methods on the simulated TTS world over several seeds.

Usage:
    python scripts/compare_methods.py                          # Seeds 0..9, default world
    python scripts/compare_methods.py --seeds 0-4 --fraction 0.1
    python scripts/compare_methods.py --config run.json --out runs/compare
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List

import pandas as pd

# Add src to path for imports
sys.path.append(str(Path(__file__).parent.parent))

from src.analysis.pipeline import compare_methods, load_pipeline_config, validate_config
from src.models.configs import PipelineConfig, SelectionConfig, SimConfig
from src.models.schemas import SelectionMethod
from src.utils.errors import TTSOpsError
from src.utils.logger import setup_logging

logger = logging.getLogger(__name__)


def parse_seeds(text: str) -> List[int]:
    """``"0-9"`` or ``"1,4,7"``."""
    if "-" in text:
        low, high = text.split("-", 1)
        return list(range(int(low), int(high) + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def method_grid(n_fraction: float, variants: List[str]) -> List[SelectionConfig]:
    """Every compared method at a matched corpus size."""
    grid = [
        SelectionConfig(method=SelectionMethod.UNSELECTED, variant_policy="identity"),
        SelectionConfig(method=SelectionMethod.ACOUSTIC_THETA, n_fraction=n_fraction),
        SelectionConfig(method=SelectionMethod.OURS_SPK, n_fraction=n_fraction),
        SelectionConfig(method=SelectionMethod.OURS_UTT, n_fraction=n_fraction),
    ]
    grid.extend(
        SelectionConfig(method=SelectionMethod.OURS_UTT, n_fraction=n_fraction, variant_policy=v)
        for v in variants
    )
    return grid


def run_comparison(
    base: PipelineConfig,
    seeds: List[int],
    n_fraction: float,
    out_dir: Path
) -> pd.DataFrame:
    """One row per (seed, method) with the headline report numbers."""
    rows: List[Dict] = []
    grid = method_grid(n_fraction, list(base.loop.variants))
    for seed in seeds:
        cfg = base.model_copy(update={"seed": seed})
        logger.info(f"Seed {seed}: comparing {len(grid)} methods")
        reports = compare_methods(cfg, grid, output_dir=out_dir / f"seed{seed}")
        for label, report in reports.items():
            rows.append({
                "seed": seed,
                "method": label,
                "n_selected": report.n_selected,
                "mean_pseudo_mos": report.mean_pseudo_mos,
                "hq_count": report.hq_overall.count,
                "hq_percent": report.hq_overall.percent,
                "mst_cost": report.mst_cost,
            })
    return pd.DataFrame(rows)


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Per-method means plus how often ours-utt beats each method."""
    summary = frame.groupby("method")[["mean_pseudo_mos", "hq_count", "mst_cost"]].mean()
    ours = frame[frame["method"] == "ours_utt-switch"].set_index("seed")["mean_pseudo_mos"]
    wins = {}
    for method, group in frame.groupby("method"):
        other = group.set_index("seed")["mean_pseudo_mos"]
        wins[method] = int((ours > other.reindex(ours.index)).sum())
    summary["ours_utt_wins"] = pd.Series(wins)
    return summary.sort_values("mean_pseudo_mos", ascending=False)


def main():
    parser = argparse.ArgumentParser(description="Compare corpus selection methods")
    parser.add_argument("--config", help="PipelineConfig JSON (default: simulated world)")
    parser.add_argument("--seeds", default="0-9", help="Seed range or list")
    parser.add_argument("--fraction", type=float, default=1.0,
                        help="Sampling fraction of the initial training")
    parser.add_argument("--n-fraction", type=float, default=0.25,
                        help="Selected corpus size as a share of the pool")
    parser.add_argument("--out", default="runs/compare", help="Output directory")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args()

    setup_logging(args.log_level)

    try:
        if args.config:
            base = load_pipeline_config(Path(args.config))
        else:
            base = PipelineConfig(sim=SimConfig())
        base = validate_config(PipelineConfig, {
            **base.model_dump(),
            "loop": {**base.loop.model_dump(by_alias=True), "sampling_fraction": args.fraction},
        })
        out_dir = Path(args.out)
        frame = run_comparison(base, parse_seeds(args.seeds), args.n_fraction, out_dir)
    except TTSOpsError as e:
        logger.error(str(e))
        sys.exit(e.exit_code)

    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / "comparison.csv", index=False, float_format="%.6g")
    summary = summarize(frame)
    summary.to_csv(out_dir / "summary.csv", float_format="%.6g")
    print(summary.to_string(float_format=lambda x: f"{x:.3f}"))


if __name__ == "__main__":
    main()
