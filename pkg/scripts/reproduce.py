"""Run every experiment end to end and write all reports into one run directory.

Stages: parameter accounting, compression sweep, recovery under quantization
and pruning, routing with domain and length banks, prompt-length and
bank-size sweeps, latency bench.

Run: python scripts/reproduce.py --config config/smoke.yaml --run-dir runs/smoke
"""

from __future__ import annotations

import logging
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

import click

from src.adapters.accounting import TRAINING_TOKEN_BUDGET, reference_table
from src.harness import experiments
from src.harness.bench import latency_bench
from src.harness.reports import write_csv
from src.model.weights import Weights
from src.storage.manifest import TIMING_KIND, RunDirectory
from src.validation.config import load_config

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s %(levelname)-7s [%(name)s] %(message)s",
    datefmt="%H:%M:%S",
)
logger = logging.getLogger("reproduce")

STAGES = ("accounting", "sweep", "recovery", "routing", "prompt-length", "bank-size", "bench")


def _split_timing(rows: list[dict]) -> tuple[list[dict], list[dict]]:
    scores = [{k: v for k, v in r.items() if k != "ms_per_item"} for r in rows]
    timing = [{"seed": r["seed"], "method": r["method"], "ms_per_item": r["ms_per_item"]} for r in rows]
    return scores, timing


@click.command()
@click.option("--config", "config_path", default=None, help="YAML config (default config/default.yaml).")
@click.option("--run-dir", default="runs/reproduce", help="Output directory.")
@click.option("--stages", default=",".join(STAGES), help="Comma-separated subset of stages.")
def main(config_path, run_dir, stages):
    config = load_config(config_path)
    selected = [s.strip() for s in stages.split(",") if s.strip()]
    unknown = set(selected) - set(STAGES)
    if unknown:
        raise click.BadParameter(f"unknown stages: {sorted(unknown)}", param_hint="--stages")

    out = RunDirectory(run_dir)
    digest = config.digest()
    run = out.db.start_run("reproduce", digest, config.model.seed)
    artifacts: list[tuple[str, Path]] = []
    start = time.time()
    logger.info("Reproducing %s into %s (config %s)", ", ".join(selected), out.root, digest[:12])

    try:
        if "accounting" in selected:
            artifacts.append(("report", write_csv(reference_table(), out.path("accounting.csv"),
                                                  header_comment=f"reference training budget {TRAINING_TOKEN_BUDGET} tokens")))

        if "sweep" in selected:
            rows = experiments.compression_sweep(config)
            artifacts.append(("report", write_csv(rows, out.path("compression-sweep.csv"))))
            for row in experiments.summarize_sweep(rows):
                logger.info("  %2s bits: accuracy %.3f", row["bits"], row["accuracy"])

        if "recovery" in selected:
            for spec in (config.quant, config.prune):
                report = experiments.recovery_experiment(config, spec=spec)
                scores, timing = _split_timing(report.rows)
                artifacts.append(("report", write_csv(scores, out.path(f"recovery-{report.setting}.csv"))))
                artifacts.append((TIMING_KIND, write_csv(timing, out.path(f"recovery-{report.setting}-timing.csv"))))
                artifacts.append(("report", write_csv(experiments.efficiency_frontier(report, config),
                                                      out.path(f"frontier-{report.setting}.csv"))))
                for row in report.summary():
                    logger.info("  %-10s accuracy %.3f, gap recovered %.2f",
                                row["method"], row["accuracy"], row["gap_recovered"])

        if "routing" in selected:
            for mode in experiments.BANK_MODES:
                report = experiments.routing_experiment(config, bank_mode=mode)
                artifacts.append(("report", write_csv(report.rows, out.path(f"routing-{mode}.csv"))))
                logger.info("  routing (%s): %s", mode, {k: round(v, 3) for k, v in report.summary().items()})

        seed = config.experiment.seeds[0]
        art = None
        if "prompt-length" in selected or "bank-size" in selected:
            art = experiments.prepare_seed(config, seed)
        if "prompt-length" in selected:
            rows = experiments.prompt_length_sweep(config, seed, art=art)
            artifacts.append(("report", write_csv(rows, out.path("prompt-length.csv"))))
        if "bank-size" in selected:
            rows = experiments.bank_size_sweep(config, seed, art=art)
            artifacts.append(("report", write_csv(rows, out.path("bank-size.csv"))))

        if "bench" in selected:
            weights = art.base if art is not None else Weights.init(config.model, seed=seed)
            rows = [r.as_row() for r in latency_bench(weights, config.bench)]
            artifacts.append((TIMING_KIND, write_csv(rows, out.path("bench.csv"))))
    except Exception as e:
        out.db.finish_run(run.id, "failed", repr(e))
        logger.exception("Reproduction failed")
        sys.exit(1)

    out.record(run.id, digest, config.model.seed, artifacts)
    out.db.finish_run(run.id)
    logger.info("Wrote %d reports in %.1f minutes", len(artifacts), (time.time() - start) / 60)


if __name__ == "__main__":
    main()
