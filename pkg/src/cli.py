"""CLI interface for idp-lab.

Uses Click for command parsing and Rich for output formatting. Every
command works inside one run directory and records its artifacts in the
manifest and the ledger.
"""

from __future__ import annotations

import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from src.adapters.accounting import TRAINING_TOKEN_BUDGET, count_params, reference_table
from src.adapters.lora import LoRAAdapter, apply_lora
from src.adapters.prefix import PrefixSet, apply_prefix
from src.adapters.prompts import PromptBank, SoftPrompt
from src.compression.compress import compress_model
from src.diagnostics.runner import ModelRunner, RunMode
from src.diagnostics.similarity import layer_similarity
from src.errors import ConfigError, IDPLabError
from src.harness import experiments
from src.harness.bench import POLICIES, latency_bench
from src.harness.reports import read_csv, write_csv, write_jsonl
from src.harness.task import Corpus, gen_corpus
from src.harness.train import pretrain_base, tune_adapter, tune_bank
from src.idp.pipeline import idp_forward, single_prompt_forward
from src.model.container import load_weights, save_weights
from src.model.transformer import Transformer
from src.model.weights import Weights
from src.storage.manifest import TIMING_KIND, RunDirectory
from src.validation.config import load_config
from src.validation.schemas import AdapterKind, RunConfig

console = Console()
logger = logging.getLogger(__name__)

CORPUS = "corpus.json"
BASE = "base.idpc"
COMPRESSED = "compressed.idpc"
LORA = "lora.idpc"
PREFIX = "prefix.idpc"
SIMILARITY_NOTE = (
    "attention compared over input query rows and input key columns only, renormalized over kept columns"
)


def setup_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True)],
    )


def prompt_file(name: str) -> str:
    return f"prompt-{name}.idpc"


# ---------------------------------------------------------------------------
# Run tracking
# ---------------------------------------------------------------------------

@dataclass
class RunContext:
    config: RunConfig
    run_dir: RunDirectory
    run_id: str
    artifacts: list[tuple[str, Path]] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.config.model.seed

    def path(self, name: str) -> Path:
        return self.run_dir.path(name)

    def add(self, kind: str, path: Path) -> Path:
        self.artifacts.append((kind, Path(path)))
        return Path(path)

    def require(self, name: str, producer: str) -> Path:
        path = self.path(name)
        if not path.exists():
            raise ConfigError(f"{path} not found; run `idp-lab {producer}` first")
        return path

    def weights(self, source: str) -> Weights:
        name = COMPRESSED if source == "compressed" else BASE
        return load_weights(self.require(name, "compress" if source == "compressed" else "pretrain"))

    def corpus(self) -> Corpus:
        return Corpus.load(self.require(CORPUS, "gen-data"))

    def bank(self, names: list[str]) -> PromptBank:
        return PromptBank([SoftPrompt.load(self.require(prompt_file(n), "tune")) for n in names])


def _fail(error: Exception) -> None:
    console.print(f"[red]Error:[/red] {escape(str(error))}")
    sys.exit(1)


@contextmanager
def tracked_run(ctx: click.Context, command: str, seed: int | None = None,
                overrides: dict | None = None) -> Iterator[RunContext]:
    """Load config, open a ledger run, and record artifacts when the body succeeds."""
    try:
        config = load_config(ctx.obj["config_path"], overrides)
    except ConfigError as e:
        _fail(e)
    if seed is not None:
        config = experiments.seeded(config, seed)

    run_dir = RunDirectory(ctx.obj["run_dir"])
    digest = config.digest()
    record = run_dir.db.start_run(command, digest, config.model.seed)
    run = RunContext(config, run_dir, record.id)
    try:
        yield run
    except IDPLabError as e:
        run_dir.db.finish_run(record.id, "failed", str(e))
        _fail(e)
    except Exception as e:
        run_dir.db.finish_run(record.id, "failed", repr(e))
        logger.exception("%s failed", command)
        sys.exit(1)

    if run.artifacts:
        run_dir.record(record.id, digest, run.seed, run.artifacts)
    run_dir.db.finish_run(record.id)


def _progress() -> Progress:
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
    )


def _rows_table(title: str, rows: list[dict]) -> Table:
    table = Table(title=title)
    columns = list(rows[0]) if rows else []
    for i, name in enumerate(columns):
        table.add_column(name, style="cyan" if i == 0 else None, justify="left" if i == 0 else "right")
    for row in rows:
        table.add_row(*(_cell(row.get(c, "")) for c in columns))
    return table


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    return escape(str(value))


seed_option = click.option("--seed", type=int, default=None, help="Override every seed in the config.")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging.")
@click.option("--config", "config_path", default=None, help="YAML config (default config/default.yaml).")
@click.option("--run-dir", default="runs/default", help="Directory holding all artifacts of this run.")
@click.pass_context
def cli(ctx, verbose, config_path, run_dir):
    """idp-lab: prompt recovery and inference-time dynamic prompting for compressed toy transformers."""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["run_dir"] = run_dir


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------

@cli.command("gen-data")
@seed_option
@click.option("--facts", type=int, default=None, help="Facts per domain.")
@click.pass_context
def gen_data(ctx, seed, facts):
    """Generate the synthetic multi-domain fact corpus."""
    with tracked_run(ctx, "gen-data", seed, {"task.facts_per_domain": facts}) as run:
        corpus = gen_corpus(run.config.task, run.seed, run.config.model.vocab_size)
        path = run.add("corpus", corpus.save(run.path(CORPUS)))

        table = Table(title="Synthetic Corpus")
        table.add_column("Domain", style="cyan")
        table.add_column("Facts", justify="right")
        table.add_column("Items", justify="right")
        for name in corpus.domain_names:
            table.add_row(name, str(len(corpus.sequences(name))), str(len(corpus.domain_items(name))))
        console.print(table)
        console.print(f"Corpus written to [cyan]{path}[/cyan]")


@cli.command()
@seed_option
@click.option("--steps", type=int, default=None, help="Training steps.")
@click.option("--lr", type=float, default=None, help="Learning rate.")
@click.pass_context
def pretrain(ctx, seed, steps, lr):
    """Pretrain the base model on every fact."""
    with tracked_run(ctx, "pretrain", seed, {"pretrain.steps": steps, "pretrain.learning_rate": lr}) as run:
        corpus = run.corpus()
        with _progress() as progress:
            task = progress.add_task("Pretraining...", total=run.config.pretrain.steps)
            weights, result = pretrain_base(run.config.model, run.config.pretrain, corpus,
                                            lambda _: progress.advance(task))
        run.add("weights", save_weights(run.path(BASE), weights, {"seed": str(run.seed)}))
        console.print(f"Loss [yellow]{result.first_loss:.4f}[/yellow] -> [green]{result.final_loss:.4f}[/green]")


@cli.command()
@seed_option
@click.option("--method", type=click.Choice(["quant", "prune"]), default="quant", help="Compression method.")
@click.option("--bits", type=int, default=None, help="RTN bit width (2-8).")
@click.option("--sparsity", type=float, default=None, help="Pruned fraction per matrix.")
@click.pass_context
def compress(ctx, seed, method, bits, sparsity):
    """Quantize or prune the pretrained base."""
    with tracked_run(ctx, "compress", seed, {"quant.bits": bits, "prune.sparsity": sparsity}) as run:
        base = run.weights("base")
        spec = run.config.quant if method == "quant" else run.config.prune
        compressed, report = compress_model(base, spec)
        run.add("weights", save_weights(run.path(COMPRESSED), compressed,
                                        {"method": report.method, "setting": report.setting}))
        run.add("report", write_csv(report.rows(), run.path(f"compress-{report.setting}.csv")))
        console.print(f"{report.method} {report.setting}: {len(report.matrices)} matrices, "
                      f"mean mse [yellow]{report.mean_mse:.3g}[/yellow]")


@cli.command()
@seed_option
@click.option("--kind", type=click.Choice([k.value for k in AdapterKind]), default=None, help="Adapter to tune.")
@click.option("--steps", type=int, default=None, help="Tuning steps.")
@click.option("--lr", type=float, default=None, help="Learning rate.")
@click.option("--domain", default=None, help="Tune on one domain only (prompt, prefix, lora).")
@click.option("--tokens", type=int, default=None, help="Soft prompt length.")
@click.option("--rank", type=int, default=None, help="LoRA rank.")
@click.option("--weights", "source", type=click.Choice(["compressed", "base"]), default="compressed",
              help="Model the adapter is tuned against.")
@click.pass_context
def tune(ctx, seed, kind, steps, lr, domain, tokens, rank, source):
    """Tune a soft prompt, an IDP prompt bank, a prefix or a LoRA adapter on frozen weights."""
    overrides = {"tune.kind": kind, "tune.steps": steps, "tune.learning_rate": lr,
                 "tune.prompt_tokens": tokens, "tune.lora_rank": rank}
    with tracked_run(ctx, "tune", seed, overrides) as run:
        weights = run.weights(source)
        corpus = run.corpus()
        cfg = run.config.tune
        if domain is not None and domain not in corpus.domain_names:
            raise ConfigError(f"unknown domain {domain!r}; corpus has {corpus.domain_names}")

        if cfg.kind == AdapterKind.IDP:
            bank = tune_bank(weights, corpus, cfg)
            for prompt in bank:
                run.add("prompt", prompt.save(run.path(prompt_file(prompt.name))))
            console.print(f"Tuned bank of [green]{len(bank)}[/green] prompts: {', '.join(bank.names)}")
            return

        with _progress() as progress:
            task = progress.add_task(f"Tuning {cfg.kind.value}...", total=cfg.steps)
            result = tune_adapter(cfg.kind, weights, corpus, cfg, domain=domain, name=domain or "all",
                                  progress=lambda _: progress.advance(task))
        adapter = result.adapter
        if cfg.kind == AdapterKind.PROMPT:
            path = adapter.save(run.path(prompt_file(adapter.name)))
        else:
            path = adapter.save(run.path(LORA if cfg.kind == AdapterKind.LORA else PREFIX))
        run.add(cfg.kind.value, path)
        console.print(f"Loss [yellow]{result.first_loss:.4f}[/yellow] -> [green]{result.final_loss:.4f}[/green], "
                      f"saved [cyan]{path.name}[/cyan]")


EVAL_MODES = ("base", "prompt", "concat", "idp", "oracle", "lora", "prefix")


def _runner(run: RunContext, mode: str, weights: Weights, corpus: Corpus, prompt_name: str) -> ModelRunner:
    model = Transformer(weights)
    if mode == "base":
        return ModelRunner(model)
    if mode == "lora":
        return ModelRunner(apply_lora(weights, LoRAAdapter.load(run.require(LORA, "tune --kind lora"))))
    if mode == "prefix":
        return ModelRunner(apply_prefix(weights, PrefixSet.load(run.require(PREFIX, "tune --kind prefix"))))
    if mode == "prompt":
        return ModelRunner(model, RunMode.PROMPT, prompt=SoftPrompt.load(run.require(prompt_file(prompt_name), "tune")))
    bank = run.bank(corpus.domain_names)
    if mode == "oracle":
        index = {name: i for i, name in enumerate(bank.names)}
        return ModelRunner(model, RunMode.ORACLE, bank=bank, domain_index=index)
    return ModelRunner(model, RunMode(mode), bank=bank, selection=run.config.selection)


@cli.command("eval")
@seed_option
@click.option("--mode", type=click.Choice(EVAL_MODES), default="base", help="How the model is prompted or adapted.")
@click.option("--weights", "source", type=click.Choice(["compressed", "base"]), default="compressed")
@click.option("--prompt", "prompt_name", default="all", help="Prompt name for --mode prompt.")
@click.option("--length-normalize", is_flag=True, help="Score options by mean token log-prob.")
@click.pass_context
def eval_cmd(ctx, seed, mode, source, prompt_name, length_normalize):
    """Multiple-choice accuracy and perplexity on the corpus."""
    with tracked_run(ctx, "eval", seed, {"eval.length_normalize": True if length_normalize else None}) as run:
        corpus = run.corpus()
        runner = _runner(run, mode, run.weights(source), corpus, prompt_name)
        result, ms = experiments.evaluate(runner, corpus, run.config)
        label = f"{source}-{mode}" + (f"-{prompt_name}" if mode == "prompt" else "")
        row = result.as_row(label)
        logger.info("%s: %.2f ms per item", label, ms)
        predictions = [
            {"item": i, "domain": item.domain, "answer": item.answer, "predicted": pred}
            for i, (item, pred) in enumerate(zip(corpus.items, result.predictions))
        ]
        run.add("report", write_csv([row], run.path(f"eval-{label}.csv")))
        run.add("report", write_jsonl(predictions, run.path(f"predictions-{label}.jsonl")))
        console.print(_rows_table(f"Evaluation: {label}", [row]))


@cli.command()
@seed_option
@click.option("--items", "n_items", type=int, default=32, help="Number of corpus items to trace.")
@click.option("--prompt", "prompt_name", default="all", help="Prompt traced for the prompted variant.")
@click.pass_context
def diagnose(ctx, seed, n_items, prompt_name):
    """Layer-wise similarity to the uncompressed base and the IDP selection audit log."""
    with tracked_run(ctx, "diagnose", seed) as run:
        corpus = run.corpus()
        if not corpus.items:
            raise ConfigError("corpus has no items to trace")
        tokens = np.asarray([it.context for it in corpus.items[:n_items]])
        base = Transformer(run.weights("base"))
        compressed_weights = run.weights("compressed")
        compressed = Transformer(compressed_weights)

        baseline = base.forward(tokens, capture=True).trace
        variants = {"compressed": compressed.forward(tokens, capture=True).trace}
        if run.path(prompt_file(prompt_name)).exists():
            prompt = SoftPrompt.load(run.path(prompt_file(prompt_name)))
            variants["prompt"] = single_prompt_forward(compressed, tokens, prompt, capture=True).trace
        if run.path(LORA).exists():
            lora_model = apply_lora(compressed_weights, LoRAAdapter.load(run.path(LORA)))
            variants["lora"] = lora_model.forward(tokens, capture=True).trace

        audit = []
        if all(run.path(prompt_file(n)).exists() for n in corpus.domain_names):
            bank = run.bank(corpus.domain_names)
            idp_trace = idp_forward(compressed, tokens, bank, selection=run.config.selection).trace
            variants["idp"] = idp_trace
            for record in idp_trace.selections:
                item = corpus.items[record.sequence]
                audit.append({**record.to_dict(), "domain": item.domain, "prompt": bank.names[record.chosen]})
        else:
            logger.info("No complete domain prompt bank; skipping the selection audit")

        rows = []
        for name, trace in variants.items():
            per_seq = [layer_similarity(baseline, trace, s) for s in range(len(tokens))]
            for layer in range(baseline.n_layers):
                rows.append({
                    "variant": name,
                    "layer": layer,
                    "attn_cos": float(np.mean([s.attention[layer] for s in per_seq])),
                    "act_cos": float(np.mean([s.activation[layer] for s in per_seq])),
                })
        run.add("report", write_csv(rows, run.path("similarity.csv"), header_comment=SIMILARITY_NOTE))
        if audit:
            run.add("report", write_jsonl(audit, run.path("selections.jsonl")))
        console.print(_rows_table("Layer similarity to base", rows))


@cli.command()
@seed_option
@click.option("--iterations", type=int, default=None, help="Timed iterations per policy.")
@click.option("--batch", type=int, default=None, help="Batch size.")
@click.option("--input-tokens", type=int, default=None, help="Input length.")
@click.option("--prompt-tokens", type=int, default=None, help="Length of every bank prompt.")
@click.option("--policy", "policies", multiple=True, type=click.Choice(POLICIES), help="Restrict to these policies.")
@click.pass_context
def bench(ctx, seed, iterations, batch, input_tokens, prompt_tokens, policies):
    """Prefill and decode latency with instrumented MAC counts."""
    overrides = {"bench.iterations": iterations, "bench.batch_size": batch,
                 "bench.input_tokens": input_tokens, "bench.prompt_tokens": prompt_tokens, "bench.seed": seed}
    with tracked_run(ctx, "bench", seed, overrides) as run:
        if run.path(BASE).exists():
            weights = run.weights("base")
        else:
            logger.info("No pretrained base in %s; benchmarking random weights", run.run_dir.root)
            weights = Weights.init(run.config.model, seed=run.seed)
        rows = [r.as_row() for r in latency_bench(weights, run.config.bench, tuple(policies) or POLICIES)]
        run.add(TIMING_KIND, write_csv(rows, run.path("bench.csv"), header_comment="wall times vary; MAC counts are exact"))
        console.print(_rows_table("Latency", rows))


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

EXPERIMENTS = ("recovery", "routing", "compression-sweep", "prompt-length", "bank-size")


@cli.command()
@click.argument("name", type=click.Choice(EXPERIMENTS))
@click.option("--seeds", default=None, help="Comma-separated seeds (default from config).")
@click.option("--bank-mode", type=click.Choice(experiments.BANK_MODES), default="domain", help="Routing bank.")
@click.option("--method", type=click.Choice(["quant", "prune"]), default="quant", help="Recovery compression.")
@click.pass_context
def experiment(ctx, name, seeds, bank_mode, method):
    """Run a multi-seed experiment and write its report."""
    with tracked_run(ctx, f"experiment:{name}") as run:
        config = run.config
        seed_list = [int(s) for s in seeds.split(",")] if seeds else config.experiment.seeds
        if name == "recovery":
            spec = config.quant if method == "quant" else config.prune
            report = experiments.recovery_experiment(config, seed_list, spec)
            scores = [{k: v for k, v in r.items() if k != "ms_per_item"} for r in report.rows]
            timing = [{"seed": r["seed"], "method": r["method"], "ms_per_item": r["ms_per_item"]} for r in report.rows]
            run.add("report", write_csv(scores, run.path(f"recovery-{report.setting}.csv")))
            run.add(TIMING_KIND, write_csv(timing, run.path(f"recovery-{report.setting}-timing.csv")))
            summary = report.summary()
            run.add("report", write_csv(experiments.efficiency_frontier(report, config),
                                        run.path(f"frontier-{report.setting}.csv")))
        elif name == "routing":
            report = experiments.routing_experiment(config, seed_list, bank_mode)
            run.add("report", write_csv(report.rows, run.path(f"routing-{bank_mode}.csv")))
            summary = [report.summary()]
        elif name == "compression-sweep":
            rows = experiments.compression_sweep(config, seed_list)
            run.add("report", write_csv(rows, run.path("compression-sweep.csv")))
            summary = experiments.summarize_sweep(rows)
        elif name == "prompt-length":
            summary = experiments.prompt_length_sweep(config, seed_list[0])
            run.add("report", write_csv(summary, run.path("prompt-length.csv")))
        else:
            summary = experiments.bank_size_sweep(config, seed_list[0])
            run.add("report", write_csv(summary, run.path("bank-size.csv")))
        console.print(_rows_table(f"Experiment: {name}", summary))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _accounting_rows(config: RunConfig) -> list[dict]:
    mc, tc = config.model, config.tune
    rows = [
        count_params("prompt", mc.d_model, tokens=tc.prompt_tokens).as_row(),
        count_params("prefix", mc.d_model, mc.n_layers, tokens=max(tc.prefix_tokens, 1)).as_row(),
        count_params("lora", mc.d_model, mc.n_layers, rank=tc.lora_rank, d_inter=mc.d_ff).as_row(),
        count_params("idp", mc.d_model, tokens=tc.prompt_tokens * config.task.n_domains).as_row(),
    ]
    for row in rows:
        row["scale"] = "toy"
    return rows


def _print_accounting(config: RunConfig) -> list[dict]:
    reference = reference_table()
    console.print(_rows_table("Trainable parameters, 7B-scale reference (L=32, d=4096)", reference))
    console.print(_rows_table("Trainable parameters, toy configuration", _accounting_rows(config)))
    console.print(f"Reference adapters were trained on [bold]{TRAINING_TOKEN_BUDGET:,}[/bold] tokens; "
                  "toy budgets here are orders of magnitude smaller.")
    return reference


@cli.command()
@click.pass_context
def accounting(ctx):
    """Closed-form trainable-parameter counts, reference scale and toy scale."""
    with tracked_run(ctx, "accounting") as run:
        rows = _print_accounting(run.config) + _accounting_rows(run.config)
        run.add("report", write_csv(rows, run.path("accounting.csv"),
                                    header_comment=f"reference training budget {TRAINING_TOKEN_BUDGET} tokens"))


@cli.command()
@click.option("--name", default=None, help="Render only this report file.")
@click.pass_context
def report(ctx, name):
    """Render the reports in the run directory and the parameter accounting."""
    with tracked_run(ctx, "report") as run:
        paths = [run.require(name, "the producing command")] if name else sorted(run.run_dir.root.glob("*.csv"))
        if not paths:
            console.print("[yellow]No reports found.[/yellow]")
        for path in paths:
            rows = read_csv(path)
            console.print(_rows_table(path.name, rows) if rows else f"[yellow]{path.name} is empty[/yellow]")
        _print_accounting(run.config)

        stats = run.run_dir.db.stats()
        table = Table(title="Ledger")
        table.add_column("Metric", style="cyan")
        table.add_column("Value", style="green", justify="right")
        for key, value in stats.items():
            table.add_row(key.replace("_", " ").capitalize(), str(value))
        console.print(table)


if __name__ == "__main__":
    cli()
