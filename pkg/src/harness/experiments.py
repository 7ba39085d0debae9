"""Multi-seed experiments: compression recovery, routing, and sweeps.

Every experiment is deterministic for its seeds; only the wall-clock
columns vary between runs.
"""

from __future__ import annotations

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from src.adapters.accounting import REFERENCE_D_INTER, REFERENCE_D_MODEL, REFERENCE_N_LAYERS, count_params
from src.adapters.lora import apply_lora
from src.adapters.prefix import apply_prefix
from src.compression.compress import compress_model
from src.diagnostics.evaluate import EvalResult, mc_accuracy, perplexity
from src.diagnostics.runner import ModelRunner, RunMode
from src.errors import ConfigError
from src.harness.task import Corpus, gen_corpus
from src.harness.train import pretrain_base, tune_adapter, tune_bank
from src.model.transformer import Transformer
from src.model.weights import Weights
from src.validation.schemas import AdapterKind, PruneSpec, QuantSpec, RunConfig

logger = logging.getLogger(__name__)

RECOVERY_METHODS = ("baseline", "compressed", "prompt", "prefix", "lora", "idp", "concat")
BANK_MODES = ("domain", "length")


@dataclass
class SeedArtifacts:
    seed: int
    corpus: Corpus
    base: Weights
    compressed: Weights


def seeded(config: RunConfig, seed: int) -> RunConfig:
    """Copy of ``config`` with every seed field set to ``seed``."""
    return config.model_copy(update={
        "model": config.model.model_copy(update={"seed": seed}),
        "pretrain": config.pretrain.model_copy(update={"seed": seed}),
        "tune": config.tune.model_copy(update={"seed": seed}),
    })


def prepare_seed(config: RunConfig, seed: int, spec: QuantSpec | PruneSpec | None = None) -> SeedArtifacts:
    """Corpus, pretrained base and compressed copy for one seed."""
    cfg = seeded(config, seed)
    corpus = gen_corpus(cfg.task, seed, cfg.model.vocab_size)
    base, result = pretrain_base(cfg.model, cfg.pretrain, corpus)
    compressed, _ = compress_model(base, spec or cfg.quant)
    logger.info("Seed %d: pretrain loss %.3f -> %.3f", seed, result.first_loss, result.final_loss)
    return SeedArtifacts(seed, corpus, base, compressed)


def evaluate(runner: ModelRunner, corpus: Corpus, config: RunConfig) -> tuple[EvalResult, float]:
    """MC accuracy with perplexity attached, plus mean milliseconds per item."""
    start = time.perf_counter()
    result = mc_accuracy(runner, corpus.items, config.eval.length_normalize, config.eval.workers)
    elapsed = (time.perf_counter() - start) * 1e3 / max(len(corpus.items), 1)
    result.perplexity = perplexity(runner, corpus.sequences(), [f.domain for f in corpus.facts])
    return result, elapsed


def _mean_rows(rows: list[dict], key: str, fields: list[str]) -> list[dict]:
    groups: dict[str, list[dict]] = defaultdict(list)
    for row in rows:
        groups[row[key]].append(row)
    return [
        {key: name, **{f: float(np.mean([r[f] for r in group])) for f in fields}, "seeds": len(group)}
        for name, group in groups.items()
    ]


# ---------------------------------------------------------------------------
# Recovery
# ---------------------------------------------------------------------------

@dataclass
class RecoveryReport:
    setting: str
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> list[dict]:
        summary = _mean_rows(self.rows, "method", ["accuracy", "perplexity", "params", "ms_per_item"])
        by_method = {s["method"]: s for s in summary}
        base = by_method.get("baseline", {}).get("accuracy")
        low = by_method.get("compressed", {}).get("accuracy")
        for s in summary:
            gap = (base - low) if base is not None and low is not None else 0.0
            s["gap_recovered"] = (s["accuracy"] - low) / gap if gap > 0 else 0.0
        return summary


def recovery_experiment(config: RunConfig, seeds: list[int] | None = None,
                        spec: QuantSpec | PruneSpec | None = None,
                        methods: tuple[str, ...] = RECOVERY_METHODS) -> RecoveryReport:
    """Baseline vs compressed vs each recovery method, per seed."""
    unknown = set(methods) - set(RECOVERY_METHODS)
    if unknown:
        raise ConfigError(f"unknown recovery methods: {sorted(unknown)}")
    spec = spec or config.quant
    setting = f"{spec.bits}bit" if isinstance(spec, QuantSpec) else f"sparsity={spec.sparsity:g}"
    report = RecoveryReport(setting)

    for seed in seeds if seeds is not None else config.experiment.seeds:
        art = prepare_seed(config, seed, spec)
        tune = seeded(config, seed).tune
        bank = None
        for method in methods:
            logger.info("Seed %d: evaluating %s", seed, method)
            params = 0
            if method == "baseline":
                runner = ModelRunner(Transformer(art.base))
            elif method == "compressed":
                runner = ModelRunner(Transformer(art.compressed))
            elif method == "prompt":
                prompt = tune_adapter(AdapterKind.PROMPT, art.compressed, art.corpus, tune).adapter
                runner, params = ModelRunner(Transformer(art.compressed), RunMode.PROMPT, prompt=prompt), prompt.embedding.numel
            elif method == "prefix":
                prefix = tune_adapter(AdapterKind.PREFIX, art.compressed, art.corpus, tune).adapter
                runner, params = ModelRunner(apply_prefix(art.compressed, prefix)), prefix.param_count
            elif method == "lora":
                lora = tune_adapter(AdapterKind.LORA, art.compressed, art.corpus, tune).adapter
                runner, params = ModelRunner(apply_lora(art.compressed, lora)), lora.param_count
            else:
                bank = bank or tune_bank(art.compressed, art.corpus, tune)
                mode = RunMode.IDP if method == "idp" else RunMode.CONCAT
                runner = ModelRunner(Transformer(art.compressed), mode, bank=bank, selection=config.selection)
                params = sum(p.embedding.numel for p in bank)
            result, ms = evaluate(runner, art.corpus, config)
            row = {"seed": seed, "method": method, "accuracy": result.accuracy, "perplexity": result.perplexity,
                   "params": params, "ms_per_item": ms}
            row.update({f"acc_{d}": a for d, a in result.per_domain.items()})
            report.rows.append(row)
    return report


def compression_sweep(config: RunConfig, seeds: list[int] | None = None,
                      bits: list[int] | None = None) -> list[dict]:
    """Accuracy of the compressed base at each bit width, per seed."""
    rows = []
    for seed in seeds if seeds is not None else config.experiment.seeds:
        art = prepare_seed(config, seed)
        base_acc = mc_accuracy(ModelRunner(Transformer(art.base)), art.corpus.items).accuracy
        rows.append({"seed": seed, "bits": 32, "accuracy": base_acc})
        for b in bits or config.experiment.bits:
            compressed, report = compress_model(art.base, QuantSpec(bits=b))
            acc = mc_accuracy(ModelRunner(Transformer(compressed)), art.corpus.items).accuracy
            rows.append({"seed": seed, "bits": b, "accuracy": acc, "mean_mse": report.mean_mse})
            logger.info("Seed %d: %d-bit accuracy %.3f", seed, b, acc)
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    return _mean_rows(rows, "bits", ["accuracy"])


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

@dataclass
class RoutingReport:
    bank_mode: str
    rows: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        fields = [k for k in self.rows[0] if k != "seed"] if self.rows else []
        return {f: float(np.mean([r[f] for r in self.rows])) for f in fields}


def routing_experiment(config: RunConfig, seeds: list[int] | None = None, bank_mode: str = "domain") -> RoutingReport:
    """Individual prompts vs oracle routing vs naive concat vs IDP.

    ``domain``: one prompt per knowledge domain. ``length``: prompts of
    different lengths trained on the same data (no oracle exists).
    """
    if bank_mode not in BANK_MODES:
        raise ConfigError(f"bank_mode must be one of {BANK_MODES}, got {bank_mode!r}")
    report = RoutingReport(bank_mode)
    for seed in seeds if seeds is not None else config.experiment.seeds:
        art = prepare_seed(config, seed)
        tune = seeded(config, seed).tune
        bank = tune_bank(art.compressed, art.corpus, tune, per_domain=bank_mode == "domain")
        model = Transformer(art.compressed)
        row: dict = {"seed": seed}

        for prompt in bank:
            runner = ModelRunner(model, RunMode.PROMPT, prompt=prompt)
            row[f"prompt_{prompt.name}"] = mc_accuracy(runner, art.corpus.items).accuracy
        row["concat"] = mc_accuracy(ModelRunner(model, RunMode.CONCAT, bank=bank), art.corpus.items).accuracy
        idp = ModelRunner(model, RunMode.IDP, bank=bank, selection=config.selection)
        row["idp"] = mc_accuracy(idp, art.corpus.items).accuracy

        if bank_mode == "domain":
            index = {name: i for i, name in enumerate(bank.names)}
            oracle = ModelRunner(model, RunMode.ORACLE, bank=bank, domain_index=index)
            row["oracle"] = mc_accuracy(oracle, art.corpus.items).accuracy
            routed = [idp.route(np.asarray(it.context)) == index[it.domain] for it in art.corpus.items]
            row["routed_own_domain"] = float(np.mean(routed))
        logger.info("Seed %d routing: %s", seed, {k: round(v, 3) for k, v in row.items() if k != "seed"})
        report.rows.append(row)
    return report


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def prompt_length_sweep(config: RunConfig, seed: int = 0, lengths: list[int] | None = None,
                        art: SeedArtifacts | None = None) -> list[dict]:
    """One prompt per length on the compressed model: perplexity and accuracy side by side."""
    art = art or prepare_seed(config, seed)
    tune = seeded(config, seed).tune
    rows = []
    for n in lengths or config.experiment.prompt_lengths:
        prompt = tune_adapter(AdapterKind.PROMPT, art.compressed, art.corpus, tune, prompt_tokens=n).adapter
        result, _ = evaluate(ModelRunner(Transformer(art.compressed), RunMode.PROMPT, prompt=prompt), art.corpus, config)
        rows.append({"length": n, "perplexity": result.perplexity, "accuracy": result.accuracy})
    return rows


def bank_size_sweep(config: RunConfig, seed: int = 0, pairs: list[tuple[int, int]] | None = None,
                    art: SeedArtifacts | None = None) -> list[dict]:
    """IDP accuracy as the domain prompts get shorter."""
    art = art or prepare_seed(config, seed)
    tune = seeded(config, seed).tune
    rows = []
    for pair in pairs or config.experiment.bank_length_pairs:
        bank = tune_bank(art.compressed, art.corpus, tune, lengths=list(pair))
        runner = ModelRunner(Transformer(art.compressed), RunMode.IDP, bank=bank, selection=config.selection)
        rows.append({
            "lengths": "+".join(str(n) for n in bank.lengths),
            "mean_length": float(np.mean(bank.lengths)),
            "idp_accuracy": mc_accuracy(runner, art.corpus.items).accuracy,
        })
    return rows


def efficiency_frontier(report: RecoveryReport, config: RunConfig) -> list[dict]:
    """Accuracy against trainable parameters, toy scale and reference 7B scale."""
    tune = config.tune
    n_domains = config.task.n_domains
    reference = {
        "prompt": count_params("prompt", REFERENCE_D_MODEL, tokens=tune.prompt_tokens).count,
        "prefix": count_params("prefix", REFERENCE_D_MODEL, REFERENCE_N_LAYERS, tokens=tune.prefix_tokens).count
        if tune.prefix_tokens else 0,
        "lora": count_params("lora", REFERENCE_D_MODEL, REFERENCE_N_LAYERS, rank=tune.lora_rank, d_inter=REFERENCE_D_INTER).count,
        "idp": count_params("idp", REFERENCE_D_MODEL, tokens=tune.prompt_tokens * n_domains).count,
        "concat": count_params("idp", REFERENCE_D_MODEL, tokens=tune.prompt_tokens * n_domains).count,
    }
    rows = []
    for s in report.summary():
        if s["method"] in ("baseline", "compressed"):
            continue
        rows.append({
            "method": s["method"],
            "toy_params": int(s["params"]),
            "reference_scale_params": reference.get(s["method"], 0),
            "accuracy": s["accuracy"],
            "accuracy_per_kparam": s["accuracy"] / (s["params"] / 1000) if s["params"] else 0.0,
        })
    return rows
