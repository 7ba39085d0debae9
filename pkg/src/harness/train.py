"""Training loops: base pretraining and adapter tuning on frozen weights."""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from src.adapters.lora import LoRAAdapter, apply_lora
from src.adapters.prefix import PrefixSet, apply_prefix
from src.adapters.prompts import PromptBank, SoftPrompt, prepend_prompts
from src.errors import ConfigError
from src.harness.optim import AdamW
from src.harness.task import Corpus
from src.model.policy import AttentionPolicy
from src.model.transformer import Transformer
from src.model.weights import Weights
from src.tensors import ops
from src.tensors.autograd import GradientTrace, backward
from src.tensors.tensor import Tensor
from src.validation.schemas import AdapterKind, ModelConfig, TrainConfig, TuneConfig

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray], Tensor]


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)

    @property
    def first_loss(self) -> float:
        return self.losses[0] if self.losses else float("nan")

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


@dataclass
class TuneResult(TrainResult):
    adapter: SoftPrompt | PrefixSet | LoRAAdapter | None = None
    kind: AdapterKind = AdapterKind.PROMPT


# ---------------------------------------------------------------------------
# Batching and losses
# ---------------------------------------------------------------------------

def sample_batch(sequences: list[list[int]], batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly sampled equal-length sequences as an int array (B, T)."""
    idx = rng.integers(0, len(sequences), size=batch_size)
    return np.asarray([sequences[i] for i in idx], dtype=np.int64)


def lm_loss(model: Transformer, batch: np.ndarray) -> Tensor:
    """Next-token cross entropy over every position of the batch."""
    logits = model.forward(batch[:, :-1]).logits
    return ops.cross_entropy(logits, batch[:, 1:])


def prompt_lm_loss(model: Transformer, prompt: SoftPrompt, batch: np.ndarray) -> Tensor:
    embeds, layout = prepend_prompts(prompt, model.embed_tokens(batch[:, :-1]))
    logits = model.forward(embeds, layout, AttentionPolicy.single_prompt()).logits
    return ops.cross_entropy(logits, batch[:, 1:])


def run_training(params: list[Tensor], loss_fn: LossFn, sequences: list[list[int]], config: TrainConfig,
                 label: str, progress: Callable[[int], None] | None = None) -> TrainResult:
    """Generic AdamW loop; only ``params`` are updated."""
    if not sequences:
        raise ConfigError(f"{label}: no training sequences")
    rng = np.random.default_rng(config.seed)
    optimizer = AdamW.from_config(params, config)
    result = TrainResult()
    for step in range(config.steps):
        batch = sample_batch(sequences, config.batch_size, rng)
        with GradientTrace() as trace:
            loss = loss_fn(batch)
        grads = backward(trace, loss)
        optimizer.step(grads)
        result.losses.append(loss.item())
        if step % config.log_every == 0 or step == config.steps - 1:
            logger.info("%s step %d/%d loss %.4f", label, step + 1, config.steps, loss.item())
        if progress is not None:
            progress(step)
    return result


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def pretrain_base(model_config: ModelConfig, train_config: TrainConfig, corpus: Corpus,
                  progress: Callable[[int], None] | None = None) -> tuple[Weights, TrainResult]:
    """Train a fresh model on every fact; returns frozen weights."""
    weights = Weights.init(model_config, seed=train_config.seed).set_trainable(True)
    model = Transformer(weights)
    result = run_training(
        weights.trainable_tensors(), lambda batch: lm_loss(model, batch), corpus.sequences(),
        train_config, "pretrain", progress,
    )
    weights.set_trainable(False)
    return weights, result


def tune_adapter(kind: AdapterKind | str, weights: Weights, corpus: Corpus, config: TuneConfig,
                 domain: str | None = None, name: str | None = None, prompt_tokens: int | None = None,
                 progress: Callable[[int], None] | None = None) -> TuneResult:
    """Tune one adapter on frozen ``weights`` using ``domain`` facts (all when None)."""
    kind = AdapterKind(kind)
    weights.set_trainable(False)
    sequences = corpus.sequences(domain)
    label = f"tune-{kind.value}" + (f"[{domain}]" if domain else "")
    base = Transformer(weights)

    if kind in (AdapterKind.PROMPT, AdapterKind.IDP):
        n = prompt_tokens or config.prompt_tokens
        adapter = SoftPrompt.init(name or (domain or "prompt"), n, weights, seed=config.seed, dataset=domain or "all")
        result = run_training([adapter.embedding], lambda b: prompt_lm_loss(base, adapter, b),
                              sequences, config, label, progress)
        adapter.steps = config.steps
        adapter.embedding.requires_grad = False
    elif kind == AdapterKind.PREFIX:
        adapter = PrefixSet.init(weights.config, config.prefix_tokens, weights, seed=config.seed)
        model = apply_prefix(weights, adapter)
        result = run_training(adapter.parameters(), lambda b: lm_loss(model, b), sequences, config, label, progress)
        for s in adapter.states:
            s.requires_grad = False
    else:
        adapter = LoRAAdapter.init(weights.config, config.lora_rank, seed=config.seed, scale=config.lora_scale)
        model = apply_lora(weights, adapter)
        result = run_training(adapter.parameters(), lambda b: lm_loss(model, b), sequences, config, label, progress)
        for p in adapter.parameters():
            p.requires_grad = False

    return TuneResult(losses=result.losses, adapter=adapter, kind=kind)


def tune_bank(weights: Weights, corpus: Corpus, config: TuneConfig, lengths: list[int] | None = None,
              per_domain: bool = True) -> PromptBank:
    """One prompt per domain, or (``per_domain=False``) one prompt per length on all data.

    Domain i gets a prompt of ``lengths[i % len(lengths)]`` tokens, with
    ``lengths`` defaulting to ``config.bank_lengths``.
    """
    prompts = []
    lengths = lengths or config.bank_lengths
    if per_domain:
        for i, domain in enumerate(corpus.domain_names):
            cfg = config.model_copy(update={"seed": config.seed + i})
            n = lengths[i % len(lengths)]
            prompts.append(tune_adapter(AdapterKind.PROMPT, weights, corpus, cfg, domain=domain, name=domain,
                                        prompt_tokens=n).adapter)
    else:
        for i, n in enumerate(lengths):
            cfg = config.model_copy(update={"seed": config.seed + i})
            prompts.append(tune_adapter(AdapterKind.PROMPT, weights, corpus, cfg, name=f"len{n}", prompt_tokens=n).adapter)
    return PromptBank(prompts)
