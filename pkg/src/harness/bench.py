"""Latency benchmark: prefill and per-token decode across prompting policies.

Wall times are noisy at desk scale, so every row also carries the
instrumented multiply-accumulate count and the analytic one. Pin BLAS to a
single thread (``OMP_NUM_THREADS=1``) for stable medians.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from src.adapters.lora import LoRAAdapter, apply_lora
from src.adapters.prompts import PromptBank, SoftPrompt, prepend_prompts
from src.errors import ConfigError
from src.idp.store import build_prompt_cache
from src.model.cache import KVCache
from src.model.layout import SegmentLayout
from src.model.policy import AttentionPolicy
from src.model.trace import ForwardOutput
from src.model.transformer import Transformer
from src.model.weights import Weights
from src.tensors.counters import count_macs
from src.validation.schemas import BenchConfig, ModelConfig

logger = logging.getLogger(__name__)

POLICIES = (
    "no_prompt",
    "single_prompt_uncached",
    "single_prompt_cached",
    "idp_cached",
    "concat",
    "lora",
)


# ---------------------------------------------------------------------------
# Analytic MAC model
# ---------------------------------------------------------------------------

def analytic_forward_macs(
    config: ModelConfig,
    batch: int,
    n_query: int,
    n_keys: int,
    n_logit_rows: int,
    prefix_tokens: int = 0,
    lora_rank: int = 0,
) -> int:
    """Exact MACs of one forward call.

    Per layer: four d x d projections and the two FFN matrices per query row,
    q·kᵀ and weights·v against every key (prefix included), the prefix K/V
    projections once, and r * (d_in + d_out) per row per LoRA-targeted matrix.
    Plus the tied output head for every logit row.
    """
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    rows = batch * n_query
    per_layer = rows * (4 * d * d + 2 * d * f) + 2 * rows * (n_keys + prefix_tokens) * d
    per_layer += 2 * prefix_tokens * d * d
    per_layer += rows * lora_rank * (10 * d + 2 * f)
    return config.n_layers * per_layer + batch * n_logit_rows * d * v


def lora_matrix_macs(d_in: int, d_out: int, rank: int, tokens: int) -> int:
    """Extra MACs one LoRA-adapted matrix adds over ``tokens`` rows."""
    return rank * (d_in + d_out) * tokens


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

@dataclass
class BenchRow:
    policy: str
    prefill_median_ms: float
    prefill_p90_ms: float
    decode_median_ms: float
    decode_p90_ms: float
    prefill_macs: int
    decode_macs: int
    analytic_prefill_macs: int

    def as_row(self) -> dict:
        return dict(self.__dict__)


def summarize(samples: list[float]) -> tuple[float, float]:
    """(median, p90) in milliseconds."""
    arr = np.asarray(samples) * 1e3
    return float(np.median(arr)), float(np.percentile(arr, 90))


def format_ms(value: float) -> str:
    return f"{value:.2f} ms"


@dataclass
class _Case:
    """One policy: how to prefill (returns output, cache, layout) and how to decode a token."""

    prefill: Callable[[], tuple[ForwardOutput, KVCache, SegmentLayout]]
    decode: Callable[[np.ndarray, KVCache, SegmentLayout], ForwardOutput]
    analytic: int


def _cases(weights: Weights, tokens: np.ndarray, bank: PromptBank,
           lora: LoRAAdapter) -> dict[str, _Case]:
    model = Transformer(weights)
    lora_model = apply_lora(weights, lora)
    mc = weights.config
    b, t = tokens.shape
    p = bank[0].n_tokens
    p_all = bank.total_tokens
    dtype = weights.embedding.dtype
    single_store = build_prompt_cache(model, PromptBank([bank[0]]))
    bank_store = build_prompt_cache(model, bank)

    def fresh() -> KVCache:
        return KVCache.allocate(mc, batch=b, dtype=dtype)

    def plain(m: Transformer, policy: AttentionPolicy):
        def prefill():
            cache = fresh()
            layout = SegmentLayout.input_only(t)
            return m.forward(tokens, layout, policy, cache=cache), cache, layout
        return prefill

    def prompted(prompts, policy: AttentionPolicy):
        def prefill():
            cache = fresh()
            embeds, layout = prepend_prompts(prompts, model.embed_tokens(tokens))
            return model.forward(embeds, layout, policy, cache=cache), cache, layout
        return prefill

    def cached(store, policy: AttentionPolicy):
        def prefill():
            cache = store.to_cache(model, batch=b)
            layout = store.layout(t)
            return model.forward(tokens, layout, policy, cache=cache), cache, layout
        return prefill

    def decoder(m: Transformer, policy: AttentionPolicy):
        def decode(token, cache, layout):
            return m.forward(token, layout, policy, cache=cache)
        return decode

    dense = AttentionPolicy.dense_causal()
    single = AttentionPolicy.single_prompt()
    idp = AttentionPolicy.idp()
    concat = AttentionPolicy.naive_concat()
    return {
        "no_prompt": _Case(plain(model, dense), decoder(model, dense),
                           analytic_forward_macs(mc, b, t, t, t)),
        "single_prompt_uncached": _Case(prompted(bank[0], single), decoder(model, single),
                                        analytic_forward_macs(mc, b, p + t, p + t, t)),
        "single_prompt_cached": _Case(cached(single_store, single), decoder(model, single),
                                      analytic_forward_macs(mc, b, t, p + t, t)),
        "idp_cached": _Case(cached(bank_store, idp), decoder(model, idp),
                            analytic_forward_macs(mc, b, t, p_all + t, t)),
        "concat": _Case(prompted(bank, concat), decoder(model, concat),
                        analytic_forward_macs(mc, b, p_all + t, p_all + t, t)),
        "lora": _Case(plain(lora_model, dense), decoder(lora_model, dense),
                      analytic_forward_macs(mc, b, t, t, t, lora_rank=lora.rank)),
    }


def bench_inputs(weights: Weights, config: BenchConfig) -> tuple[np.ndarray, PromptBank, LoRAAdapter]:
    """Random input tokens, a random prompt bank and a random-B LoRA adapter."""
    rng = np.random.default_rng(config.seed)
    mc = weights.config
    tokens = rng.integers(3, mc.vocab_size, size=(config.batch_size, config.input_tokens))
    bank = PromptBank([
        SoftPrompt.init(f"p{i}", config.prompt_tokens, weights, seed=config.seed + i)
        for i in range(config.bank_size)
    ])
    lora = LoRAAdapter.init(mc, config.lora_rank, seed=config.seed)
    for b in lora.b.values():
        b.data[...] = rng.normal(0.0, 0.01, b.shape).astype(b.dtype)
    return tokens, bank, lora


def latency_bench(weights: Weights, config: BenchConfig, policies: tuple[str, ...] = POLICIES) -> list[BenchRow]:
    if config.warmup < 3:
        raise ConfigError(f"latency bench needs at least 3 warmup iterations, got {config.warmup}")
    unknown = set(policies) - set(POLICIES)
    if unknown:
        raise ConfigError(f"unknown bench policies: {sorted(unknown)}")
    weights.set_trainable(False)
    tokens, bank, lora = bench_inputs(weights, config)
    cases = _cases(weights, tokens, bank, lora)
    next_token = tokens[:, -1:]

    rows = []
    for name in policies:
        case = cases[name]
        for _ in range(config.warmup):
            case.prefill()

        prefill_times, decode_times = [], []
        for _ in range(config.iterations):
            start = time.perf_counter()
            _, cache, layout = case.prefill()
            prefill_times.append(time.perf_counter() - start)
            for _ in range(config.decode_tokens):
                if layout.total + 1 > weights.config.max_seq_len:
                    break
                layout = layout.extend_input(1)
                start = time.perf_counter()
                case.decode(next_token, cache, layout)
                decode_times.append(time.perf_counter() - start)

        with count_macs() as prefill_counter:
            _, cache, layout = case.prefill()
        decode_macs = 0
        if config.decode_tokens:
            with count_macs() as decode_counter:
                case.decode(next_token, cache, layout.extend_input(1))
            decode_macs = decode_counter.macs

        pre_med, pre_p90 = summarize(prefill_times)
        dec_med, dec_p90 = summarize(decode_times) if decode_times else (0.0, 0.0)
        row = BenchRow(name, pre_med, pre_p90, dec_med, dec_p90, prefill_counter.macs, decode_macs, case.analytic)
        logger.info("%s: prefill %s (p90 %s), decode %s, %d MACs",
                    name, format_ms(pre_med), format_ms(pre_p90), format_ms(dec_med), row.prefill_macs)
        rows.append(row)
    return rows
