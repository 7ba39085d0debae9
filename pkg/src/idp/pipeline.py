"""End-to-end prompted forwards: IDP, naive concatenation, single prompt, and greedy decoding."""

from __future__ import annotations

import logging

import numpy as np

from src.adapters.prompts import PromptBank, SoftPrompt, prepend_prompts
from src.errors import LayoutError
from src.idp.store import PromptKVStore, build_prompt_cache
from src.model.cache import KVCache
from src.model.layout import SegmentLayout
from src.model.policy import AttentionPolicy, PolicyKind
from src.model.trace import ForwardOutput
from src.model.transformer import Transformer
from src.validation.schemas import SelectionConfig

logger = logging.getLogger(__name__)


def _check_store(bank: PromptBank | None, store: PromptKVStore) -> None:
    if bank is not None and (bank.names != store.names or bank.lengths != store.lengths):
        raise LayoutError(f"prompt store {store.names} does not match bank {bank.names}")


def single_prompt_forward(model: Transformer, tokens, prompt: SoftPrompt, capture: bool = False) -> ForwardOutput:
    """Forward with exactly one prompt prepended."""
    embeds, layout = prepend_prompts(prompt, model.embed_tokens(tokens))
    return model.forward(embeds, layout, AttentionPolicy.single_prompt(), capture=capture)


def concat_forward(model: Transformer, tokens, bank: PromptBank, capture: bool = False) -> ForwardOutput:
    """All prompts prepended with full mutual attention and no discard."""
    embeds, layout = prepend_prompts(bank, model.embed_tokens(tokens))
    return model.forward(embeds, layout, AttentionPolicy.naive_concat(), capture=capture)


def idp_forward(
    model: Transformer,
    tokens,
    bank: PromptBank | None = None,
    store: PromptKVStore | None = None,
    selection: SelectionConfig | None = None,
    capture: bool = True,
    cache: KVCache | None = None,
) -> ForwardOutput:
    """IDP prefill over ``tokens``.

    With a store, prompt keys/values come from the store and prompt positions
    are never recomputed; otherwise the prompts run jointly under the
    inter-prompt mask. Pass ``cache`` to keep decoding from the prefill.
    """
    policy = AttentionPolicy.idp(selection)
    if store is None and bank is None:
        raise LayoutError("idp_forward needs a prompt bank or a prompt store")
    if store is None and cache is None:
        embeds, layout = prepend_prompts(bank, model.embed_tokens(tokens))
        return model.forward(embeds, layout, policy, capture=capture)

    tokens = np.asarray(tokens)
    batch = 1 if tokens.ndim == 1 else tokens.shape[0]
    if store is None:
        store = build_prompt_cache(model, bank)
    _check_store(bank, store)
    if len(store) == 0:
        raise LayoutError("prompt bank must be nonempty")
    if cache is None:
        cache = store.to_cache(model, batch=batch)
    layout = store.layout(tokens.shape[-1])
    return model.forward(tokens, layout, policy, cache=cache, capture=capture)


def generate(
    model: Transformer,
    tokens,
    max_new_tokens: int,
    policy: AttentionPolicy | None = None,
    bank: PromptBank | SoftPrompt | None = None,
    store: PromptKVStore | None = None,
    eos_token: int | None = None,
) -> list[int]:
    """Greedy decoding: prefill once, then one token at a time through the KV cache."""
    policy = policy or AttentionPolicy.dense_causal()
    prompt_ids = [int(t) for t in np.asarray(tokens).reshape(-1)]
    config = model.config

    if policy.kind == PolicyKind.IDP:
        if store is None:
            if bank is None:
                raise LayoutError("IDP generation needs a prompt bank or store")
            store = build_prompt_cache(model, bank if isinstance(bank, PromptBank) else PromptBank([bank]))
        cache = store.to_cache(model)
        layout = store.layout(len(prompt_ids))
        out = model.forward(np.asarray(prompt_ids), layout, policy, cache=cache)
    elif bank is not None:
        embeds, layout = prepend_prompts(bank, model.embed_tokens(prompt_ids))
        cache = KVCache.allocate(config, dtype=model.weights.embedding.dtype)
        out = model.forward(embeds, layout, policy, cache=cache)
    else:
        layout = SegmentLayout.input_only(len(prompt_ids))
        cache = KVCache.allocate(config, dtype=model.weights.embedding.dtype)
        out = model.forward(np.asarray(prompt_ids), layout, policy, cache=cache)

    generated: list[int] = []
    for _ in range(max_new_tokens):
        next_token = int(np.argmax(out.logits.data[-1]))
        generated.append(next_token)
        if next_token == eos_token or len(generated) == max_new_tokens:
            break
        if layout.total + 1 > config.max_seq_len:
            logger.warning("Stopping generation at max_seq_len=%d", config.max_seq_len)
            break
        layout = layout.extend_input(1)
        out = model.forward(np.asarray([next_token]), layout, policy, cache=cache)
    return generated
