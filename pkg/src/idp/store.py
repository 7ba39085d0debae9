"""Pre-computed per-prompt key/value caches."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.errors import LayoutError
from src.model.cache import KVCache
from src.model.layout import SegmentLayout
from src.model.policy import AttentionPolicy
from src.model.transformer import Transformer
from src.tensors.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class PromptKVStore:
    """Keys/values of each prompt from a forward pass over that prompt alone.

    ``keys[i][l]`` has shape (heads, n_i, d_head). Entry i depends only on
    the weights and prompt i.
    """

    names: list[str]
    lengths: list[int]
    keys: list[list[np.ndarray]]
    values: list[list[np.ndarray]]

    def __len__(self) -> int:
        return len(self.names)

    @property
    def total_tokens(self) -> int:
        return sum(self.lengths)

    def layout(self, input_length: int) -> SegmentLayout:
        return SegmentLayout.with_prompts(self.lengths, input_length)

    def subset(self, indices: list[int]) -> PromptKVStore:
        return PromptKVStore(
            [self.names[i] for i in indices],
            [self.lengths[i] for i in indices],
            [self.keys[i] for i in indices],
            [self.values[i] for i in indices],
        )

    def to_cache(self, model: Transformer, batch: int = 1, capacity: int | None = None) -> KVCache:
        """A KVCache preloaded with every prompt in bank order, watermark at their end."""
        config = model.config
        cache = KVCache.allocate(config, capacity=capacity or config.max_seq_len, batch=batch,
                                 dtype=model.weights.embedding.dtype)
        if self.total_tokens > cache.capacity:
            raise LayoutError(f"prompts need {self.total_tokens} cache rows, capacity is {cache.capacity}")
        for layer in range(config.n_layers):
            keys = np.concatenate([k[layer] for k in self.keys], axis=1)
            values = np.concatenate([v[layer] for v in self.values], axis=1)
            cache.write(layer, np.broadcast_to(keys, (batch,) + keys.shape), np.broadcast_to(values, (batch,) + values.shape), 0)
        cache.advance(self.total_tokens)
        return cache


def isolated_prompt_kv(model: Transformer, embedding: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-layer K/V of one prompt run through the model on its own."""
    n = embedding.shape[0]
    cache = KVCache.allocate(model.config, capacity=n, batch=1, dtype=model.weights.embedding.dtype)
    model.forward(Tensor(embedding), SegmentLayout.prompts_only([n]), AttentionPolicy.single_prompt(), cache=cache)
    return (
        [cache.keys[layer][0, :, :n].copy() for layer in range(model.config.n_layers)],
        [cache.values[layer][0, :, :n].copy() for layer in range(model.config.n_layers)],
    )


def build_prompt_cache(model: Transformer, bank) -> PromptKVStore:
    """Run each prompt of ``bank`` in isolation and keep its keys/values."""
    names, lengths, keys, values = [], [], [], []
    for prompt in bank:
        k, v = isolated_prompt_kv(model, prompt.embedding.data)
        names.append(prompt.name)
        lengths.append(prompt.n_tokens)
        keys.append(k)
        values.append(v)
    logger.debug("Cached K/V for %d prompts (%d tokens)", len(names), sum(lengths))
    return PromptKVStore(names, lengths, keys, values)
