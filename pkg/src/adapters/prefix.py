"""Prefix-tuning: per-layer learnable hidden states turned into extra keys/values."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from src.errors import SequenceOverflowError, ShapeError
from src.model.container import load_container, save_container
from src.model.transformer import ForwardHook, Transformer
from src.model.weights import LayerWeights, Weights
from src.tensors import ops
from src.tensors.tensor import Tensor
from src.validation.schemas import ModelConfig


class PrefixSet(ForwardHook):
    """One (t, d_model) block per layer, passed through that layer's frozen K/V projections.

    The prefix keys are prepended to every attention call; they never
    produce output positions.
    """

    def __init__(self, config: ModelConfig, states: list[Tensor]):
        if len(states) != config.n_layers:
            raise ShapeError(f"expected {config.n_layers} prefix blocks, got {len(states)}")
        for s in states:
            if s.ndim != 2 or s.shape[1] != config.d_model:
                raise ShapeError(f"prefix block must be (t, {config.d_model}), got {s.extents}")
        self.config = config
        self.states = states

    @classmethod
    def init(cls, config: ModelConfig, n_tokens: int, weights: Weights, seed: int = 0) -> PrefixSet:
        """Each layer starts from randomly drawn vocabulary embedding rows."""
        rng = np.random.default_rng(seed)
        table = weights.embedding.data
        states = []
        for i in range(config.n_layers):
            rows = rng.integers(0, table.shape[0], size=n_tokens)
            states.append(Tensor(table[rows].copy(), requires_grad=True, name=f"layers.{i}.prefix"))
        return cls(config, states)

    @property
    def n_tokens(self) -> int:
        return self.states[0].shape[0]

    def extra_kv(self, layer: int, weights: LayerWeights, batch: int, n_heads: int) -> tuple[Tensor, Tensor] | None:
        if self.n_tokens == 0:
            return None
        state = self.states[layer]
        t, d = state.shape

        def heads(x: Tensor) -> Tensor:
            x = ops.permute(ops.reshape(x, (1, t, n_heads, d // n_heads)), (0, 2, 1, 3))
            return ops.expand_leading(x, batch) if batch > 1 else x

        return heads(ops.linear(state, weights.wk)), heads(ops.linear(state, weights.wv))

    def parameters(self) -> list[Tensor]:
        return list(self.states)

    @property
    def param_count(self) -> int:
        return sum(s.numel for s in self.states)

    def astype(self, dtype) -> PrefixSet:
        return PrefixSet(self.config, [s.astype(dtype) for s in self.states])

    def save(self, path: Path | str, metadata: dict[str, str] | None = None) -> Path:
        arrays = {f"layers.{i}.prefix": s.data for i, s in enumerate(self.states)}
        meta = {"tokens": str(self.n_tokens), "config": self.config.model_dump_json(), **(metadata or {})}
        return save_container(path, arrays, "prefix", meta)

    @classmethod
    def load(cls, path: Path | str) -> PrefixSet:
        tensors, meta = load_container(path, kind="prefix")
        config = ModelConfig.model_validate_json(meta["config"])
        return cls(config, [Tensor(tensors[f"layers.{i}.prefix"], name=f"layers.{i}.prefix")
                            for i in range(config.n_layers)])


def apply_prefix(weights: Weights, prefixes: PrefixSet) -> Transformer:
    """Transformer that attends to per-layer prefix keys/values."""
    if prefixes.n_tokens > weights.config.max_seq_len:
        raise SequenceOverflowError(f"prefix of {prefixes.n_tokens} tokens exceeds max_seq_len")
    return Transformer(weights, hooks=(prefixes,))
