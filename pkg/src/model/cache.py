"""Per-layer key/value cache with a valid-length watermark."""

from __future__ import annotations

import numpy as np

from src.errors import SequenceOverflowError, ShapeError
from src.validation.schemas import ModelConfig


class KVCache:
    """Keys and values of shape (batch, heads, capacity, d_head) per layer.

    Only positions below ``watermark`` are valid. Frozen IDP selections
    (layer -> chosen prompt per sequence) ride along for decoding.
    """

    def __init__(self, n_layers: int, n_heads: int, d_head: int, capacity: int, batch: int = 1,
                 dtype=np.float32):
        shape = (batch, n_heads, capacity, d_head)
        self.keys = [np.zeros(shape, dtype=dtype) for _ in range(n_layers)]
        self.values = [np.zeros(shape, dtype=dtype) for _ in range(n_layers)]
        self.capacity = capacity
        self.batch = batch
        self.watermark = 0
        self.selections: dict[int, np.ndarray] = {}

    @classmethod
    def allocate(cls, config: ModelConfig, capacity: int | None = None, batch: int = 1,
                 dtype=np.float32) -> KVCache:
        return cls(config.n_layers, config.n_heads, config.d_head, capacity or config.max_seq_len, batch, dtype)

    @property
    def n_layers(self) -> int:
        return len(self.keys)

    def read(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        wm = self.watermark
        return self.keys[layer][:, :, :wm], self.values[layer][:, :, :wm]

    def write(self, layer: int, keys: np.ndarray, values: np.ndarray, start: int | None = None) -> None:
        """Store (batch, heads, n, d_head) rows at ``start`` (default: the watermark)."""
        start = self.watermark if start is None else start
        n = keys.shape[2]
        if start + n > self.capacity:
            raise SequenceOverflowError(f"KV cache capacity {self.capacity} exceeded ({start} + {n})")
        if keys.shape[0] != self.batch or keys.shape != values.shape:
            raise ShapeError(f"cache write {list(keys.shape)}/{list(values.shape)} vs batch {self.batch}")
        self.keys[layer][:, :, start:start + n] = keys
        self.values[layer][:, :, start:start + n] = values

    def advance(self, n: int) -> None:
        if self.watermark + n > self.capacity:
            raise SequenceOverflowError(f"KV cache capacity {self.capacity} exceeded")
        self.watermark += n

    def freeze_selection(self, layer: int, chosen: np.ndarray) -> None:
        self.selections[layer] = np.asarray(chosen, dtype=np.int64)

    def frozen_selection(self, layer: int) -> np.ndarray | None:
        return self.selections.get(layer)

    def __repr__(self) -> str:
        return f"KVCache(layers={self.n_layers}, batch={self.batch}, watermark={self.watermark}/{self.capacity})"
