"""Low-rank adapters on every attention and feed-forward projection."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from src.errors import ConfigError, ShapeError
from src.model.container import load_container, save_container
from src.model.transformer import ForwardHook, Transformer
from src.model.weights import PROJECTIONS, Weights
from src.tensors import ops
from src.tensors.tensor import Tensor
from src.validation.schemas import ModelConfig

logger = logging.getLogger(__name__)


def projection_shape(config: ModelConfig, name: str) -> tuple[int, int]:
    """(d_in, d_out) of a projection under y = x @ W."""
    d, f = config.d_model, config.d_ff
    return {"w_up": (d, f), "w_down": (f, d)}.get(name, (d, d))


class LoRAAdapter(ForwardHook):
    """Per-projection pair A (r x d_in), B (d_out x r); adds scale * B(Ax)."""

    def __init__(self, config: ModelConfig, rank: int, a: dict[str, Tensor], b: dict[str, Tensor],
                 scale: float = 1.0):
        self.config = config
        self.rank = rank
        self.a = a
        self.b = b
        self.scale = scale

    @classmethod
    def init(cls, config: ModelConfig, rank: int, seed: int = 0, scale: float = 1.0) -> LoRAAdapter:
        """B starts at zero, A at small random values."""
        rng = np.random.default_rng(seed)
        a, b = {}, {}
        for i in range(config.n_layers):
            for name in PROJECTIONS:
                d_in, d_out = projection_shape(config, name)
                if rank < 1 or rank > min(d_in, d_out):
                    raise ConfigError(f"LoRA rank {rank} outside [1, {min(d_in, d_out)}] for {name}")
                key = f"layers.{i}.{name}"
                a[key] = Tensor(rng.normal(0.0, d_in**-0.5, (rank, d_in)).astype(np.float32),
                                requires_grad=True, name=f"{key}.lora_a")
                b[key] = Tensor(np.zeros((d_out, rank), dtype=np.float32), requires_grad=True, name=f"{key}.lora_b")
        return cls(config, rank, a, b, scale)

    def projection_delta(self, layer: int, name: str, x: Tensor) -> Tensor | None:
        key = f"layers.{layer}.{name}"
        if key not in self.a:
            return None
        low = ops.linear(x, ops.transpose(self.a[key]))
        delta = ops.linear(low, ops.transpose(self.b[key]))
        return ops.scale(delta, self.scale) if self.scale != 1.0 else delta

    def parameters(self) -> list[Tensor]:
        return [t for key in self.a for t in (self.a[key], self.b[key])]

    def named_tensors(self) -> dict[str, Tensor]:
        named = {}
        for key in self.a:
            named[f"{key}.lora_a"] = self.a[key]
            named[f"{key}.lora_b"] = self.b[key]
        return named

    @property
    def param_count(self) -> int:
        return sum(t.numel for t in self.parameters())

    def astype(self, dtype) -> LoRAAdapter:
        a = {k: t.astype(dtype) for k, t in self.a.items()}
        b = {k: t.astype(dtype) for k, t in self.b.items()}
        return LoRAAdapter(self.config, self.rank, a, b, self.scale)

    def save(self, path: Path | str, metadata: dict[str, str] | None = None) -> Path:
        arrays = {name: t.data for name, t in self.named_tensors().items()}
        meta = {"rank": str(self.rank), "scale": str(self.scale), "config": self.config.model_dump_json(),
                **(metadata or {})}
        return save_container(path, arrays, "lora", meta)

    @classmethod
    def load(cls, path: Path | str) -> LoRAAdapter:
        tensors, meta = load_container(path, kind="lora")
        config = ModelConfig.model_validate_json(meta["config"])
        a, b = {}, {}
        for name, array in tensors.items():
            key, part = name.rsplit(".", 1)
            (a if part == "lora_a" else b)[key] = Tensor(array, name=name)
        return cls(config, int(meta["rank"]), a, b, float(meta.get("scale", 1.0)))


def apply_lora(weights: Weights, adapter: LoRAAdapter) -> Transformer:
    """Transformer whose targeted projections compute xW + scale * B(Ax)."""
    named = weights.named_tensors()
    for key, a in adapter.a.items():
        d_in, d_out = named[key].shape
        b = adapter.b[key]
        if a.shape != (adapter.rank, d_in) or b.shape != (d_out, adapter.rank):
            raise ShapeError(f"LoRA {key}: A {a.extents}, B {b.extents} vs weight {[d_in, d_out]}")
    return Transformer(weights, hooks=(adapter,))
