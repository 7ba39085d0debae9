"""Parameter set of the toy transformer."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from src.errors import ShapeError
from src.tensors.tensor import Tensor
from src.validation.schemas import ModelConfig

PROJECTIONS = ("wq", "wk", "wv", "wo", "w_up", "w_down")
GAINS = ("attn_gain", "ffn_gain")


@dataclass
class LayerWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w_up: Tensor
    w_down: Tensor
    attn_gain: Tensor
    ffn_gain: Tensor

    def get(self, name: str) -> Tensor:
        return getattr(self, name)


@dataclass
class Weights:
    """Token embedding (tied output head), per-layer blocks and final norm gain."""

    config: ModelConfig
    embedding: Tensor
    layers: list[LayerWeights]
    final_gain: Tensor

    @classmethod
    def init(cls, config: ModelConfig, seed: int | None = None) -> Weights:
        rng = np.random.default_rng(config.seed if seed is None else seed)
        d, f = config.d_model, config.d_ff

        def normal(shape, std):
            return rng.normal(0.0, std, size=shape).astype(np.float32)

        resid_std = 0.02 / np.sqrt(2 * config.n_layers)
        layers = []
        for i in range(config.n_layers):
            layers.append(LayerWeights(
                wq=Tensor(normal((d, d), d**-0.5), name=f"layers.{i}.wq"),
                wk=Tensor(normal((d, d), d**-0.5), name=f"layers.{i}.wk"),
                wv=Tensor(normal((d, d), d**-0.5), name=f"layers.{i}.wv"),
                wo=Tensor(normal((d, d), resid_std), name=f"layers.{i}.wo"),
                w_up=Tensor(normal((d, f), d**-0.5), name=f"layers.{i}.w_up"),
                w_down=Tensor(normal((f, d), resid_std), name=f"layers.{i}.w_down"),
                attn_gain=Tensor(np.ones(d, dtype=np.float32), name=f"layers.{i}.attn_gain"),
                ffn_gain=Tensor(np.ones(d, dtype=np.float32), name=f"layers.{i}.ffn_gain"),
            ))
        return cls(
            config=config,
            embedding=Tensor(normal((config.vocab_size, d), 0.02 * 5), name="embedding"),
            layers=layers,
            final_gain=Tensor(np.ones(d, dtype=np.float32), name="final_gain"),
        )

    # ------------------------------------------------------------------
    # Named access
    # ------------------------------------------------------------------

    def named_tensors(self) -> dict[str, Tensor]:
        named = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            for name in PROJECTIONS + GAINS:
                named[f"layers.{i}.{name}"] = layer.get(name)
        named["final_gain"] = self.final_gain
        return named

    @classmethod
    def from_named(cls, config: ModelConfig, tensors: dict[str, np.ndarray]) -> Weights:
        def take(name: str) -> Tensor:
            if name not in tensors:
                raise ShapeError(f"missing tensor {name!r}")
            return Tensor(tensors[name], name=name)

        layers = [
            LayerWeights(**{name: take(f"layers.{i}.{name}") for name in PROJECTIONS + GAINS})
            for i in range(config.n_layers)
        ]
        weights = cls(config, take("embedding"), layers, take("final_gain"))
        weights.validate()
        return weights

    def validate(self) -> None:
        """Check every extent against the config."""
        c = self.config
        d, f = c.d_model, c.d_ff
        expected = {"embedding": (c.vocab_size, d), "final_gain": (d,)}
        for i in range(c.n_layers):
            for name in ("wq", "wk", "wv", "wo"):
                expected[f"layers.{i}.{name}"] = (d, d)
            expected[f"layers.{i}.w_up"] = (d, f)
            expected[f"layers.{i}.w_down"] = (f, d)
            expected[f"layers.{i}.attn_gain"] = (d,)
            expected[f"layers.{i}.ffn_gain"] = (d,)
        named = self.named_tensors()
        if len(self.layers) != c.n_layers:
            raise ShapeError(f"expected {c.n_layers} layers, got {len(self.layers)}")
        for name, shape in expected.items():
            if named[name].shape != shape:
                raise ShapeError(f"{name}: expected {list(shape)}, got {named[name].extents}")

    # ------------------------------------------------------------------
    # Copies and flags
    # ------------------------------------------------------------------

    def map(self, fn) -> Weights:
        """New Weights with ``fn(name, tensor) -> Tensor`` applied to every tensor."""
        named = {name: fn(name, t) for name, t in self.named_tensors().items()}
        layers = [
            LayerWeights(**{name: named[f"layers.{i}.{name}"] for name in PROJECTIONS + GAINS})
            for i in range(self.config.n_layers)
        ]
        return Weights(self.config, named["embedding"], layers, named["final_gain"])

    def copy(self) -> Weights:
        return self.map(lambda name, t: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=name))

    def astype(self, dtype) -> Weights:
        return self.map(lambda name, t: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=name))

    def set_trainable(self, trainable: bool) -> Weights:
        for t in self.named_tensors().values():
            t.requires_grad = trainable
        return self

    def trainable_tensors(self) -> list[Tensor]:
        return [t for t in self.named_tensors().values() if t.requires_grad]

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self.named_tensors().items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def position_signal(n_positions: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal absolute position table, shape (n_positions, d_model)."""
    pos = np.arange(n_positions)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)
