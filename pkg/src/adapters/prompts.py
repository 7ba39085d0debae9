"""Soft prompts, prompt banks and prompt prepending."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.errors import LayoutError, ShapeError
from src.model.container import load_container, save_container
from src.model.layout import SegmentLayout
from src.model.weights import Weights
from src.tensors import ops
from src.tensors.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class SoftPrompt:
    """A learnable (n_tokens, d_model) embedding matrix prepended to inputs."""

    name: str
    embedding: Tensor
    dataset: str = ""
    steps: int = 0

    def __post_init__(self) -> None:
        if self.embedding.ndim != 2 or self.embedding.shape[0] < 1:
            raise ShapeError(f"soft prompt {self.name!r} must be (n>=1, d), got {self.embedding.extents}")

    @classmethod
    def init(cls, name: str, n_tokens: int, weights: Weights, seed: int = 0, dataset: str = "") -> SoftPrompt:
        """Initialize from randomly drawn vocabulary embedding rows."""
        rng = np.random.default_rng(seed)
        table = weights.embedding.data
        rows = rng.integers(0, table.shape[0], size=n_tokens)
        return cls(name, Tensor(table[rows].copy(), requires_grad=True, name=name), dataset=dataset)

    @property
    def n_tokens(self) -> int:
        return self.embedding.shape[0]

    @property
    def width(self) -> int:
        return self.embedding.shape[1]

    def save(self, path: Path | str) -> Path:
        meta = {"name": self.name, "dataset": self.dataset, "steps": str(self.steps)}
        return save_container(path, {"embedding": self.embedding.data}, "prompt", meta)

    @classmethod
    def load(cls, path: Path | str) -> SoftPrompt:
        tensors, meta = load_container(path, kind="prompt")
        return cls(meta.get("name", Path(path).stem), Tensor(tensors["embedding"], name=meta.get("name", "")),
                   dataset=meta.get("dataset", ""), steps=int(meta.get("steps", 0)))


@dataclass
class PromptBank:
    """Ordered collection of independently trained soft prompts."""

    prompts: list[SoftPrompt] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.prompts:
            raise LayoutError("a prompt bank needs at least one prompt")
        names = [p.name for p in self.prompts]
        if len(set(names)) != len(names):
            raise LayoutError(f"prompt names must be unique, got {names}")
        widths = {p.width for p in self.prompts}
        if len(widths) != 1:
            raise ShapeError(f"prompt widths differ: {sorted(widths)}")

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self) -> Iterator[SoftPrompt]:
        return iter(self.prompts)

    def __getitem__(self, index: int) -> SoftPrompt:
        return self.prompts[index]

    @property
    def lengths(self) -> list[int]:
        return [p.n_tokens for p in self.prompts]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.prompts]

    @property
    def total_tokens(self) -> int:
        return sum(self.lengths)

    def permuted(self, order: Sequence[int]) -> PromptBank:
        return PromptBank([self.prompts[i] for i in order])


def _as_prompt_list(prompts) -> list[SoftPrompt]:
    if isinstance(prompts, SoftPrompt):
        return [prompts]
    return list(prompts)


def prepend_prompts(prompts: SoftPrompt | PromptBank | Sequence[SoftPrompt], inputs: Tensor) -> tuple[Tensor, SegmentLayout]:
    """Concatenate prompts (bank order) ahead of input embeddings.

    ``inputs`` is (T, d) or (B, T, d); prompts are shared across the batch.
    """
    plist = _as_prompt_list(prompts)
    if inputs.ndim not in (2, 3):
        raise ShapeError(f"input embeddings must be (T, d) or (B, T, d), got {inputs.extents}")
    n_input = inputs.shape[-2]
    if n_input < 1:
        raise LayoutError("input segment must hold at least one token")
    for p in plist:
        if p.width != inputs.shape[-1]:
            raise ShapeError(f"prompt {p.name!r} width {p.width} != input width {inputs.shape[-1]}")

    layout = SegmentLayout.with_prompts([p.n_tokens for p in plist], n_input)
    parts = [p.embedding for p in plist]
    if inputs.ndim == 3:
        batch = inputs.shape[0]
        parts = [ops.reshape(e, (1,) + e.shape) for e in parts]
        if batch > 1:
            parts = [ops.expand_leading(e, batch) for e in parts]
        return ops.concat(parts + [inputs], axis=1), layout
    return ops.concat(parts + [inputs], axis=0), layout
