"""Per-layer capture of a forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.idp.selection import SelectionRecord
from src.model.layout import SegmentLayout
from src.tensors.tensor import Tensor


@dataclass
class ForwardTrace:
    """Attention and residual-stream activations for every layer.

    ``attention[l]`` is the applied post-softmax weights (batch, heads,
    n_query, n_keys) and ``pre_discard[l]`` the same before IDP discard.
    Query row i is absolute position ``query_offset + i``; key column j is
    sequence position ``j - key_offset`` (prefix keys occupy the first
    ``key_offset`` columns).
    """

    layout: SegmentLayout
    query_offset: int = 0
    key_offset: int = 0
    attention: list[np.ndarray] = field(default_factory=list)
    pre_discard: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)
    selections: list[SelectionRecord] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    def mean_attention(self, layer: int) -> np.ndarray:
        """Head-averaged applied attention, (batch, n_query, n_keys)."""
        return self.attention[layer].mean(axis=1)

    def chosen(self, sequence: int = 0) -> list[int]:
        """Per-layer chosen prompt for one sequence."""
        return [r.chosen for r in self.selections if r.sequence == sequence]

    def input_query_rows(self) -> np.ndarray:
        absolute = np.arange(self.query_offset, self.query_offset + self.activations[0].shape[1])
        return np.nonzero(absolute >= self.layout.input_start)[0]

    def input_key_columns(self) -> np.ndarray:
        start = self.key_offset + self.layout.input_start
        return np.arange(start, self.key_offset + self.layout.total)


@dataclass
class ForwardOutput:
    """Logits over input rows (None when the layout has no input) and the optional trace."""

    logits: Tensor | None
    trace: ForwardTrace | None = None
