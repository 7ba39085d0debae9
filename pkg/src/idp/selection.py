"""Prompt scoring, selection and discard.

Scores are the mean post-softmax attention from input query rows to each
prompt's key columns, averaged over heads. The chosen prompt is the argmax
(lowest index on ties); every other prompt's columns are then zeroed in the
input rows and, optionally, the rows are renormalized.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from src.errors import SelectionError
from src.model.layout import SegmentLayout
from src.tensors.ops import discard_rows
from src.tensors.tensor import Tensor
from src.validation.schemas import SelectionConfig, SelectionScope

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionRecord:
    """One routing decision: which prompt a sequence kept at a layer."""

    sequence: int
    layer: int
    scores: tuple[float, ...]
    chosen: int

    def to_dict(self) -> dict:
        record = asdict(self)
        record["scores"] = list(self.scores)
        return record


def input_rows(layout: SegmentLayout, n_query: int, query_offset: int = 0) -> np.ndarray:
    """Local indices of query rows that belong to the input segment."""
    if not layout.has_input:
        raise SelectionError("prompt selection needs a layout with an input segment")
    absolute = np.arange(query_offset, query_offset + n_query)
    return np.nonzero(absolute >= layout.input_start)[0]


def score_prompts(
    attention: np.ndarray,
    layout: SegmentLayout,
    query_offset: int = 0,
    key_offset: int = 0,
) -> np.ndarray:
    """Per-prompt mean input-to-prompt attention.

    ``attention`` is (..., n_query, n_keys) post-softmax weights; every leading
    axis (heads) is averaged. Query row i sits at absolute position
    ``query_offset + i``; key column j at ``j - key_offset`` (prefix keys come
    first).
    """
    attention = np.asarray(attention)
    rows = input_rows(layout, attention.shape[-2], query_offset)
    if rows.size == 0:
        raise SelectionError("no input query rows to score")
    block = attention[..., rows, :]
    scores = [
        float(block[..., key_offset + start:key_offset + stop].mean())
        for start, stop in layout.prompt_spans()
    ]
    return np.asarray(scores, dtype=np.float64)


def select(scores, config: SelectionConfig | None = None) -> int:
    """Argmax with ties to the lowest index; forced scope bypasses the scores."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise SelectionError("cannot select from an empty prompt bank")
    if config is not None and config.scope == SelectionScope.FORCED:
        if config.forced_index >= scores.size:
            raise SelectionError(f"forced index {config.forced_index} out of range for {scores.size} prompts")
        return int(config.forced_index)
    return int(np.argmax(scores))


def discard_keep(
    layout: SegmentLayout,
    selected: int,
    n_query: int,
    n_keys: int,
    query_offset: int = 0,
    key_offset: int = 0,
) -> np.ndarray:
    """0/1 mask over (n_query, n_keys): input rows lose every unselected prompt."""
    spans = layout.prompt_spans()
    if not 0 <= selected < len(spans):
        raise SelectionError(f"selected prompt {selected} out of range for {len(spans)} prompts")
    keep = np.ones((n_query, n_keys), dtype=np.float32)
    rows = input_rows(layout, n_query, query_offset)
    for i, (start, stop) in enumerate(spans):
        if i != selected:
            keep[np.ix_(rows, np.arange(key_offset + start, key_offset + stop))] = 0.0
    return keep


def discard_and_renormalize(
    weights,
    layout: SegmentLayout,
    selected: int,
    renormalize: bool = True,
    query_offset: int = 0,
    key_offset: int = 0,
) -> Tensor:
    """Drop the unselected prompts from the input rows of post-softmax weights."""
    weights = weights if isinstance(weights, Tensor) else Tensor(weights)
    if layout.num_prompts <= 1 and 0 <= selected < max(layout.num_prompts, 1):
        return weights
    keep = discard_keep(layout, selected, weights.shape[-2], weights.shape[-1], query_offset, key_offset)
    return discard_rows(weights, keep, renormalize)


def choose_for_layer(
    mean_attention: np.ndarray,
    layout: SegmentLayout,
    config: SelectionConfig,
    layer: int,
    first_layer_choice: int | None,
    query_offset: int = 0,
    key_offset: int = 0,
) -> tuple[np.ndarray, int]:
    """Scores and chosen prompt for one sequence at one layer, honoring the scope."""
    scores = score_prompts(mean_attention, layout, query_offset, key_offset)
    if config.scope == SelectionScope.FIRST_LAYER_GLOBAL and first_layer_choice is not None:
        chosen = first_layer_choice
    else:
        chosen = select(scores, config)
    logger.debug("Layer %d: scores=%s chose prompt %d", layer, np.round(scores, 4).tolist(), chosen)
    return scores, chosen
