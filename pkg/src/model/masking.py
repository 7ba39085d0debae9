"""Additive attention masks over a segment layout."""

from __future__ import annotations

import numpy as np

from src.model.layout import SegmentLayout
from src.model.policy import AttentionPolicy
from src.tensors.ops import MASK_VALUE


def build_mask(layout: SegmentLayout, policy: AttentionPolicy) -> np.ndarray:
    """Return a (tk, tk) float32 mask of 0 (allowed) and MASK_VALUE (blocked).

    Everything is causal. Under prompt-isolating policies (IDP, single
    prompt) a prompt token sees only its own segment; input tokens see every
    prompt and the causal input.
    """
    tk = layout.total
    allowed = np.tril(np.ones((tk, tk), dtype=bool))
    if policy.isolates_prompts and layout.num_prompts > 1:
        seg = np.asarray(layout.segment_ids())
        is_prompt = seg >= 0
        cross = is_prompt[:, None] & is_prompt[None, :] & (seg[:, None] != seg[None, :])
        allowed &= ~cross
    return np.where(allowed, 0.0, MASK_VALUE).astype(np.float32)
