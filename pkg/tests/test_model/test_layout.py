"""Tests for segment layouts, masks and policies."""

import numpy as np
import pytest

from src.errors import LayoutError
from src.model.layout import Segment, SegmentKind, SegmentLayout
from src.model.masking import build_mask
from src.model.policy import AttentionPolicy, PolicyKind
from src.tensors.ops import MASK_VALUE
from src.validation.schemas import SelectionScope


class TestSegmentLayout:
    def test_with_prompts_derived_values(self):
        layout = SegmentLayout.with_prompts([2, 3], 4)
        assert layout.total == 9
        assert layout.num_prompts == 2
        assert layout.input_start == 5
        assert layout.input_length == 4
        assert layout.prompt_spans() == [(0, 2), (2, 5)]
        assert layout.segment_ids() == [0, 0, 1, 1, 1, -1, -1, -1, -1]

    def test_input_only(self):
        layout = SegmentLayout.input_only(3)
        assert layout.has_input
        assert layout.num_prompts == 0
        assert layout.input_start == 0

    def test_prompts_only_has_no_input(self):
        layout = SegmentLayout.prompts_only([4])
        assert not layout.has_input
        assert layout.input_length == 0

    def test_zero_length_segment_rejected(self):
        with pytest.raises(LayoutError):
            SegmentLayout.with_prompts([2, 0], 3)

    def test_two_inputs_rejected(self):
        with pytest.raises(LayoutError):
            SegmentLayout((Segment(SegmentKind.INPUT, 2), Segment(SegmentKind.INPUT, 2)))

    def test_prompt_after_input_rejected(self):
        with pytest.raises(LayoutError):
            SegmentLayout((Segment(SegmentKind.INPUT, 2), Segment(SegmentKind.PROMPT, 2, 0)))

    def test_extend_input(self):
        layout = SegmentLayout.with_prompts([2], 3).extend_input(1)
        assert layout.input_length == 4
        assert layout.prompt_spans() == [(0, 2)]

    def test_extend_prompts_only_adds_input(self):
        layout = SegmentLayout.prompts_only([2]).extend_input(1)
        assert layout.has_input
        assert layout.total == 3


class TestBuildMask:
    def test_dense_is_causal(self):
        mask = build_mask(SegmentLayout.input_only(4), AttentionPolicy.dense_causal())
        assert mask.dtype == np.float32
        assert (mask[np.triu_indices(4, k=1)] == MASK_VALUE).all()
        assert (mask[np.tril_indices(4)] == 0.0).all()

    def test_idp_blocks_inter_prompt(self):
        layout = SegmentLayout.with_prompts([2, 3], 2)
        mask = build_mask(layout, AttentionPolicy.idp())
        assert (mask[2:5, 0:2] == MASK_VALUE).all()
        assert (mask[5:, :6] == 0.0).all()
        assert mask[0, 1] == MASK_VALUE

    def test_concat_is_plain_causal(self):
        layout = SegmentLayout.with_prompts([2, 3], 2)
        concat = build_mask(layout, AttentionPolicy.naive_concat())
        dense = build_mask(SegmentLayout.input_only(7), AttentionPolicy.dense_causal())
        np.testing.assert_array_equal(concat, dense)

    def test_single_prompt_is_causal(self):
        layout = SegmentLayout.with_prompts([3], 2)
        mask = build_mask(layout, AttentionPolicy.single_prompt())
        np.testing.assert_array_equal(mask, build_mask(SegmentLayout.input_only(5), AttentionPolicy.dense_causal()))


class TestAttentionPolicy:
    def test_idp_gets_default_selection(self):
        policy = AttentionPolicy(kind=PolicyKind.IDP)
        assert policy.selection is not None
        assert policy.selection.scope == SelectionScope.PER_LAYER

    def test_isolation(self):
        assert AttentionPolicy.idp().isolates_prompts
        assert AttentionPolicy.single_prompt().isolates_prompts
        assert not AttentionPolicy.naive_concat().isolates_prompts
        assert not AttentionPolicy.dense_causal().isolates_prompts
