"""Tests for prompt scoring, selection and discard."""

import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import SelectionError
from src.idp.selection import (
    SelectionRecord,
    discard_and_renormalize,
    discard_keep,
    input_rows,
    score_prompts,
    select,
)
from src.model.layout import SegmentLayout
from src.tensors.tensor import Tensor
from src.validation.schemas import SelectionConfig, SelectionScope


@pytest.fixture
def layout() -> SegmentLayout:
    """Prompts of 2 and 1 tokens ahead of a 2-token input."""
    return SegmentLayout.with_prompts([2, 1], 2)


class TestScorePrompts:
    def test_mean_over_input_rows_and_prompt_columns(self, layout):
        attention = np.zeros((5, 5))
        attention[3:, 0:2] = 0.1
        attention[3:, 2] = 0.4
        attention[0:3, :] = 9.0
        np.testing.assert_allclose(score_prompts(attention, layout), [0.1, 0.4])

    def test_heads_averaged(self, layout):
        attention = np.zeros((2, 5, 5))
        attention[0, 3:, 2] = 0.6
        attention[1, 3:, 2] = 0.2
        assert score_prompts(attention, layout)[1] == pytest.approx(0.4)

    def test_query_offset(self, layout):
        attention = np.zeros((1, 5))
        attention[0, 0:2] = 0.3
        scores = score_prompts(attention, layout, query_offset=4)
        assert scores[0] == pytest.approx(0.3)

    def test_key_offset_skips_prefix_columns(self, layout):
        attention = np.zeros((5, 7))
        attention[3:, 0:2] = 0.5
        attention[3:, 4] = 0.2
        np.testing.assert_allclose(score_prompts(attention, layout, key_offset=2), [0.0, 0.2])

    def test_no_input_rows(self, layout):
        with pytest.raises(SelectionError):
            score_prompts(np.zeros((2, 5)), layout)

    def test_layout_without_input(self):
        with pytest.raises(SelectionError):
            input_rows(SegmentLayout.prompts_only([2]), 2)


class TestSelect:
    def test_argmax(self):
        assert select([0.1, 0.5, 0.2]) == 1

    def test_ties_go_to_lowest_index(self):
        assert select([0.3, 0.3, 0.1]) == 0
        assert select([0.1, 0.3, 0.3]) == 1

    def test_forced_bypasses_scores(self):
        assert select([0.9, 0.1], SelectionConfig.forced(1)) == 1

    def test_forced_out_of_range(self):
        with pytest.raises(SelectionError):
            select([0.9, 0.1], SelectionConfig.forced(2))

    def test_empty_bank(self):
        with pytest.raises(SelectionError):
            select([])

    def test_forced_scope_needs_index(self):
        with pytest.raises(ValidationError):
            SelectionConfig(scope=SelectionScope.FORCED)


class TestDiscard:
    def test_keep_mask(self, layout):
        keep = discard_keep(layout, 0, 5, 5)
        assert (keep[3:, 2] == 0.0).all()
        assert keep.sum() == 25 - 2
        keep = discard_keep(layout, 1, 5, 5)
        assert (keep[3:, 0:2] == 0.0).all()
        assert (keep[:3] == 1.0).all()

    def test_selected_out_of_range(self, layout):
        with pytest.raises(SelectionError):
            discard_keep(layout, 2, 5, 5)

    def test_renormalized_rows(self, layout):
        weights = np.full((5, 5), 0.2)
        out = discard_and_renormalize(weights, layout, 1).data
        np.testing.assert_allclose(out[3:].sum(axis=-1), 1.0)
        assert (out[3:, 0:2] == 0.0).all()
        np.testing.assert_allclose(out[:3], 0.2)

    def test_without_renormalize(self, layout):
        out = discard_and_renormalize(np.full((5, 5), 0.2), layout, 0, renormalize=False).data
        np.testing.assert_allclose(out[4], [0.2, 0.2, 0.0, 0.2, 0.2])

    def test_single_prompt_is_noop(self):
        weights = Tensor(np.full((3, 3), 1 / 3))
        assert discard_and_renormalize(weights, SegmentLayout.with_prompts([1], 2), 0) is weights

    @pytest.mark.parametrize(
        ("renormalize", "expected"),
        [(True, [0.0, 0.375, 0.625]), (False, [0.0, 0.3, 0.5])],
    )
    def test_worked_row(self, renormalize, expected):
        # one query row of input; keys: P1, P2, X
        row = np.array([[0.2, 0.3, 0.5]])
        layout = SegmentLayout.with_prompts([1, 1], 1)
        out = discard_and_renormalize(row, layout, 1, renormalize=renormalize, query_offset=2).data
        np.testing.assert_allclose(out[0], expected, atol=1e-12)


class TestSelectionRecord:
    def test_to_dict(self):
        record = SelectionRecord(sequence=0, layer=1, scores=(0.25, 0.75), chosen=1)
        assert record.to_dict() == {"sequence": 0, "layer": 1, "scores": [0.25, 0.75], "chosen": 1}
