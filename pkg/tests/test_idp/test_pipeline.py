"""Tests for IDP prefill: prompt isolation, stored K/V, routing and decoding."""

import numpy as np
import pytest

from src.adapters.prompts import PromptBank, SoftPrompt, prepend_prompts
from src.errors import LayoutError
from src.idp.pipeline import concat_forward, idp_forward, single_prompt_forward
from src.idp.store import build_prompt_cache
from src.model.cache import KVCache
from src.model.layout import SegmentLayout
from src.model.policy import AttentionPolicy
from src.model.transformer import Transformer
from src.model.weights import Weights
from src.validation.schemas import SelectionConfig, SelectionScope


def _bank(weights64, lengths) -> PromptBank:
    return PromptBank([SoftPrompt.init(f"p{i}", n, weights64, seed=10 + i) for i, n in enumerate(lengths)])


class TestPromptStore:
    @pytest.mark.parametrize("lengths", [[3], [3, 5], [2, 4, 1, 3]])
    def test_joint_prompt_kv_matches_isolated(self, model64, weights64, tokens, tiny_config, lengths):
        bank = _bank(weights64, lengths)
        store = build_prompt_cache(model64, bank)
        embeds, layout = prepend_prompts(bank, model64.embed_tokens(tokens))
        cache = KVCache.allocate(tiny_config, dtype=np.float64)
        model64.forward(embeds, layout, AttentionPolicy.idp(), cache=cache)
        for i, (start, stop) in enumerate(layout.prompt_spans()):
            for layer in range(tiny_config.n_layers):
                np.testing.assert_allclose(cache.keys[layer][0, :, start:stop], store.keys[i][layer], atol=1e-6)
                np.testing.assert_allclose(cache.values[layer][0, :, start:stop], store.values[i][layer], atol=1e-6)

    @pytest.mark.parametrize("lengths", [[2], [26], [100], [2, 100], [26, 100], [2, 26, 100, 100]])
    def test_long_prompt_kv_matches_isolated(self, tiny_config, tokens, lengths):
        config = tiny_config.model_copy(update={"max_seq_len": 4 * 100 + 16})
        weights = Weights.init(config, seed=3).astype(np.float64)
        model = Transformer(weights)
        bank = _bank(weights, lengths)
        store = build_prompt_cache(model, bank)
        embeds, layout = prepend_prompts(bank, model.embed_tokens(tokens))
        cache = KVCache.allocate(config, dtype=np.float64)
        model.forward(embeds, layout, AttentionPolicy.idp(), cache=cache)
        for i, (start, stop) in enumerate(layout.prompt_spans()):
            for layer in range(config.n_layers):
                np.testing.assert_allclose(cache.keys[layer][0, :, start:stop], store.keys[i][layer],
                                           rtol=1e-6, atol=1e-9)
                np.testing.assert_allclose(cache.values[layer][0, :, start:stop], store.values[i][layer],
                                           rtol=1e-6, atol=1e-9)

    def test_prompt_kv_independent_of_neighbours(self, model64, weights64):
        first = build_prompt_cache(model64, _bank(weights64, [3, 5]))
        second = build_prompt_cache(model64, _bank(weights64, [3, 2]))
        np.testing.assert_array_equal(first.keys[0][1], second.keys[0][1])

    def test_store_matches_joint_prefill(self, model64, bank, tokens):
        joint = idp_forward(model64, tokens, bank=bank)
        stored = idp_forward(model64, tokens, bank=bank, store=build_prompt_cache(model64, bank))
        np.testing.assert_allclose(stored.logits.data, joint.logits.data, atol=1e-10)
        assert stored.trace.chosen() == joint.trace.chosen()

    def test_store_bank_mismatch(self, model64, bank, weights64, tokens):
        store = build_prompt_cache(model64, _bank(weights64, [3, 5]))
        with pytest.raises(LayoutError):
            idp_forward(model64, tokens, bank=bank, store=store)

    def test_subset_and_layout(self, model64, bank):
        store = build_prompt_cache(model64, bank)
        sub = store.subset([1])
        assert sub.names == ["b"]
        assert sub.layout(4).prompt_spans() == [(0, 5)]

    def test_store_exceeds_capacity(self, model64, bank):
        with pytest.raises(LayoutError):
            build_prompt_cache(model64, bank).to_cache(model64, capacity=4)


class TestRouting:
    def test_needs_bank_or_store(self, model64, tokens):
        with pytest.raises(LayoutError):
            idp_forward(model64, tokens)

    @pytest.mark.parametrize("index", [0, 1])
    def test_forced_selection_equals_single_prompt(self, model64, bank, tokens, index):
        routed = idp_forward(model64, tokens, bank=bank, selection=SelectionConfig.forced(index))
        alone = single_prompt_forward(model64, tokens, bank[index])
        np.testing.assert_allclose(routed.logits.data, alone.logits.data, atol=1e-5)
        assert routed.trace.chosen() == [index, index]

    def test_applied_attention_drops_unselected(self, model64, bank, tokens):
        trace = idp_forward(model64, tokens, bank=bank).trace
        spans = trace.layout.prompt_spans()
        rows = trace.input_query_rows()
        for layer, chosen in enumerate(trace.chosen()):
            applied = trace.attention[layer][0][:, rows]
            for i, (start, stop) in enumerate(spans):
                if i != chosen:
                    assert (applied[..., start:stop] == 0.0).all()
            np.testing.assert_allclose(applied.sum(axis=-1), 1.0, atol=1e-6)

    def test_bank_order_permutes_scores(self, model64, bank, tokens):
        forward = idp_forward(model64, tokens, bank=bank)
        swapped_bank = bank.permuted([1, 0])
        swapped = idp_forward(model64, tokens, bank=swapped_bank)
        for record, other in zip(forward.trace.selections, swapped.trace.selections, strict=True):
            np.testing.assert_allclose(other.scores, np.asarray(record.scores)[[1, 0]], rtol=1e-9)
            assert swapped_bank.names[other.chosen] == bank.names[record.chosen]
        np.testing.assert_allclose(swapped.logits.data, forward.logits.data, atol=1e-9)

    def test_scores_recorded_per_layer(self, model64, bank, tokens, tiny_config):
        trace = idp_forward(model64, tokens, bank=bank).trace
        assert len(trace.selections) == tiny_config.n_layers
        for record in trace.selections:
            assert len(record.scores) == 2
            assert record.chosen == int(np.argmax(record.scores))

    def test_first_layer_global_reuses_choice(self, model64, bank, tokens):
        config = SelectionConfig(scope=SelectionScope.FIRST_LAYER_GLOBAL)
        chosen = idp_forward(model64, tokens, bank=bank, selection=config).trace.chosen()
        assert len(set(chosen)) == 1

    def test_batched_sequences_route_independently(self, model64, bank, tokens):
        batch = np.stack([tokens, tokens[::-1]])
        trace = idp_forward(model64, batch, bank=bank).trace
        assert trace.chosen(0) == idp_forward(model64, tokens, bank=bank).trace.chosen()
        assert trace.chosen(1) == idp_forward(model64, tokens[::-1], bank=bank).trace.chosen()

    def test_concat_keeps_every_prompt(self, model64, bank, tokens):
        trace = concat_forward(model64, tokens, bank, capture=True).trace
        assert trace.selections == []
        np.testing.assert_array_equal(trace.attention[0], trace.pre_discard[0])


class TestFrozenSelections:
    def test_decode_reuses_prefill_choice(self, model64, bank, tokens, tiny_config):
        store = build_prompt_cache(model64, bank)
        cache = store.to_cache(model64)
        prefill = idp_forward(model64, tokens, bank=bank, store=store, cache=cache)
        assert sorted(cache.selections) == list(range(tiny_config.n_layers))
        layout = store.layout(len(tokens)).extend_input(1)
        step = model64.forward(np.array([3]), layout, AttentionPolicy.idp(), cache=cache, capture=True)
        assert step.trace.selections == []
        for layer, chosen in enumerate(prefill.trace.chosen()):
            assert int(cache.selections[layer][0]) == chosen

    def test_unfrozen_decode_rescores(self, model64, bank, tokens):
        config = SelectionConfig(freeze_after_prefill=False)
        store = build_prompt_cache(model64, bank)
        cache = store.to_cache(model64)
        idp_forward(model64, tokens, bank=bank, store=store, cache=cache, selection=config)
        assert cache.selections == {}
        layout = SegmentLayout.with_prompts(bank.lengths, len(tokens) + 1)
        step = model64.forward(np.array([3]), layout, AttentionPolicy.idp(config), cache=cache, capture=True)
        assert len(step.trace.selections) == model64.config.n_layers
