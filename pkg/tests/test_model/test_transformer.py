"""Tests for the transformer forward pass, KV cache and greedy generation."""

import numpy as np
import pytest

from src.adapters.prompts import prepend_prompts
from src.errors import LayoutError, SequenceOverflowError, ShapeError, VocabularyError
from src.idp.pipeline import generate
from src.model.cache import KVCache
from src.model.layout import SegmentLayout
from src.model.policy import AttentionPolicy
from src.model.transformer import Transformer, attention
from src.tensors.counters import count_macs
from src.tensors.ops import MASK_VALUE
from src.tensors.tensor import Tensor


class TestAttention:
    def test_rows_stochastic_and_causal(self):
        rng = np.random.default_rng(0)
        q, k, v = (Tensor(rng.normal(size=(1, 2, 4, 3))) for _ in range(3))
        mask = np.triu(np.full((4, 4), MASK_VALUE), k=1)
        ctx, weights = attention(q, k, v, mask)
        assert ctx.extents == [1, 2, 4, 3]
        np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)
        assert (weights.data[..., np.triu_indices(4, k=1)[0], np.triu_indices(4, k=1)[1]] == 0.0).all()

    def test_key_value_mismatch(self):
        q = Tensor(np.zeros((1, 1, 2, 3)))
        with pytest.raises(ShapeError):
            attention(q, Tensor(np.zeros((1, 1, 2, 3))), Tensor(np.zeros((1, 1, 3, 3))), None)


class TestForward:
    def test_unbatched_logit_shape(self, model, tokens, tiny_config):
        out = model.forward(tokens)
        assert out.logits.extents == [len(tokens), tiny_config.vocab_size]
        assert out.trace is None

    def test_batched_logit_shape(self, model, tiny_config):
        out = model(np.ones((3, 4), dtype=np.int64))
        assert out.logits.extents == [3, 4, tiny_config.vocab_size]

    def test_causal(self, model64, tokens):
        changed = tokens.copy()
        changed[-1] = 3
        a = model64.forward(tokens).logits.data
        b = model64.forward(changed).logits.data
        np.testing.assert_allclose(a[:-1], b[:-1], atol=1e-12)
        assert not np.allclose(a[-1], b[-1])

    def test_deterministic(self, model, tokens):
        np.testing.assert_array_equal(model.forward(tokens).logits.data, model.forward(tokens).logits.data)

    def test_trace_rows_stochastic(self, model64, tokens, tiny_config):
        trace = model64.forward(tokens, capture=True).trace
        assert trace.n_layers == tiny_config.n_layers
        for weights in trace.attention:
            np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)

    def test_sequence_overflow(self, model, tiny_config):
        with pytest.raises(SequenceOverflowError):
            model.forward(np.ones(tiny_config.max_seq_len + 1, dtype=np.int64))

    def test_token_outside_vocab(self, model, tiny_config):
        with pytest.raises(VocabularyError):
            model.forward(np.array([1, tiny_config.vocab_size]))

    def test_layout_mismatch(self, model, tokens):
        with pytest.raises(LayoutError):
            model.forward(tokens, SegmentLayout.input_only(len(tokens) + 1))

    def test_embedding_width_checked(self, model):
        with pytest.raises(ShapeError):
            model.forward(Tensor(np.zeros((3, 5))))

    def test_prompt_rows_produce_no_logits(self, model64, bank, tokens, tiny_config):
        embeds, layout = prepend_prompts(bank, model64.embed_tokens(tokens))
        out = model64.forward(embeds, layout, AttentionPolicy.naive_concat())
        assert out.logits.extents == [len(tokens), tiny_config.vocab_size]

    def test_prompts_only_has_no_logits(self, model64, bank):
        out = model64.forward(bank[0].embedding, SegmentLayout.prompts_only([bank[0].n_tokens]),
                              AttentionPolicy.single_prompt())
        assert out.logits is None

    def test_inter_prompt_attention_exactly_zero(self, model64, bank, tokens):
        embeds, layout = prepend_prompts(bank, model64.embed_tokens(tokens))
        trace = model64.forward(embeds, layout, AttentionPolicy.idp(), capture=True).trace
        (a0, a1), (b0, b1) = layout.prompt_spans()
        for weights in trace.pre_discard:
            assert (weights[..., b0:b1, a0:a1] == 0.0).all()
            assert (weights[..., a0:a1, b0:b1] == 0.0).all()

    def test_prompt_positions_unshifted_by_default(self, model64, bank, tokens):
        """Input tokens are positioned from 0 whatever precedes them."""
        layout = SegmentLayout.with_prompts(bank.lengths, len(tokens))
        rows = model64.position_rows(layout, 0, layout.total, np.float64)
        plain = model64.position_rows(SegmentLayout.input_only(len(tokens)), 0, len(tokens), np.float64)
        assert (rows[:layout.input_start] == 0.0).all()
        np.testing.assert_array_equal(rows[layout.input_start:], plain)


class TestKVCache:
    def test_decode_matches_full_forward(self, model64, tokens, tiny_config):
        full = model64.forward(tokens).logits.data
        cache = KVCache.allocate(tiny_config, dtype=np.float64)
        prefill = model64.forward(tokens[:3], cache=cache).logits.data
        np.testing.assert_allclose(prefill, full[:3], atol=1e-10)
        layout = SegmentLayout.input_only(3)
        for i in range(3, len(tokens)):
            layout = layout.extend_input(1)
            step = model64.forward(tokens[i:i + 1], layout, cache=cache).logits.data
            np.testing.assert_allclose(step[0], full[i], atol=1e-10)
        assert cache.watermark == len(tokens)

    def test_capacity_overflow(self, tiny_config):
        cache = KVCache.allocate(tiny_config, capacity=2)
        with pytest.raises(SequenceOverflowError):
            cache.write(0, np.zeros((1, 2, 3, 8)), np.zeros((1, 2, 3, 8)))

    def test_batch_mismatch(self, model, tiny_config):
        cache = KVCache.allocate(tiny_config, batch=2)
        with pytest.raises(ShapeError):
            model.forward(np.ones((1, 3), dtype=np.int64), cache=cache)

    def test_read_only_valid_rows(self, tiny_config):
        cache = KVCache.allocate(tiny_config)
        cache.write(0, np.ones((1, 2, 2, 8)), np.ones((1, 2, 2, 8)))
        cache.advance(2)
        keys, _ = cache.read(0)
        assert keys.shape == (1, 2, 2, 8)

    def test_decode_cheaper_than_recompute(self, model, tokens, tiny_config):
        cache = KVCache.allocate(tiny_config)
        model.forward(tokens[:-1], cache=cache)
        with count_macs() as step:
            model.forward(tokens[-1:], SegmentLayout.input_only(len(tokens)), cache=cache)
        with count_macs() as full:
            model.forward(tokens)
        assert step.macs < full.macs


class TestGenerate:
    def test_greedy_matches_recompute(self, model64, tokens):
        out = generate(model64, tokens, max_new_tokens=4)
        seq = list(tokens)
        expected = []
        for _ in range(4):
            nxt = int(np.argmax(model64.forward(np.asarray(seq)).logits.data[-1]))
            expected.append(nxt)
            seq.append(nxt)
        assert out == expected

    def test_stops_at_eos(self, model64, tokens):
        first = generate(model64, tokens, max_new_tokens=1)[0]
        assert generate(model64, tokens, max_new_tokens=5, eos_token=first) == [first]

    def test_idp_generation_with_bank(self, model64, tokens, bank):
        out = generate(model64, tokens, max_new_tokens=3, policy=AttentionPolicy.idp(), bank=bank)
        assert len(out) == 3

    def test_idp_generation_needs_bank(self, model64, tokens):
        with pytest.raises(LayoutError):
            generate(model64, tokens, max_new_tokens=2, policy=AttentionPolicy.idp())

    def test_single_prompt_generation(self, model64, tokens, bank):
        out = generate(model64, tokens, max_new_tokens=2, policy=AttentionPolicy.single_prompt(), bank=bank[0])
        assert len(out) == 2


class TestHooks:
    def test_with_hooks_keeps_weights(self, model):
        assert model.with_hooks().weights is model.weights
        assert isinstance(model.with_hooks(), Transformer)
