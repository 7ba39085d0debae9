"""Tests for AdamW, pretraining and adapter tuning."""

import math

import numpy as np
import pytest

from src.adapters.lora import LoRAAdapter
from src.adapters.prefix import PrefixSet
from src.adapters.prompts import SoftPrompt
from src.errors import ConfigError
from src.harness.optim import AdamW
from src.harness.train import pretrain_base, run_training, sample_batch, tune_adapter, tune_bank
from src.model.weights import Weights
from src.tensors.tensor import Tensor
from src.validation.schemas import AdapterKind, TrainConfig, TuneConfig


class TestAdamW:
    def test_first_step_moves_by_learning_rate(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        AdamW([p], lr=0.1).step({p: np.array([0.5, -3.0])})
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-6)

    def test_weight_decay_is_decoupled(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        AdamW([p], lr=0.1, weight_decay=0.5).step({p: np.array([0.0])})
        np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])

    def test_missing_gradient_skips_parameter(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        q = Tensor(np.array([1.0]), requires_grad=True)
        AdamW([p, q], lr=0.1).step({p: np.array([1.0])})
        assert q.data[0] == 1.0

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
        opt = AdamW([p], lr=0.1)
        for _ in range(300):
            opt.step({p: 2 * p.data})
        assert np.abs(p.data).max() < 0.1


class TestTraining:
    def test_sample_batch_shape(self, corpus):
        batch = sample_batch(corpus.sequences(), 5, np.random.default_rng(0))
        assert batch.shape == (5, 4)
        assert batch.dtype == np.int64

    def test_no_sequences(self, run_config):
        with pytest.raises(ConfigError):
            run_training([], lambda b: None, [], run_config.pretrain, "empty")

    def test_pretrain_returns_frozen_weights(self, run_config, corpus):
        weights, result = pretrain_base(run_config.model, run_config.pretrain, corpus)
        assert weights.trainable_tensors() == []
        assert len(result.losses) == run_config.pretrain.steps
        assert all(math.isfinite(loss) for loss in result.losses)

    def test_pretrain_deterministic(self, run_config, corpus):
        first, _ = pretrain_base(run_config.model, run_config.pretrain, corpus)
        second, _ = pretrain_base(run_config.model, run_config.pretrain, corpus)
        assert first.digest() == second.digest()

    def test_pretrain_reduces_loss(self, run_config, corpus):
        config = TrainConfig(learning_rate=1e-2, steps=40, batch_size=8)
        _, result = pretrain_base(run_config.model, config, corpus)
        assert result.final_loss < result.first_loss


class TestTuning:
    @pytest.mark.parametrize("kind", [AdapterKind.PROMPT, AdapterKind.PREFIX, AdapterKind.LORA])
    def test_base_weights_untouched(self, weights, corpus, run_config, kind):
        digest = weights.digest()
        result = tune_adapter(kind, weights, corpus, run_config.tune)
        assert weights.digest() == digest
        assert len(result.losses) == run_config.tune.steps
        assert result.kind == kind

    def test_adapter_types_and_frozen_after(self, weights, corpus, run_config):
        prompt = tune_adapter("prompt", weights, corpus, run_config.tune, domain="d0").adapter
        assert isinstance(prompt, SoftPrompt)
        assert (prompt.name, prompt.dataset, prompt.n_tokens) == ("d0", "d0", run_config.tune.prompt_tokens)
        assert not prompt.embedding.requires_grad
        assert isinstance(tune_adapter("prefix", weights, corpus, run_config.tune).adapter, PrefixSet)
        lora = tune_adapter("lora", weights, corpus, run_config.tune).adapter
        assert isinstance(lora, LoRAAdapter)
        assert not any(p.requires_grad for p in lora.parameters())

    def test_zero_steps_keeps_initialization(self, weights, corpus, run_config):
        config = run_config.tune.model_copy(update={"steps": 0})
        result = tune_adapter("prompt", weights, corpus, config)
        fresh = SoftPrompt.init("prompt", config.prompt_tokens, weights, seed=config.seed)
        np.testing.assert_array_equal(result.adapter.embedding.data, fresh.embedding.data)
        assert result.losses == []

    def test_tuning_changes_prompt(self, weights, corpus, run_config):
        result = tune_adapter("prompt", weights, corpus, run_config.tune)
        fresh = SoftPrompt.init("prompt", run_config.tune.prompt_tokens, weights, seed=run_config.tune.seed)
        assert not np.array_equal(result.adapter.embedding.data, fresh.embedding.data)

    def test_bank_per_domain(self, weights, corpus, run_config):
        bank = tune_bank(weights, corpus, run_config.tune)
        assert bank.names == corpus.domain_names
        assert bank.lengths == run_config.tune.bank_lengths

    def test_default_domain_bank_is_26_and_100(self, tiny_config, corpus):
        weights = Weights.init(tiny_config.model_copy(update={"max_seq_len": 128}), seed=0)
        bank = tune_bank(weights, corpus, TuneConfig(steps=0))
        assert bank.names == ["d0", "d1"]
        assert bank.lengths == [26, 100]

    def test_bank_domain_lengths(self, weights, corpus, run_config):
        assert tune_bank(weights, corpus, run_config.tune, lengths=[2, 3]).lengths == [2, 3]

    def test_bank_by_length(self, weights, corpus, run_config):
        bank = tune_bank(weights, corpus, run_config.tune, per_domain=False)
        assert bank.names == ["len2", "len3"]
        assert bank.lengths == [2, 3]
