"""Tests for Pydantic configuration schemas."""

import pytest
from pydantic import ValidationError

from src.validation.schemas import (
    ModelConfig,
    PruneSpec,
    QuantSpec,
    RunConfig,
    SelectionConfig,
    SelectionScope,
    TaskSpec,
    TuneConfig,
)


class TestModelConfig:
    def test_defaults(self):
        config = ModelConfig()
        assert (config.d_model, config.n_heads, config.n_layers) == (128, 4, 4)
        assert config.d_head == 32
        assert not config.position_prompts

    def test_heads_must_divide_width(self):
        with pytest.raises(ValidationError, match="divisible"):
            ModelConfig(d_model=10, n_heads=3)

    def test_unknown_field_rejected(self):
        with pytest.raises(ValidationError):
            ModelConfig(hidden=64)

    def test_positive_sizes(self):
        with pytest.raises(ValidationError):
            ModelConfig(n_layers=0)


class TestSelectionConfig:
    def test_defaults(self):
        config = SelectionConfig()
        assert config.scope == SelectionScope.PER_LAYER
        assert config.renormalize
        assert config.freeze_after_prefill

    def test_forced_factory(self):
        config = SelectionConfig.forced(2, renormalize=False)
        assert (config.scope, config.forced_index, config.renormalize) == (SelectionScope.FORCED, 2, False)

    def test_scope_from_string(self):
        assert SelectionConfig(scope="first_layer_global").scope == SelectionScope.FIRST_LAYER_GLOBAL

    def test_tie_rule_fixed(self):
        with pytest.raises(ValidationError):
            SelectionConfig(tie_rule="random")


class TestCompressionSpecs:
    def test_quant_bounds(self):
        assert QuantSpec(bits=2).bits == 2
        with pytest.raises(ValidationError):
            QuantSpec(bits=16)

    def test_quant_is_symmetric_only(self):
        with pytest.raises(ValidationError):
            QuantSpec(symmetric=False)

    def test_sparsity_bounds(self):
        assert PruneSpec(sparsity=0.0).sparsity == 0.0
        with pytest.raises(ValidationError):
            PruneSpec(sparsity=1.0)


class TestTrainingConfigs:
    def test_tune_defaults_follow_reference_recipe(self):
        config = TuneConfig()
        assert config.learning_rate == 2e-4
        assert config.weight_decay == 1e-5
        assert config.prompt_tokens == 26
        assert config.bank_lengths == [26, 100]

    def test_task_needs_two_objects(self):
        with pytest.raises(ValidationError):
            TaskSpec(objects_per_domain=1)


class TestRunConfig:
    def test_digest_stable_and_sensitive(self):
        assert RunConfig().digest() == RunConfig().digest()
        changed = RunConfig(quant=QuantSpec(bits=4))
        assert changed.digest() != RunConfig().digest()
        assert len(changed.digest()) == 64

    def test_nested_dicts_validate(self):
        config = RunConfig.model_validate({"model": {"d_model": 32, "n_heads": 2}, "experiment": {"seeds": [1, 2]}})
        assert config.model.d_head == 16
        assert config.experiment.seeds == [1, 2]

    def test_unknown_section_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"optimizer": {}})
