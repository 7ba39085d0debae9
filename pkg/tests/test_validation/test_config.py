"""Tests for YAML config loading and CLI overrides."""

import pytest

from src.errors import ConfigError
from src.validation.config import CONFIG_DIR, DEFAULT_CONFIG, load_config


class TestShippedConfigs:
    def test_default(self):
        config = load_config()
        assert config.model.d_model == 128
        assert config.quant.bits == 3
        assert config.tune.prompt_tokens == 26

    def test_default_path_explicit(self):
        assert load_config(DEFAULT_CONFIG).digest() == load_config().digest()

    def test_smoke_profile_fits_vocabulary(self):
        config = load_config(CONFIG_DIR / "smoke.yaml")
        task = config.task
        needed = task.reserved_tokens + task.n_domains * (
            task.subjects_per_domain + task.relations_per_domain + task.objects_per_domain
        )
        assert needed <= config.model.vocab_size
        assert config.experiment.bank_length_pairs == [(2, 4)]


class TestOverrides:
    def test_dotted_override(self):
        config = load_config(overrides={"tune.steps": 5, "quant.bits": 4})
        assert config.tune.steps == 5
        assert config.quant.bits == 4

    def test_none_values_skipped(self):
        assert load_config(overrides={"tune.steps": None}).tune.steps == load_config().tune.steps

    def test_new_section_created(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("model:\n  d_model: 32\n  n_heads: 2\n")
        assert load_config(path, {"bench.iterations": 2}).bench.iterations == 2

    def test_override_into_scalar(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("eval: 3\n")
        with pytest.raises(ConfigError):
            load_config(path, {"eval.workers.count": 2})

    def test_invalid_override_value(self):
        with pytest.raises(ConfigError):
            load_config(overrides={"quant.bits": 12})


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.yaml")

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("model: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_top_level_not_mapping(self, tmp_path):
        path = tmp_path / "list.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path)

    def test_empty_file_uses_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config(path).model.d_model == 128

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("model:\n  width: 3\n")
        with pytest.raises(ConfigError):
            load_config(path)
