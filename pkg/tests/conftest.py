"""Shared pytest fixtures for the idp-lab test suite."""

import numpy as np
import pytest

from src.adapters.prompts import PromptBank, SoftPrompt
from src.harness.task import gen_corpus
from src.model.transformer import Transformer
from src.model.weights import Weights
from src.storage.database import Database
from src.storage.manifest import RunDirectory
from src.validation.schemas import (
    BenchConfig,
    ExperimentConfig,
    ModelConfig,
    RunConfig,
    TaskSpec,
    TrainConfig,
    TuneConfig,
)


@pytest.fixture
def tiny_config() -> ModelConfig:
    """Two layers, width 16, two heads: big enough for every code path."""
    return ModelConfig(d_model=16, n_heads=2, n_layers=2, d_ff=32, vocab_size=40, max_seq_len=64)


@pytest.fixture
def weights(tiny_config) -> Weights:
    return Weights.init(tiny_config, seed=0)


@pytest.fixture
def weights64(weights) -> Weights:
    """Float64 copy for tight tolerances and finite differences."""
    return weights.astype(np.float64)


@pytest.fixture
def model(weights) -> Transformer:
    return Transformer(weights)


@pytest.fixture
def model64(weights64) -> Transformer:
    return Transformer(weights64)


@pytest.fixture
def bank(weights64) -> PromptBank:
    """Two prompts of unequal length."""
    return PromptBank([
        SoftPrompt.init("a", 3, weights64, seed=1),
        SoftPrompt.init("b", 5, weights64, seed=2),
    ])


@pytest.fixture
def tokens() -> np.ndarray:
    return np.array([1, 7, 12, 30, 5])


@pytest.fixture
def task_spec() -> TaskSpec:
    return TaskSpec(
        n_domains=2,
        facts_per_domain=6,
        subjects_per_domain=3,
        relations_per_domain=2,
        objects_per_domain=5,
        n_options=3,
    )


@pytest.fixture
def corpus(task_spec):
    return gen_corpus(task_spec, seed=0, vocab_size=40)


@pytest.fixture
def run_config(tiny_config, task_spec) -> RunConfig:
    """A RunConfig whose every stage finishes in well under a second."""
    return RunConfig(
        model=tiny_config,
        task=task_spec,
        pretrain=TrainConfig(learning_rate=1e-2, steps=3, batch_size=4),
        tune=TuneConfig(learning_rate=1e-2, steps=2, batch_size=4, prompt_tokens=2, prefix_tokens=2,
                        bank_lengths=[2, 3]),
        bench=BenchConfig(warmup=3, iterations=1, input_tokens=4, prompt_tokens=8, decode_tokens=1),
        experiment=ExperimentConfig(seeds=[0], bits=[8, 3], prompt_lengths=[2], bank_length_pairs=[(2, 3)]),
    )


@pytest.fixture
def in_memory_db():
    """Return a Database instance backed by an in-memory SQLite database."""
    db = Database(":memory:")
    db.create_tables()
    return db


@pytest.fixture
def run_dir(tmp_path) -> RunDirectory:
    return RunDirectory(tmp_path / "run")
