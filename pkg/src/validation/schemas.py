"""Pydantic v2 schemas for every idp-lab configuration surface.

These schemas are the canonical representation of run configuration.
They validate YAML documents at load time and are the contract between
pipeline stages (gen-data -> pretrain -> compress -> tune -> eval).
"""

from __future__ import annotations

import hashlib
import json
from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

# ---------------------------------------------------------------------------
# Enums
# ---------------------------------------------------------------------------


class SelectionScope(str, Enum):
    PER_LAYER = "per_layer"
    FIRST_LAYER_GLOBAL = "first_layer_global"
    FORCED = "forced"


class AdapterKind(str, Enum):
    PROMPT = "prompt"
    IDP = "idp"
    PREFIX = "prefix"
    LORA = "lora"


class Granularity(str, Enum):
    PER_OUTPUT_CHANNEL = "per_output_channel"


class PruneScope(str, Enum):
    PER_MATRIX = "per_matrix"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


class ModelConfig(_Strict):
    """Architecture hyperparameters of the toy decoder-only transformer."""

    d_model: int = Field(default=128, ge=1, description="Embedding width (e)")
    n_heads: int = Field(default=4, ge=1)
    n_layers: int = Field(default=4, ge=1, description="Number of layers (L)")
    d_ff: int = Field(default=512, ge=1, description="Feed-forward width (d_inter)")
    vocab_size: int = Field(default=512, ge=1)
    max_seq_len: int = Field(default=256, ge=1)
    seed: int = 0
    norm_eps: float = Field(default=1e-6, gt=0.0)
    position_prompts: bool = Field(
        default=False,
        description="Give prompt tokens positions (ablation). Off: only input tokens are positioned, from 0.",
    )

    @model_validator(mode="after")
    def heads_divide_width(self) -> ModelConfig:
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


# ---------------------------------------------------------------------------
# Prompt selection
# ---------------------------------------------------------------------------


class SelectionConfig(_Strict):
    """How IDP picks one prompt out of the bank."""

    scope: SelectionScope = SelectionScope.PER_LAYER
    forced_index: int | None = Field(default=None, ge=0)
    tie_rule: Literal["lowest_index"] = "lowest_index"
    renormalize: bool = True
    freeze_after_prefill: bool = True

    @model_validator(mode="after")
    def forced_needs_index(self) -> SelectionConfig:
        if self.scope == SelectionScope.FORCED and self.forced_index is None:
            raise ValueError("scope 'forced' requires forced_index")
        return self

    @classmethod
    def forced(cls, index: int, renormalize: bool = True) -> SelectionConfig:
        return cls(scope=SelectionScope.FORCED, forced_index=index, renormalize=renormalize)


# ---------------------------------------------------------------------------
# Compression
# ---------------------------------------------------------------------------


class QuantSpec(_Strict):
    bits: int = Field(default=3, ge=2, le=8)
    granularity: Granularity = Granularity.PER_OUTPUT_CHANNEL
    symmetric: Literal[True] = True


class PruneSpec(_Strict):
    sparsity: float = Field(default=0.5, ge=0.0, lt=1.0)
    scope: PruneScope = PruneScope.PER_MATRIX


# ---------------------------------------------------------------------------
# Task and training
# ---------------------------------------------------------------------------


class TaskSpec(_Strict):
    """Synthetic multi-domain fact-recall task."""

    n_domains: int = Field(default=2, ge=1)
    facts_per_domain: int = Field(default=50, ge=1)
    subjects_per_domain: int = Field(default=25, ge=1)
    relations_per_domain: int = Field(default=4, ge=1)
    objects_per_domain: int = Field(default=20, ge=2)
    n_options: int = Field(default=4, ge=2)
    reserved_tokens: int = Field(default=3, ge=3, description="PAD, BOS, EOS")


class TrainConfig(_Strict):
    """AdamW with decoupled weight decay."""

    optimizer: Literal["adamw"] = "adamw"
    learning_rate: float = Field(default=2e-4, gt=0.0)
    weight_decay: float = Field(default=1e-5, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    steps: int = Field(default=200, ge=0)
    batch_size: int = Field(default=16, ge=1)
    seed: int = 0
    log_every: int = Field(default=50, ge=1)


class TuneConfig(TrainConfig):
    """Adapter tuning: which adapter and its size."""

    kind: AdapterKind = AdapterKind.PROMPT
    prompt_tokens: int = Field(default=26, ge=1)
    prefix_tokens: int = Field(default=26, ge=0)
    lora_rank: int = Field(default=2, ge=1)
    lora_scale: float = 1.0
    bank_lengths: list[int] = Field(default_factory=lambda: [26, 100], min_length=1)


# ---------------------------------------------------------------------------
# Evaluation and benchmarking
# ---------------------------------------------------------------------------


class EvalConfig(_Strict):
    length_normalize: bool = False
    workers: int = Field(default=1, ge=1)


class BenchConfig(_Strict):
    warmup: int = Field(default=3, ge=0)
    iterations: int = Field(default=20, ge=1)
    batch_size: int = Field(default=1, ge=1)
    input_tokens: int = Field(default=8, ge=1)
    prompt_tokens: int = Field(default=32, ge=1)
    bank_size: int = Field(default=2, ge=1)
    decode_tokens: int = Field(default=8, ge=0)
    lora_rank: int = Field(default=2, ge=1)
    seed: int = 0


class ExperimentConfig(_Strict):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    bits: list[int] = Field(default_factory=lambda: [8, 4, 3, 2])
    prompt_lengths: list[int] = Field(default_factory=lambda: [4, 8, 16, 26])
    bank_length_pairs: list[tuple[int, int]] = Field(default_factory=lambda: [(4, 8), (8, 16), (26, 100)])


# ---------------------------------------------------------------------------
# Whole run
# ---------------------------------------------------------------------------


class RunConfig(_Strict):
    """Top-level configuration document (config/*.yaml)."""

    model: ModelConfig = Field(default_factory=ModelConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)
    pretrain: TrainConfig = Field(default_factory=lambda: TrainConfig(learning_rate=3e-3, steps=1500))
    tune: TuneConfig = Field(default_factory=TuneConfig)
    quant: QuantSpec = Field(default_factory=QuantSpec)
    prune: PruneSpec = Field(default_factory=PruneSpec)
    selection: SelectionConfig = Field(default_factory=SelectionConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON dump."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
