"""A model plus how it is prompted, behind one ``logits(tokens)`` call."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.adapters.prompts import PromptBank, SoftPrompt
from src.errors import ConfigError
from src.idp.pipeline import concat_forward, idp_forward, single_prompt_forward
from src.idp.store import PromptKVStore, build_prompt_cache
from src.model.trace import ForwardOutput
from src.model.transformer import Transformer
from src.validation.schemas import SelectionConfig


class RunMode(str, Enum):
    BASE = "base"
    PROMPT = "prompt"
    CONCAT = "concat"
    IDP = "idp"
    ORACLE = "oracle"


@dataclass
class ModelRunner:
    """``oracle`` picks the bank prompt whose index matches the item's domain."""

    model: Transformer
    mode: RunMode = RunMode.BASE
    prompt: SoftPrompt | None = None
    bank: PromptBank | None = None
    selection: SelectionConfig | None = None
    domain_index: dict[str, int] = field(default_factory=dict)
    _store: PromptKVStore | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.mode == RunMode.PROMPT and self.prompt is None:
            raise ConfigError("prompt mode needs a prompt")
        if self.mode in (RunMode.CONCAT, RunMode.IDP, RunMode.ORACLE) and self.bank is None:
            raise ConfigError(f"{self.mode.value} mode needs a prompt bank")

    @property
    def store(self) -> PromptKVStore:
        if self._store is None:
            self._store = build_prompt_cache(self.model, self.bank)
        return self._store

    def forward(self, tokens, domain: str | None = None, capture: bool = False) -> ForwardOutput:
        if self.mode == RunMode.BASE:
            return self.model.forward(np.asarray(tokens), capture=capture)
        if self.mode == RunMode.PROMPT:
            return single_prompt_forward(self.model, tokens, self.prompt, capture=capture)
        if self.mode == RunMode.CONCAT:
            return concat_forward(self.model, tokens, self.bank, capture=capture)
        if self.mode == RunMode.ORACLE:
            if domain not in self.domain_index:
                raise ConfigError(f"oracle routing has no prompt for domain {domain!r}")
            return single_prompt_forward(self.model, tokens, self.bank[self.domain_index[domain]], capture=capture)
        return idp_forward(self.model, tokens, self.bank, store=self.store, selection=self.selection, capture=capture)

    def logits(self, tokens, domain: str | None = None) -> np.ndarray:
        return self.forward(tokens, domain).logits.data

    def route(self, tokens) -> int:
        """Prompt chosen by IDP for one sequence: the majority over layers, lowest index on ties."""
        trace = self.forward(tokens, capture=True).trace
        counts = np.bincount(trace.chosen(0), minlength=len(self.bank))
        return int(np.argmax(counts))
