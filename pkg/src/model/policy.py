"""Attention policies: how a forward pass masks and selects among prompts."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, model_validator

from src.validation.schemas import SelectionConfig


class PolicyKind(str, Enum):
    DENSE_CAUSAL = "dense_causal"
    SINGLE_PROMPT = "single_prompt"
    NAIVE_CONCAT = "naive_concat"
    IDP = "idp"


class AttentionPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: PolicyKind = PolicyKind.DENSE_CAUSAL
    selection: SelectionConfig | None = None

    @model_validator(mode="after")
    def idp_has_selection(self) -> AttentionPolicy:
        if self.kind == PolicyKind.IDP and self.selection is None:
            object.__setattr__(self, "selection", SelectionConfig())
        return self

    @property
    def isolates_prompts(self) -> bool:
        return self.kind in (PolicyKind.IDP, PolicyKind.SINGLE_PROMPT)

    @classmethod
    def dense_causal(cls) -> AttentionPolicy:
        return cls(kind=PolicyKind.DENSE_CAUSAL)

    @classmethod
    def single_prompt(cls) -> AttentionPolicy:
        return cls(kind=PolicyKind.SINGLE_PROMPT)

    @classmethod
    def naive_concat(cls) -> AttentionPolicy:
        return cls(kind=PolicyKind.NAIVE_CONCAT)

    @classmethod
    def idp(cls, selection: SelectionConfig | None = None) -> AttentionPolicy:
        return cls(kind=PolicyKind.IDP, selection=selection or SelectionConfig())
