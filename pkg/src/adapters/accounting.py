"""Closed-form trainable-parameter counts for every recovery method.

Formulas:
    prompt / IDP   t * d
    prefix         L * t * d
    LoRA           L * (8 * d * r + 4 * d_inter * r)

The LoRA formula is the reference one; the count implied by the shapes this
repo actually builds (A and B on Q, K, V, O, up and down) is
L * r * (10 * d + 2 * d_inter) and is reported next to it.
"""

from __future__ import annotations

from dataclasses import dataclass

from src.errors import ConfigError
from src.validation.schemas import AdapterKind

# Reference 7B-class dimensions and the sizes reported for them.
REFERENCE_D_MODEL = 4096
REFERENCE_N_LAYERS = 32
REFERENCE_D_INTER = 11008
TRAINING_TOKEN_BUDGET = 40_960_000

REFERENCE_REPORTED = {
    ("prompt", 26): "0.1M", ("prompt", 50): "0.2M", ("prompt", 100): "0.4M",
    ("prefix", 26): "3.1M", ("prefix", 50): "6.5M", ("prefix", 100): "13.1M",
    ("lora", 2): "4.4M", ("lora", 3): "6.7M", ("lora", 4): "8.9M",
    ("idp", 150): "0.6M",
}


@dataclass(frozen=True)
class ParamReport:
    kind: AdapterKind
    setting: str
    count: int
    shape_exact: int | None = None

    @property
    def millions(self) -> str:
        return round_millions(self.count)

    def as_row(self) -> dict:
        return {
            "method": self.kind.value,
            "setting": self.setting,
            "params": self.count,
            "millions": self.millions,
            "shape_exact": self.shape_exact if self.shape_exact is not None else "",
        }


def round_millions(count: int) -> str:
    """Floor to one decimal place of millions: 6,553,600 -> '6.5M'."""
    tenths = count // 100_000
    return f"{tenths // 10}.{tenths % 10}M"


def count_params(
    kind: AdapterKind | str,
    d_model: int,
    n_layers: int | None = None,
    tokens: int | None = None,
    rank: int | None = None,
    d_inter: int | None = None,
) -> ParamReport:
    try:
        kind = AdapterKind(kind)
    except ValueError as e:
        raise ConfigError(f"unknown adapter kind {kind!r}") from e

    def need(value, label):
        if value is None or value < 1:
            raise ConfigError(f"{kind.value} accounting needs a positive {label}")
        return value

    d = need(d_model, "d_model")
    if kind in (AdapterKind.PROMPT, AdapterKind.IDP):
        t = need(tokens, "token count")
        return ParamReport(kind, f"t={t}", t * d)
    if kind == AdapterKind.PREFIX:
        t = need(tokens, "token count")
        layers = need(n_layers, "layer count")
        return ParamReport(kind, f"t={t}", layers * t * d)
    r = need(rank, "rank")
    layers = need(n_layers, "layer count")
    inter = need(d_inter, "d_inter")
    return ParamReport(
        kind,
        f"r={r}",
        layers * (8 * d * r + 4 * inter * r),
        shape_exact=layers * r * (10 * d + 2 * inter),
    )


def bank_params(lengths: list[int], d_model: int) -> int:
    """An IDP bank costs exactly the sum of its prompts."""
    return sum(count_params(AdapterKind.PROMPT, d_model, tokens=n).count for n in lengths)


def reference_table() -> list[dict]:
    """Reported reference-scale sizes next to the formula counts."""
    rows = []
    for (kind, setting), reported in REFERENCE_REPORTED.items():
        if kind == "lora":
            report = count_params(kind, REFERENCE_D_MODEL, REFERENCE_N_LAYERS, rank=setting, d_inter=REFERENCE_D_INTER)
        else:
            report = count_params(kind, REFERENCE_D_MODEL, REFERENCE_N_LAYERS, tokens=setting)
        row = report.as_row()
        row["reported"] = reported
        row["note"] = "" if report.millions == reported else "formula and reported value disagree"
        rows.append(row)
    return rows
