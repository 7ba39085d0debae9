"""Layer-wise cosine similarity between a baseline and a variant forward trace.

Attention is compared over shared input positions only: head-averaged
weights restricted to input query rows and input key columns, renormalized
over the kept columns. Traces with and without prompts therefore align
even though their sequence lengths differ.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.errors import ShapeError
from src.model.trace import ForwardTrace


def cosine(a, b) -> float:
    """dot(a, b) / (|a| |b|); 0.0 when either vector is all zeros."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"cosine: lengths {a.size} and {b.size} differ")
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 0.0
    return float(np.clip(a @ b / norm, -1.0, 1.0))


@dataclass
class LayerSimilarity:
    attention: list[float] = field(default_factory=list)
    activation: list[float] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {"layer": i, "attn_cos": attn, "act_cos": act}
            for i, (attn, act) in enumerate(zip(self.attention, self.activation))
        ]


def _input_attention(trace: ForwardTrace, layer: int, sequence: int) -> np.ndarray:
    mean = trace.mean_attention(layer)[sequence].astype(np.float64)
    block = mean[np.ix_(trace.input_query_rows(), trace.input_key_columns())]
    mass = block.sum(axis=-1, keepdims=True)
    return np.divide(block, mass, out=np.zeros_like(block), where=mass > 0)


def layer_similarity(baseline: ForwardTrace, variant: ForwardTrace, sequence: int = 0) -> LayerSimilarity:
    if baseline.n_layers != variant.n_layers:
        raise ShapeError(f"layer counts differ: {baseline.n_layers} vs {variant.n_layers}")
    base_rows, var_rows = baseline.input_query_rows(), variant.input_query_rows()
    if len(base_rows) != len(var_rows):
        raise ShapeError(f"input lengths differ: {len(base_rows)} vs {len(var_rows)}")

    result = LayerSimilarity()
    for layer in range(baseline.n_layers):
        base_act = baseline.activations[layer][sequence, base_rows]
        var_act = variant.activations[layer][sequence, var_rows]
        result.activation.append(float(np.mean([cosine(x, y) for x, y in zip(base_act, var_act)])))

        base_attn = _input_attention(baseline, layer, sequence)
        var_attn = _input_attention(variant, layer, sequence)
        if base_attn.shape != var_attn.shape:
            raise ShapeError(f"layer {layer}: input attention {base_attn.shape} vs {var_attn.shape}")
        result.attention.append(float(np.mean([cosine(x, y) for x, y in zip(base_attn, var_attn)])))
    return result
