"""Decoder-only transformer forward pass.

Pre-norm residual blocks (norm -> attention -> add, norm -> FFN -> add),
gain-only RMS norms, tied output head. Adapters plug in through
ForwardHook: a per-projection additive delta (LoRA) and per-layer extra
key/value rows (prefix-tuning). The IDP policy scores, selects and discards
prompts inside each attention layer.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np

from src.errors import LayoutError, SequenceOverflowError, ShapeError
from src.idp.selection import SelectionRecord, choose_for_layer, discard_keep
from src.model.cache import KVCache
from src.model.layout import SegmentLayout
from src.model.masking import build_mask
from src.model.policy import AttentionPolicy, PolicyKind
from src.model.trace import ForwardOutput, ForwardTrace
from src.model.weights import LayerWeights, Weights, position_signal
from src.tensors import ops
from src.tensors.tensor import Tensor

logger = logging.getLogger(__name__)


class ForwardHook:
    """Base adapter hook; the defaults leave the model unchanged."""

    def projection_delta(self, layer: int, name: str, x: Tensor) -> Tensor | None:
        return None

    def extra_kv(self, layer: int, weights: LayerWeights, batch: int, n_heads: int) -> tuple[Tensor, Tensor] | None:
        return None


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, T, d) -> (B, H, T, d_head)."""
    b, t, d = x.shape
    return ops.permute(ops.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, T, d_head) -> (B, T, d)."""
    b, h, t, dh = x.shape
    return ops.reshape(ops.permute(x, (0, 2, 1, 3)), (b, t, h * dh))


def attention_weights(q: Tensor, k: Tensor, mask) -> Tensor:
    """softmax_rows(q kᵀ / sqrt(d_head) + mask)."""
    if q.shape[-1] != k.shape[-1] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(f"attention: q {q.extents}, k {k.extents}")
    scores = ops.scale(ops.bmatmul(q, ops.transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    return ops.softmax_rows(scores, mask)


def attention(q: Tensor, k: Tensor, v: Tensor, mask) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention. Returns (context, post-softmax weights)."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: k {k.extents}, v {v.extents}")
    weights = attention_weights(q, k, mask)
    return ops.bmatmul(weights, v), weights


class Transformer:
    """Forward engine over frozen (or trainable) Weights plus adapter hooks."""

    def __init__(self, weights: Weights, hooks: Sequence[ForwardHook] = ()):
        self.weights = weights
        self.config = weights.config
        self.hooks = tuple(hooks)
        self._positions = position_signal(self.config.max_seq_len, self.config.d_model)

    def with_hooks(self, *hooks: ForwardHook) -> Transformer:
        return Transformer(self.weights, self.hooks + hooks)

    # ------------------------------------------------------------------
    # Pieces
    # ------------------------------------------------------------------

    def project(self, layer: int, name: str, x: Tensor, w: Tensor) -> Tensor:
        out = ops.linear(x, w)
        for hook in self.hooks:
            delta = hook.projection_delta(layer, name, x)
            if delta is not None:
                out = ops.add(out, delta)
        return out

    def embed_tokens(self, tokens) -> Tensor:
        return ops.embed(np.asarray(tokens), self.weights.embedding)

    def position_rows(self, layout: SegmentLayout, start: int, n: int, dtype) -> np.ndarray:
        """Position signal for absolute positions [start, start + n).

        Input tokens are positioned from 0 at the input start; prompt tokens
        get nothing unless ``position_prompts`` is on.
        """
        out = np.zeros((n, self.config.d_model), dtype=dtype)
        absolute = np.arange(start, start + n)
        if self.config.position_prompts:
            out[:] = self._positions[absolute]
            return out
        is_input = absolute >= layout.input_start
        out[is_input] = self._positions[absolute[is_input] - layout.input_start]
        return out

    def _extra_kv(self, layer: int, lw: LayerWeights, batch: int) -> tuple[Tensor, Tensor] | None:
        extras = [kv for hook in self.hooks if (kv := hook.extra_kv(layer, lw, batch, self.config.n_heads))]
        if not extras:
            return None
        return ops.concat([k for k, _ in extras], axis=2), ops.concat([v for _, v in extras], axis=2)

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def forward(
        self,
        inputs,
        layout: SegmentLayout | None = None,
        policy: AttentionPolicy | None = None,
        cache: KVCache | None = None,
        capture: bool = False,
    ) -> ForwardOutput:
        """Run the model over token ids (T,)/(B, T) or embeddings (T, d)/(B, T, d).

        ``layout`` describes the whole sequence; with a cache, ``inputs`` hold
        only the rows after the cache watermark. Logits cover input-segment
        rows only.
        """
        policy = policy or AttentionPolicy.dense_causal()
        c = self.config

        if isinstance(inputs, Tensor):
            x = inputs
            unbatched = x.ndim == 2
            if unbatched:
                x = ops.reshape(x, (1,) + x.shape)
            if x.ndim != 3 or x.shape[-1] != c.d_model:
                raise ShapeError(f"embeddings must be (B, T, {c.d_model}), got {inputs.extents}")
        else:
            tokens = np.asarray(inputs)
            unbatched = tokens.ndim == 1
            if unbatched:
                tokens = tokens[None, :]
            x = self.embed_tokens(tokens)

        batch, n_new = x.shape[0], x.shape[1]
        start = cache.watermark if cache is not None else 0
        layout = layout or SegmentLayout.input_only(start + n_new)
        total = layout.total
        if total > c.max_seq_len:
            raise SequenceOverflowError(f"sequence length {total} exceeds max_seq_len {c.max_seq_len}")
        if start + n_new != total:
            raise LayoutError(f"layout covers {total} tokens but inputs supply {start} cached + {n_new} new")
        if cache is not None and cache.batch != batch:
            raise ShapeError(f"cache batch {cache.batch} vs input batch {batch}")

        x = ops.add(x, Tensor(self.position_rows(layout, start, n_new, x.dtype)))
        mask = build_mask(layout, policy)[start:total, :total]
        selecting = policy.kind == PolicyKind.IDP and layout.num_prompts > 0 and layout.has_input
        has_input_rows = total > layout.input_start

        trace = ForwardTrace(layout=layout, query_offset=start) if capture else None
        records: list[SelectionRecord] = []
        first_choice: list[int | None] = [None] * batch

        for i, lw in enumerate(self.weights.layers):
            h = ops.rms_norm(x, lw.attn_gain, c.norm_eps)
            q = split_heads(self.project(i, "wq", h, lw.wq), c.n_heads)
            k = split_heads(self.project(i, "wk", h, lw.wk), c.n_heads)
            v = split_heads(self.project(i, "wv", h, lw.wv), c.n_heads)

            if cache is not None:
                past_k, past_v = cache.read(i)
                cache.write(i, k.data, v.data, start)
                if start:
                    k = ops.concat([Tensor(past_k.astype(k.dtype)), k], axis=2)
                    v = ops.concat([Tensor(past_v.astype(v.dtype)), v], axis=2)

            key_offset = 0
            extra = self._extra_kv(i, lw, batch)
            layer_mask = mask
            if extra is not None:
                key_offset = extra[0].shape[2]
                k = ops.concat([extra[0], k], axis=2)
                v = ops.concat([extra[1], v], axis=2)
                layer_mask = np.concatenate([np.zeros((n_new, key_offset), dtype=mask.dtype), mask], axis=1)

            weights = attention_weights(q, k, layer_mask)
            pre_discard = weights.data

            if selecting and has_input_rows:
                weights = self._route(
                    i, weights, layout, policy, cache, start, key_offset, first_choice, records,
                )

            ctx = ops.bmatmul(weights, v)
            x = ops.add(x, self.project(i, "wo", merge_heads(ctx), lw.wo))

            h = ops.rms_norm(x, lw.ffn_gain, c.norm_eps)
            up = ops.gelu(self.project(i, "w_up", h, lw.w_up))
            x = ops.add(x, self.project(i, "w_down", up, lw.w_down))

            if trace is not None:
                trace.key_offset = key_offset
                trace.pre_discard.append(pre_discard.copy())
                trace.attention.append(weights.data.copy())
                trace.activations.append(x.data.copy())

        if cache is not None:
            cache.advance(n_new)
        if trace is not None:
            trace.selections = records

        logits = None
        if has_input_rows:
            first = max(layout.input_start - start, 0)
            h = ops.rms_norm(x, self.weights.final_gain, c.norm_eps)
            if first:
                h = ops.slice_axis(h, 1, first, n_new)
            logits = ops.linear(h, ops.transpose(self.weights.embedding))
            if unbatched:
                logits = ops.reshape(logits, logits.shape[1:])
        return ForwardOutput(logits=logits, trace=trace)

    __call__ = forward

    def _route(self, layer, weights, layout, policy, cache, start, key_offset, first_choice, records):
        """Score, select and discard prompts for every sequence in the batch."""
        config = policy.selection
        batch, _, n_query, n_keys = weights.shape
        frozen = cache.frozen_selection(layer) if cache is not None else None
        mean = weights.data.mean(axis=1)
        keep = np.empty((batch, 1, n_query, n_keys), dtype=weights.dtype)
        chosen_all = np.empty(batch, dtype=np.int64)

        for b in range(batch):
            if frozen is not None and config.freeze_after_prefill:
                chosen, scores = int(frozen[b]), None
            else:
                scores, chosen = choose_for_layer(
                    mean[b], layout, config, layer, first_choice[b], start, key_offset,
                )
                if first_choice[b] is None:
                    first_choice[b] = chosen
            chosen_all[b] = chosen
            if scores is not None:
                records.append(SelectionRecord(b, layer, tuple(float(s) for s in scores), chosen))
            keep[b, 0] = discard_keep(layout, chosen, n_query, n_keys, start, key_offset)

        if cache is not None and config.freeze_after_prefill and frozen is None:
            cache.freeze_selection(layer, chosen_all)
        return ops.discard_rows(weights, keep, config.renormalize)
