"""Differentiable tensor kernels.

Every public op checks its operand extents, produces a finite result (or
raises NonFiniteError), and records a backward rule on the active
GradientTrace when any input is trainable. Broadcasting happens only where
an op says so in its docstring.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from src.errors import MaskError, ShapeError, VocabularyError
from src.tensors.autograd import BackwardFn, active_trace
from src.tensors.counters import record_macs
from src.tensors.tensor import Tensor, check_finite

# Additive mask value standing in for -inf. It survives the row-max
# subtraction and exponentiates to exactly 0.
MASK_VALUE = -1.0e30
MASK_THRESHOLD = -1.0e29
IGNORE_INDEX = -100

_GELU_C = math.sqrt(2.0 / math.pi)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> Tensor:
    check_finite(data, op)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad:
        trace = active_trace()
        if trace is not None:
            trace.record(out, inputs, backward_fn, op)
    return out


def _unbroadcast_leading(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    return grad


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b. ``b`` may drop leading axes of ``a`` (broadcast over them)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[a.ndim - b.ndim:] != b.shape or b.ndim > a.ndim:
        raise ShapeError(f"add: {a.extents} and {b.extents} are not compatible")

    def backward_fn(g):
        return g, _unbroadcast_leading(g, b.shape)

    return _emit(a.data + b.data, (a, b), backward_fn, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.extents} vs {b.extents}")

    def backward_fn(g):
        return g * b.data, g * a.data

    return _emit(a.data * b.data, (a, b), backward_fn, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (g * factor,)

    return _emit(a.data * factor, (a,), backward_fn, "scale")


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    a = _as_tensor(a)

    def backward_fn(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(np.asarray(a.data.sum(), dtype=a.dtype), (a,), backward_fn, "total")


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = _as_tensor(x)
    d = x.data
    inner = _GELU_C * (d + 0.044715 * d**3)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def backward_fn(g):
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * d**2)
        deriv = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t**2) * dinner
        return (g * deriv,)

    return _emit(out, (x,), backward_fn, "gelu")


# ---------------------------------------------------------------------------
# Matrix products
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Plain 2-D matrix product [m×k] @ [k×n]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.extents} @ {b.extents}")
    m, k = a.shape
    n = b.shape[1]
    record_macs("matmul", m * k * n)

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(a.data @ b.data, (a, b), backward_fn, "matmul")


def linear(x: Tensor, w: Tensor) -> Tensor:
    """x[..., k] @ w[k×n]; the leading axes of ``x`` are batch axes."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: {x.extents} @ {w.extents}")
    rows = int(np.prod(x.shape[:-1]))
    record_macs("linear", rows * w.shape[0] * w.shape[1])

    def backward_fn(g):
        gx = g @ w.data.T
        gw = x.data.reshape(rows, -1).T @ g.reshape(rows, -1)
        return gx, gw

    return _emit(x.data @ w.data, (x, w), backward_fn, "linear")


def bmatmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched product a[..., m, k] @ b[..., k, n] with identical leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 3 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"bmatmul: {a.extents} @ {b.extents}")
    batch = int(np.prod(a.shape[:-2]))
    record_macs("bmatmul", batch * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def backward_fn(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _emit(a.data @ b.data, (a, b), backward_fn, "bmatmul")


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.numel:
        raise ShapeError(f"reshape: {a.extents} -> {list(shape)}")

    def backward_fn(g):
        return (g.reshape(a.shape),)

    return _emit(a.data.reshape(shape), (a,), backward_fn, "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (np.transpose(g, inverse),)

    return _emit(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), backward_fn, "permute")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise ShapeError(f"concat: {t.extents} incompatible with {ref.extents} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward_fn(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward_fn, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of extent {a.shape[axis]}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _emit(a.data[index].copy(), (a,), backward_fn, "slice")


def expand_leading(a: Tensor, n: int) -> Tensor:
    """Repeat a tensor whose first extent is 1 ``n`` times along axis 0."""
    a = _as_tensor(a)
    if a.ndim == 0 or a.shape[0] != 1:
        raise ShapeError(f"expand_leading: first extent must be 1, got {a.extents}")

    def backward_fn(g):
        return (g.sum(axis=0, keepdims=True),)

    return _emit(np.repeat(a.data, n, axis=0), (a,), backward_fn, "expand")


# ---------------------------------------------------------------------------
# Normalization, softmax and losses
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row softmax over the last axis with an optional additive mask.

    ``mask`` matches ``x`` or its trailing axes (broadcast over the leading
    ones). Entries at or below MASK_THRESHOLD, including -inf, are masked
    and come out as exact zeros.
    """
    x = _as_tensor(x)
    scores = x.data
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        if m.ndim > x.ndim or x.shape[x.ndim - m.ndim:] != m.shape:
            raise ShapeError(f"softmax_rows: mask {list(m.shape)} vs input {x.extents}")
        m = np.where(np.isneginf(m), MASK_VALUE, m)
        if np.all(m <= MASK_THRESHOLD, axis=-1).any():
            raise MaskError("softmax_rows: a row has every entry masked")
        scores = scores + m.astype(x.dtype, copy=False)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), backward_fn, "softmax")


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Gain-only RMS normalization over the last axis."""
    x, gain = _as_tensor(x), _as_tensor(gain)
    if gain.ndim != 1 or gain.shape[0] != x.shape[-1]:
        raise ShapeError(f"rms_norm: gain {gain.extents} vs input {x.extents}")
    d = x.data
    inv = 1.0 / np.sqrt((d * d).mean(axis=-1, keepdims=True) + eps)
    normed = d * inv

    def backward_fn(g):
        gn = g * gain.data
        gx = inv * gn - d * inv**3 * (gn * d).mean(axis=-1, keepdims=True)
        ggain = (g * normed).reshape(-1, d.shape[-1]).sum(axis=0)
        return gx, ggain

    return _emit(normed * gain.data, (x, gain), backward_fn, "rms_norm")


def embed(tokens, table: Tensor) -> Tensor:
    """Gather rows of ``table`` for an integer token array of any shape."""
    table = _as_tensor(table)
    idx = np.asarray(tokens)
    if not np.issubdtype(idx.dtype, np.integer):
        raise VocabularyError(f"embed: token ids must be integers, got {idx.dtype}")
    vocab = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise VocabularyError(f"embed: token id outside [0, {vocab})")

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _emit(table.data[idx], (table,), backward_fn, "embed")


def cross_entropy(logits: Tensor, targets, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood over non-ignored target positions."""
    logits = _as_tensor(logits)
    tgt = np.asarray(targets)
    if logits.shape[:-1] != tgt.shape:
        raise ShapeError(f"cross_entropy: logits {logits.extents} vs targets {list(tgt.shape)}")
    vocab = logits.shape[-1]
    flat_logits = logits.data.reshape(-1, vocab)
    flat_tgt = tgt.reshape(-1)
    keep = flat_tgt != ignore_index
    if not keep.any():
        raise ShapeError("cross_entropy: no target positions")
    picked = flat_tgt[keep]
    if picked.min() < 0 or picked.max() >= vocab:
        raise VocabularyError(f"cross_entropy: target index outside [0, {vocab})")

    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.nonzero(keep)[0]
    count = len(rows)
    loss = -log_probs[rows, picked].sum() / count

    def backward_fn(g):
        grad = np.zeros_like(flat_logits)
        probs = np.exp(log_probs[rows])
        probs[np.arange(count), picked] -= 1.0
        grad[rows] = probs / count
        return ((grad * g).reshape(logits.shape),)

    return _emit(np.asarray(loss, dtype=logits.dtype), (logits,), backward_fn, "cross_entropy")


def log_softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax over the last axis (no trace)."""
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def discard_rows(weights: Tensor, keep: np.ndarray, renormalize: bool) -> Tensor:
    """Zero attention weights where ``keep`` is 0; optionally rescale rows to sum to 1.

    ``keep`` has the shape of ``weights`` (or its trailing axes) with 0/1 entries.
    """
    weights = _as_tensor(weights)
    keep = np.broadcast_to(np.asarray(keep, dtype=weights.dtype), weights.shape)
    kept = weights.data * keep
    if not renormalize:
        def backward_fn(g):
            return (g * keep,)

        return _emit(kept, (weights,), backward_fn, "discard")

    mass = kept.sum(axis=-1, keepdims=True)
    if (mass <= 0).any():
        raise MaskError("discard_rows: a row has no remaining attention mass")
    y = kept / mass

    def backward_fn(g):
        gz = (g - (g * y).sum(axis=-1, keepdims=True)) / mass
        return (gz * keep,)

    return _emit(y, (weights,), backward_fn, "discard")
