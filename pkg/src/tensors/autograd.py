"""Minimal reverse-mode gradient engine.

Operations executed inside ``with GradientTrace() as trace:`` append a node
to the trace whenever one of their inputs requires a gradient. Nodes are
recorded in execution order, so walking them backwards is a reverse
topological order of the computation.

A trace belongs to exactly one training step and can be replayed once.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from contextvars import ContextVar
from dataclasses import dataclass

import numpy as np

from src.errors import TraceError
from src.tensors.tensor import Tensor

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_ACTIVE_TRACE: ContextVar[GradientTrace | None] = ContextVar("active_trace", default=None)


@dataclass(slots=True)
class TraceNode:
    """One executed operation: its output, inputs and local backward rule."""

    index: int
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward_fn: BackwardFn


class GradientTrace:
    """Ordered record of operations for one backward pass."""

    def __init__(self) -> None:
        self.nodes: list[TraceNode] = []
        self.visited: list[int] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> GradientTrace:
        self._token = _ACTIVE_TRACE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TRACE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn: BackwardFn, op: str) -> None:
        if self.consumed:
            raise TraceError("cannot record into a consumed trace")
        self.nodes.append(TraceNode(len(self.nodes), op, output, inputs, backward_fn))


def active_trace() -> GradientTrace | None:
    """Return the trace recording in the current context, if any."""
    return _ACTIVE_TRACE.get()


def backward(trace: GradientTrace, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) through ``trace``.

    Returns gradients keyed by parameter identity for every trainable leaf
    that the loss depends on. Frozen tensors receive nothing.
    """
    if trace.consumed:
        raise TraceError("trace already consumed")
    if loss.numel != 1:
        raise TraceError(f"loss must be scalar, got shape {loss.extents}")

    produced = {id(node.output) for node in trace.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for node in reversed(trace.nodes):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        trace.visited.append(node.index)
        local = node.backward_fn(upstream)
        for tensor, grad in zip(node.inputs, local):
            if grad is None or not tensor.requires_grad:
                continue
            grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad
            if key not in produced:
                leaves[key] = tensor

    trace.consumed = True
    result = {tensor: grads[key] for key, tensor in leaves.items() if key in grads}
    logger.debug("Backward visited %d/%d nodes, %d parameters", len(trace.visited), len(trace.nodes), len(result))
    return result
