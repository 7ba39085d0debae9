"""Multiply-accumulate instrumentation.

Matrix-product primitives report their exact MAC count to every counter
opened with ``count_macs()`` in the current context.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterator
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field

_COUNTERS: ContextVar[tuple[MacCounter, ...]] = ContextVar("mac_counters", default=())


@dataclass
class MacCounter:
    macs: int = 0
    by_op: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def add(self, op: str, macs: int) -> None:
        self.macs += macs
        self.by_op[op] += macs


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    token = _COUNTERS.set(_COUNTERS.get() + (counter,))
    try:
        yield counter
    finally:
        _COUNTERS.reset(token)


def record_macs(op: str, macs: int) -> None:
    for counter in _COUNTERS.get():
        counter.add(op, macs)
