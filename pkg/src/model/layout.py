"""Segment layout of a prompted sequence: prompt segments, then the input."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from src.errors import LayoutError


class SegmentKind(str, Enum):
    PROMPT = "prompt"
    INPUT = "input"


@dataclass(frozen=True)
class Segment:
    kind: SegmentKind
    length: int
    prompt_index: int | None = None


@dataclass(frozen=True)
class SegmentLayout:
    """Ordered segments; prompts precede the (at most one) input segment."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        seen_input = False
        for seg in self.segments:
            if seg.length < 1:
                raise LayoutError(f"segment lengths must be >= 1, got {seg.length}")
            if seg.kind == SegmentKind.INPUT:
                if seen_input:
                    raise LayoutError("a layout holds at most one input segment")
                seen_input = True
            elif seen_input:
                raise LayoutError("prompt segments must precede the input segment")

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def input_only(cls, length: int) -> SegmentLayout:
        return cls((Segment(SegmentKind.INPUT, length),))

    @classmethod
    def prompts_only(cls, lengths: list[int]) -> SegmentLayout:
        return cls(tuple(Segment(SegmentKind.PROMPT, n, i) for i, n in enumerate(lengths)))

    @classmethod
    def with_prompts(cls, lengths: list[int], input_length: int) -> SegmentLayout:
        prompts = tuple(Segment(SegmentKind.PROMPT, n, i) for i, n in enumerate(lengths))
        return cls(prompts + (Segment(SegmentKind.INPUT, input_length),))

    def extend_input(self, extra: int) -> SegmentLayout:
        """Same layout with the input segment grown by ``extra`` tokens (decoding)."""
        if not self.has_input:
            return SegmentLayout(self.segments + (Segment(SegmentKind.INPUT, extra),))
        *prompts, last = self.segments
        return SegmentLayout(tuple(prompts) + (Segment(SegmentKind.INPUT, last.length + extra),))

    # ------------------------------------------------------------------
    # Derived quantities
    # ------------------------------------------------------------------

    @property
    def total(self) -> int:
        """Combined token count tk."""
        return sum(seg.length for seg in self.segments)

    @property
    def has_input(self) -> bool:
        return any(seg.kind == SegmentKind.INPUT for seg in self.segments)

    @property
    def num_prompts(self) -> int:
        return sum(1 for seg in self.segments if seg.kind == SegmentKind.PROMPT)

    @property
    def prompt_tokens(self) -> int:
        return sum(seg.length for seg in self.segments if seg.kind == SegmentKind.PROMPT)

    @property
    def input_start(self) -> int:
        return self.prompt_tokens

    @property
    def input_length(self) -> int:
        return self.total - self.prompt_tokens

    def prompt_spans(self) -> list[tuple[int, int]]:
        """[start, stop) of each prompt segment, in bank order."""
        spans, pos = [], 0
        for seg in self.segments:
            if seg.kind == SegmentKind.PROMPT:
                spans.append((pos, pos + seg.length))
            pos += seg.length
        return spans

    def segment_ids(self) -> list[int]:
        """Per-position segment index (prompt index, or -1 for input)."""
        ids: list[int] = []
        for seg in self.segments:
            ids.extend([seg.prompt_index if seg.kind == SegmentKind.PROMPT else -1] * seg.length)
        return ids
