"""Perplexity and multiple-choice accuracy."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from src.errors import EvaluationError
from src.tensors.ops import log_softmax

logger = logging.getLogger(__name__)


class Scorer(Protocol):
    def logits(self, tokens, domain: str | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class MCItem:
    context: tuple[int, ...]
    options: tuple[tuple[int, ...], ...]
    answer: int
    domain: str = ""

    def to_dict(self) -> dict:
        return {"context": list(self.context), "options": [list(o) for o in self.options],
                "answer": self.answer, "domain": self.domain}

    @classmethod
    def from_dict(cls, data: dict) -> MCItem:
        return cls(tuple(data["context"]), tuple(tuple(o) for o in data["options"]), data["answer"],
                   data.get("domain", ""))


@dataclass
class EvalResult:
    accuracy: float
    per_domain: dict[str, float] = field(default_factory=dict)
    perplexity: float | None = None
    n_items: int = 0
    predictions: list[int] = field(default_factory=list)

    def as_row(self, label: str = "") -> dict:
        row = {"label": label, "accuracy": self.accuracy, "n_items": self.n_items,
               "perplexity": self.perplexity if self.perplexity is not None else ""}
        row.update({f"acc_{d}": a for d, a in sorted(self.per_domain.items())})
        return row


def _sequence_nll(scorer: Scorer, tokens: Sequence[int], domain: str | None = None) -> tuple[float, int]:
    tokens = np.asarray(tokens)
    if tokens.size < 2:
        return 0.0, 0
    logp = log_softmax(scorer.logits(tokens[:-1], domain).astype(np.float64))
    targets = tokens[1:]
    return float(-logp[np.arange(len(targets)), targets].sum()), len(targets)


def perplexity(scorer: Scorer, documents: Sequence[Sequence[int]], domains: Sequence[str] | None = None) -> float:
    """exp(mean NLL) over every predicted position of every document."""
    if not documents:
        raise EvaluationError("perplexity needs a nonempty corpus")
    total, count = 0.0, 0
    for i, doc in enumerate(documents):
        nll, n = _sequence_nll(scorer, doc, domains[i] if domains else None)
        total += nll
        count += n
    if count == 0:
        raise EvaluationError("no predicted positions in corpus")
    return math.exp(total / count)


def option_scores(scorer: Scorer, item: MCItem, length_normalize: bool = False) -> np.ndarray:
    """Summed log-probability of each option's tokens given the context."""
    if not item.options:
        raise EvaluationError("multiple-choice item without options")
    context = list(item.context)
    scores = []
    if all(len(o) == 1 for o in item.options):
        logp = log_softmax(scorer.logits(np.asarray(context), item.domain or None).astype(np.float64))[-1]
        return np.asarray([logp[o[0]] for o in item.options])
    for option in item.options:
        seq = np.asarray(context + list(option))
        logp = log_softmax(scorer.logits(seq[:-1], item.domain or None).astype(np.float64))
        rows = np.arange(len(context) - 1, len(seq) - 1)
        score = float(logp[rows, seq[len(context):]].sum())
        scores.append(score / len(option) if length_normalize else score)
    return np.asarray(scores)


def predict(scorer: Scorer, item: MCItem, length_normalize: bool = False) -> int:
    """Argmax option; ties go to the lowest index."""
    return int(np.argmax(option_scores(scorer, item, length_normalize)))


def mc_accuracy(scorer: Scorer, items: Sequence[MCItem], length_normalize: bool = False,
                workers: int = 1) -> EvalResult:
    if not items:
        raise EvaluationError("no multiple-choice items")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(lambda it: predict(scorer, it, length_normalize), items))
    else:
        predictions = [predict(scorer, it, length_normalize) for it in items]

    by_domain: dict[str, list[bool]] = defaultdict(list)
    correct = []
    for item, pred in zip(items, predictions):
        hit = pred == item.answer
        correct.append(hit)
        by_domain[item.domain].append(hit)
    result = EvalResult(
        accuracy=float(np.mean(correct)),
        per_domain={d: float(np.mean(v)) for d, v in sorted(by_domain.items())},
        n_items=len(items),
        predictions=predictions,
    )
    logger.debug("MC accuracy %.3f over %d items", result.accuracy, result.n_items)
    return result
