"""Central finite-difference gradient checking (test oracle)."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from src.errors import NonFiniteError
from src.tensors.autograd import GradientTrace, backward
from src.tensors.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter: dict[str, float] = field(default_factory=dict)
    checked_entries: int = 0


def _evaluate(f: Callable[[], Tensor]) -> float:
    value = float(f().item())
    if not np.isfinite(value):
        raise NonFiniteError("finite_diff_check: objective evaluated to a non-finite value")
    return value


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare trace gradients of ``f`` against central differences.

    ``f`` must be deterministic and close over ``params``; entries are
    perturbed in place and restored. The relative error per parameter is
    ||analytic - numeric|| / max(||analytic||, ||numeric||), over the checked
    entries. ``max_entries`` samples that many entries per parameter.
    """
    with GradientTrace() as trace:
        loss = f()
    analytic = backward(trace, loss)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_relative_error=0.0)
    for i, p in enumerate(params):
        name = p.name or f"param{i}"
        grad = analytic.get(p, np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

        numeric = np.empty(len(entries), dtype=np.float64)
        for j, idx in enumerate(entries):
            original = flat[idx]
            flat[idx] = original + step
            plus = _evaluate(f)
            flat[idx] = original - step
            minus = _evaluate(f)
            flat[idx] = original
            numeric[j] = (plus - minus) / (2.0 * step)

        picked = grad[entries].astype(np.float64)
        scale = max(np.linalg.norm(picked), np.linalg.norm(numeric), 1e-12)
        err = float(np.linalg.norm(picked - numeric) / scale)
        report.per_parameter[name] = err
        report.max_relative_error = max(report.max_relative_error, err)
        report.checked_entries += len(entries)

    logger.debug("Finite-difference check: %d entries, max rel err %.3e", report.checked_entries, report.max_relative_error)
    return report
