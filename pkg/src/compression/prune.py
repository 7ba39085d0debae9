"""Unstructured magnitude pruning."""

from __future__ import annotations

import math

import numpy as np

from src.compression.quantize import MatrixReport, error_report
from src.errors import ConfigError
from src.validation.schemas import PruneSpec


def prune_magnitude(w: np.ndarray, spec: PruneSpec | float, name: str = "") -> tuple[np.ndarray, MatrixReport]:
    """Zero the floor(s * numel) smallest-|w| entries; ties go to the lower flat index."""
    if not isinstance(spec, PruneSpec):
        if not 0.0 <= spec < 1.0:
            raise ConfigError(f"sparsity must be in [0, 1), got {spec}")
        spec = PruneSpec(sparsity=spec)
    w = np.asarray(w)
    n_zero = math.floor(spec.sparsity * w.size)
    out = w.copy()
    if n_zero:
        order = np.argsort(np.abs(w).reshape(-1), kind="stable")
        out.reshape(-1)[order[:n_zero]] = 0
    return out, error_report(name, f"s={spec.sparsity:g}", w, out)
