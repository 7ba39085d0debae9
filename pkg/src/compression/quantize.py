"""Symmetric round-to-nearest weight quantization, per output channel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.errors import ConfigError, ShapeError
from src.validation.schemas import QuantSpec


@dataclass(frozen=True)
class MatrixReport:
    """Error statistics for one compressed matrix."""

    name: str
    setting: str
    max_abs_error: float
    mse: float
    sparsity: float

    def as_row(self) -> dict:
        return {
            "matrix": self.name,
            "setting": self.setting,
            "max_abs_error": self.max_abs_error,
            "mse": self.mse,
            "sparsity": self.sparsity,
        }


def error_report(name: str, setting: str, original: np.ndarray, compressed: np.ndarray) -> MatrixReport:
    diff = original.astype(np.float64) - compressed.astype(np.float64)
    return MatrixReport(
        name=name,
        setting=setting,
        max_abs_error=float(np.abs(diff).max()) if diff.size else 0.0,
        mse=float((diff**2).mean()) if diff.size else 0.0,
        sparsity=float((compressed == 0).mean()) if compressed.size else 0.0,
    )


def channel_scales(w: np.ndarray, bits: int) -> np.ndarray:
    """max|w| / (2^(bits-1) - 1) per output channel (last axis), in float64."""
    qmax = 2 ** (bits - 1) - 1
    return np.abs(w).max(axis=0).astype(np.float64) / qmax


def quantize_rtn(w: np.ndarray, spec: QuantSpec | int, name: str = "") -> tuple[np.ndarray, MatrixReport]:
    """Quantize then dequantize ``w`` (d_in, d_out) column by column.

    Zero columns keep scale 0 and stay zero. Rounding is half-to-even.
    """
    if isinstance(spec, int):
        if not 2 <= spec <= 8:
            raise ConfigError(f"bits must be in [2, 8], got {spec}")
        spec = QuantSpec(bits=spec)
    w = np.asarray(w)
    if w.size == 0:
        raise ShapeError("cannot quantize an empty matrix")
    matrix = w.reshape(-1, 1) if w.ndim == 1 else w
    qmax = 2 ** (spec.bits - 1) - 1
    scale = channel_scales(matrix, spec.bits)
    safe = np.where(scale > 0, scale, 1.0)
    levels = np.clip(np.rint(matrix.astype(np.float64) / safe), -qmax, qmax)
    dequant = np.where(scale > 0, levels * scale, 0.0).astype(w.dtype).reshape(w.shape)
    return dequant, error_report(name, f"{spec.bits}bit", w, dequant)
