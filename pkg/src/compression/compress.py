"""Apply quantization or pruning to every projection of a model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from src.compression.prune import prune_magnitude
from src.compression.quantize import MatrixReport, quantize_rtn
from src.errors import ConfigError
from src.model.weights import PROJECTIONS, Weights
from src.tensors.tensor import Tensor
from src.validation.schemas import PruneSpec, QuantSpec

logger = logging.getLogger(__name__)


@dataclass
class CompressionReport:
    method: str
    setting: str
    matrices: list[MatrixReport] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [m.as_row() for m in self.matrices]

    @property
    def mean_mse(self) -> float:
        return sum(m.mse for m in self.matrices) / len(self.matrices) if self.matrices else 0.0


def is_compressible(name: str) -> bool:
    """Q, K, V, O and the two feed-forward matrices; embeddings and gains are kept."""
    return name.startswith("layers.") and name.rsplit(".", 1)[-1] in PROJECTIONS


def compress_model(weights: Weights, spec: QuantSpec | PruneSpec) -> tuple[Weights, CompressionReport]:
    if isinstance(spec, QuantSpec):
        report = CompressionReport("rtn", f"{spec.bits}bit")

        def apply(name, data):
            return quantize_rtn(data, spec, name)
    elif isinstance(spec, PruneSpec):
        report = CompressionReport("magnitude", f"s={spec.sparsity:g}")

        def apply(name, data):
            return prune_magnitude(data, spec, name)
    else:
        raise ConfigError(f"unsupported compression spec {type(spec).__name__}")

    def transform(name: str, t: Tensor) -> Tensor:
        if not is_compressible(name):
            return Tensor(t.data.copy(), name=name)
        data, matrix_report = apply(name, t.data)
        report.matrices.append(matrix_report)
        logger.debug("%s %s: max_err=%.3g mse=%.3g", report.setting, name, matrix_report.max_abs_error, matrix_report.mse)
        return Tensor(data, name=name)

    compressed = weights.map(transform)
    logger.info("Compressed %d matrices (%s %s), mean mse %.3g",
                len(report.matrices), report.method, report.setting, report.mean_mse)
    return compressed, report
