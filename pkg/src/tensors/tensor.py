"""Dense row-major tensor backed by a contiguous numpy array.

A Tensor is the substrate for all model math and for the gradient trace.
Parameters are Tensors with ``requires_grad=True``; frozen weights keep it
False and never receive gradients.
"""

from __future__ import annotations

import numpy as np

from src.errors import NonFiniteError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
DEFAULT_DTYPE = np.dtype(np.float32)


def check_finite(data: np.ndarray, op: str) -> None:
    """Raise NonFiniteError if ``data`` holds NaN or Inf."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A dense float32 (or float64) array with an optional trainable flag."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.name = name

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def zeros(cls, shape, dtype=DEFAULT_DTYPE, requires_grad: bool = False, name: str = "") -> Tensor:
        return cls(np.zeros(shape, dtype=dtype), requires_grad=requires_grad, name=name)

    @classmethod
    def from_list(cls, shape: list[int], values: list[float], dtype=DEFAULT_DTYPE) -> Tensor:
        """Build from an explicit extent list and flat row-major values."""
        if int(np.prod(shape)) != len(values):
            raise ShapeError(f"shape {shape} needs {int(np.prod(shape))} values, got {len(values)}")
        return cls(np.asarray(values, dtype=dtype).reshape(shape))

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def extents(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def numel(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has {self.data.size}")
        return float(self.data.reshape(-1)[0])

    # ------------------------------------------------------------------
    # Copies
    # ------------------------------------------------------------------

    def detach(self) -> Tensor:
        """Return a non-trainable tensor sharing no memory with this one."""
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def astype(self, dtype) -> Tensor:
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        flag = ", trainable" if self.requires_grad else ""
        label = f"{self.name!r}, " if self.name else ""
        return f"Tensor({label}shape={self.extents}, dtype={self.dtype}{flag})"
