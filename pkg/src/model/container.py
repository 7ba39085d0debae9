"""Tensor container files.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header mapping
tensor names to ``{"dtype", "shape", "offsets"}`` plus a ``__metadata__``
entry (``kind`` and free-form string metadata), then little-endian float32
blobs. Offsets are relative to the first byte after the header.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np

from src.errors import ContainerError
from src.model.weights import Weights
from src.validation.schemas import ModelConfig

logger = logging.getLogger(__name__)

HEADER_PREFIX = 8
METADATA_KEY = "__metadata__"
_DTYPE = "<f4"
KINDS = ("weights", "prompt", "lora", "prefix")


def save_container(path: Path | str, tensors: dict[str, np.ndarray], kind: str,
                   metadata: dict[str, str] | None = None) -> Path:
    """Write ``tensors`` to ``path``; returns the path."""
    if kind not in KINDS:
        raise ContainerError(f"unknown container kind {kind!r}")
    path = Path(path)
    header: dict[str, dict] = {METADATA_KEY: {"kind": kind, **{k: str(v) for k, v in (metadata or {}).items()}}}
    blobs, offset = [], 0
    for name, array in tensors.items():
        blob = np.ascontiguousarray(array, dtype=_DTYPE).tobytes()
        header[name] = {"dtype": "F32", "shape": list(np.shape(array)), "offsets": [offset, offset + len(blob)]}
        blobs.append(blob)
        offset += len(blob)

    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for blob in blobs:
            fh.write(blob)
    logger.info("Wrote %s container %s (%d tensors, %d bytes)", kind, path, len(tensors), HEADER_PREFIX + len(encoded) + offset)
    return path


def _entry_layout(path: Path, name: str, entry: object) -> tuple[int, int, tuple[int, ...]]:
    if not isinstance(entry, dict):
        raise ContainerError(f"{path}: {name} header entry is not an object")
    try:
        start, stop = (int(o) for o in entry["offsets"])
        shape = tuple(int(n) for n in entry["shape"])
    except KeyError as e:
        raise ContainerError(f"{path}: {name} header entry missing {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise ContainerError(f"{path}: {name} has malformed offsets or shape: {e}") from e
    if any(n < 0 for n in shape):
        raise ContainerError(f"{path}: {name} has negative extent in shape {list(shape)}")
    return start, stop, shape


def load_container(path: Path | str, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Read a container; returns (tensors, metadata). ``kind`` is checked when given."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_PREFIX:
        raise ContainerError(f"{path}: truncated header length")
    (header_len,) = struct.unpack("<Q", raw[:HEADER_PREFIX])
    body_start = HEADER_PREFIX + header_len
    if body_start > len(raw):
        raise ContainerError(f"{path}: header length {header_len} exceeds file size")
    try:
        header = json.loads(raw[HEADER_PREFIX:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"{path}: unreadable header: {e}") from e

    if not isinstance(header, dict):
        raise ContainerError(f"{path}: header is not an object")
    metadata = header.pop(METADATA_KEY, {})
    if not isinstance(metadata, dict):
        raise ContainerError(f"{path}: metadata is not an object")
    if kind is not None and metadata.get("kind") != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {metadata.get('kind')!r}")

    body = raw[body_start:]
    tensors: dict[str, np.ndarray] = {}
    spans = []
    for name, entry in header.items():
        start, stop, shape = _entry_layout(path, name, entry)
        if entry.get("dtype") != "F32":
            raise ContainerError(f"{path}: {name} has unsupported dtype {entry.get('dtype')!r}")
        if not 0 <= start <= stop <= len(body):
            raise ContainerError(f"{path}: {name} offsets {start}..{stop} outside body of {len(body)} bytes")
        if (stop - start) != 4 * int(np.prod(shape)):
            raise ContainerError(f"{path}: {name} byte length does not match shape {list(shape)}")
        spans.append((start, stop, name))
        tensors[name] = np.frombuffer(body[start:stop], dtype=_DTYPE).reshape(shape).astype(np.float32)

    spans.sort()
    for (_, prev_stop, prev), (start, _, name) in zip(spans, spans[1:]):
        if start < prev_stop:
            raise ContainerError(f"{path}: tensors {prev} and {name} overlap")
    return tensors, metadata


# ---------------------------------------------------------------------------
# Weights checkpoints
# ---------------------------------------------------------------------------

def save_weights(path: Path | str, weights: Weights, metadata: dict[str, str] | None = None) -> Path:
    """Store base weights with their ModelConfig in the metadata."""
    meta = {"config": weights.config.model_dump_json(), **(metadata or {})}
    arrays = {name: t.data for name, t in weights.named_tensors().items()}
    return save_container(path, arrays, "weights", meta)


def load_weights(path: Path | str) -> Weights:
    tensors, metadata = load_container(path, kind="weights")
    if "config" not in metadata:
        raise ContainerError(f"{path}: weights container without a config entry")
    return Weights.from_named(ModelConfig.model_validate_json(metadata["config"]), tensors)
