"""Report files: CSV with a header row and line-delimited JSON."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

logger = logging.getLogger(__name__)


def _fieldnames(rows: list[dict]) -> list[str]:
    names: list[str] = []
    for row in rows:
        names.extend(k for k in row if k not in names)
    return names


def write_csv(rows: list[dict], output_path: Path | str, header_comment: str | None = None) -> Path:
    """Write ``rows`` as CSV; an optional ``# comment`` line precedes the header."""
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", newline="", encoding="utf-8") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        if rows:
            writer = csv.DictWriter(f, fieldnames=_fieldnames(rows))
            writer.writeheader()
            writer.writerows(rows)
    logger.info("Wrote %d rows to %s", len(rows), output_path)
    return output_path


def read_csv(path: Path | str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_jsonl(records: list[dict], output_path: Path | str) -> Path:
    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    logger.info("Wrote %d records to %s", len(records), output_path)
    return output_path


def read_jsonl(path: Path | str) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
