"""Run directory: artifacts, manifest.json and the ledger."""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
from importlib import metadata
from pathlib import Path

from src.storage.database import DEFAULT_DB_NAME, Database

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TIMING_KIND = "timing"


def file_digest(path: Path | str) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def artifact_digest(kind: str, path: Path | str) -> str | None:
    """SHA-256 of an artifact; None for timing reports, whose bytes vary run to run."""
    return None if kind == TIMING_KIND else file_digest(path)


def git_revision() -> str:
    """HEAD commit of the working checkout, or 'unknown'."""
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5, check=True)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def package_version() -> str:
    try:
        return metadata.version("idp-lab")
    except metadata.PackageNotFoundError:
        return "0.0.0"


class RunDirectory:
    """All artifacts of one pipeline live under ``root``."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.db = Database(self.root / DEFAULT_DB_NAME)
        self.db.create_tables()

    def path(self, name: str) -> Path:
        return self.root / name

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def load_manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"artifacts": []}
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    def write_manifest(self, manifest: dict) -> None:
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def update_manifest(self, config_digest: str, seed: int, artifacts: list[tuple[str, Path]]) -> dict:
        """Record the config digest, seed, revision and (kind, path, sha256) of ``artifacts``.

        Entries for a path already in the manifest are replaced in place.
        """
        manifest = self.load_manifest()
        manifest.update({
            "config_digest": config_digest,
            "git_revision": git_revision(),
            "version": package_version(),
        })
        seeds = set(manifest.get("seeds", []))
        seeds.add(seed)
        manifest["seeds"] = sorted(seeds)

        entries = {a["path"]: a for a in manifest.get("artifacts", [])}
        order = [a["path"] for a in manifest.get("artifacts", [])]
        for kind, path in artifacts:
            rel = Path(path).name
            entries[rel] = {"kind": kind, "path": rel, "sha256": artifact_digest(kind, path)}
            if rel not in order:
                order.append(rel)
        manifest["artifacts"] = [entries[p] for p in order]
        self.write_manifest(manifest)
        return manifest

    def record(self, run_id: str, config_digest: str, seed: int, artifacts: list[tuple[str, Path]]) -> dict:
        """Update the manifest and ledger for every artifact a run wrote."""
        manifest = self.update_manifest(config_digest, seed, artifacts)
        for kind, path in artifacts:
            path = Path(path)
            self.db.record_artifact(run_id, kind, path.name, artifact_digest(kind, path), path.stat().st_size)
        logger.info("Recorded %d artifact(s) in %s", len(artifacts), self.root)
        return manifest
