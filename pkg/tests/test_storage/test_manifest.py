"""Tests for the run directory manifest."""

import json

from src.storage.manifest import TIMING_KIND, artifact_digest, file_digest


class TestDigests:
    def test_file_digest(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_bytes(b"abc")
        assert file_digest(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"

    def test_timing_artifacts_have_no_digest(self, tmp_path):
        path = tmp_path / "bench.csv"
        path.write_text("x\n")
        assert artifact_digest(TIMING_KIND, path) is None
        assert artifact_digest("report", path) == file_digest(path)


class TestRunDirectory:
    def test_creates_root_and_ledger(self, run_dir):
        assert run_dir.root.is_dir()
        assert run_dir.load_manifest() == {"artifacts": []}

    def test_record_writes_manifest_and_ledger(self, run_dir):
        path = run_dir.path("corpus.json")
        path.write_text("{}\n")
        run = run_dir.db.start_run("gen-data", "a" * 64, seed=4)
        manifest = run_dir.record(run.id, "a" * 64, 4, [("corpus", path)])
        assert manifest["config_digest"] == "a" * 64
        assert manifest["seeds"] == [4]
        assert manifest["artifacts"] == [{"kind": "corpus", "path": "corpus.json", "sha256": file_digest(path)}]
        assert json.loads(run_dir.manifest_path.read_text()) == manifest
        assert run_dir.db.stats()["total_artifacts"] == 1

    def test_rewritten_artifact_replaced_in_place(self, run_dir):
        first = run_dir.path("a.csv")
        second = run_dir.path("b.csv")
        first.write_text("1\n")
        second.write_text("2\n")
        run_dir.update_manifest("d", 0, [("report", first), ("report", second)])
        first.write_text("changed\n")
        manifest = run_dir.update_manifest("d", 1, [("report", first)])
        assert [a["path"] for a in manifest["artifacts"]] == ["a.csv", "b.csv"]
        assert manifest["artifacts"][0]["sha256"] == file_digest(first)
        assert manifest["seeds"] == [0, 1]

    def test_timing_entry_has_null_digest(self, run_dir):
        path = run_dir.path("bench.csv")
        path.write_text("policy\n")
        manifest = run_dir.update_manifest("d", 0, [(TIMING_KIND, path)])
        assert manifest["artifacts"][0]["sha256"] is None
