"""Tests for CSV and JSONL report files."""

from src.harness.reports import read_csv, read_jsonl, write_csv, write_jsonl


class TestCsv:
    def test_header_comment_skipped_on_read(self, tmp_path):
        path = write_csv([{"a": 1, "b": 2}], tmp_path / "r.csv", header_comment="note")
        assert path.read_text().splitlines()[0] == "# note"
        assert read_csv(path) == [{"a": "1", "b": "2"}]

    def test_columns_are_union_in_first_seen_order(self, tmp_path):
        path = write_csv([{"a": 1}, {"b": 2, "a": 3}], tmp_path / "r.csv")
        assert path.read_text().splitlines()[0] == "a,b"
        assert read_csv(path)[0] == {"a": "1", "b": ""}

    def test_empty_rows(self, tmp_path):
        path = write_csv([], tmp_path / "nested" / "r.csv", header_comment="nothing yet")
        assert read_csv(path) == []


class TestJsonl:
    def test_sorted_keys_one_record_per_line(self, tmp_path):
        path = write_jsonl([{"b": 1, "a": [1, 2]}, {"c": None}], tmp_path / "r.jsonl")
        assert path.read_text().splitlines()[0] == '{"a": [1, 2], "b": 1}'
        assert read_jsonl(path) == [{"a": [1, 2], "b": 1}, {"c": None}]
