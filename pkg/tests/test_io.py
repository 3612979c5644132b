"""Tests for problem file and trace I/O."""

import json
import math

import numpy as np
import pytest

from mirrorcert import io
from mirrorcert.errors import ConfigError, DomainViolation


class TestReadArray:
    def test_json_forms(self, tmp_path):
        (tmp_path / "bare.json").write_text("[0.25, 0.75]")
        (tmp_path / "wrapped.json").write_text('{"weights": [[1, 2], [3, 4]]}')
        np.testing.assert_array_equal(io.read_array(tmp_path / "bare.json"), [0.25, 0.75])
        np.testing.assert_array_equal(io.read_array(tmp_path / "wrapped.json"), [[1, 2], [3, 4]])

    def test_csv_keeps_matrix_shape(self, tmp_path):
        (tmp_path / "row.csv").write_text("0.2,0.5,0.3\n")
        (tmp_path / "m.csv").write_text("1,2\n3,4\n")
        assert io.read_array(tmp_path / "row.csv").shape == (1, 3)
        assert io.read_array(tmp_path / "m.csv").shape == (2, 2)

    def test_ragged_csv(self, tmp_path):
        (tmp_path / "ragged.csv").write_text("1,2\n3\n")
        with pytest.raises(ConfigError):
            io.read_array(tmp_path / "ragged.csv")

    @pytest.mark.parametrize(
        "name, text",
        [("bad.json", "{not json"), ("nofield.json", '{"w": [1]}'), ("bad.csv", "1,x\n")],
    )
    def test_malformed(self, tmp_path, name, text):
        (tmp_path / name).write_text(text)
        with pytest.raises(ConfigError):
            io.read_array(tmp_path / name)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            io.read_array(tmp_path / "absent.json")


class TestReadMeasure:
    def test_probability(self, tmp_path):
        (tmp_path / "mu.json").write_text("[0.2, 0.8]")
        assert io.read_measure(tmp_path / "mu.json").probability

    def test_csv_row_or_column(self, tmp_path):
        (tmp_path / "row.csv").write_text("0.2,0.5,0.3\n")
        (tmp_path / "col.csv").write_text("0.2\n0.5\n0.3\n")
        for name in ("row.csv", "col.csv"):
            np.testing.assert_array_equal(io.read_measure(tmp_path / name).weights, [0.2, 0.5, 0.3])

    def test_rejects_matrix(self, tmp_path):
        (tmp_path / "m.json").write_text("[[0.25, 0.25], [0.25, 0.25]]")
        with pytest.raises(ConfigError):
            io.read_measure(tmp_path / "m.json")

    def test_rejects_non_probability(self, tmp_path):
        (tmp_path / "mu.json").write_text("[0.2, 0.2]")
        with pytest.raises(DomainViolation):
            io.read_measure(tmp_path / "mu.json")


class TestWriters:
    def test_json_non_finite(self, tmp_path):
        path = io.write_json(tmp_path / "out" / "r.json", {"a": np.float64(math.inf), "b": np.array([1.0]), "ok": np.bool_(True)})
        assert json.loads(path.read_text()) == {"a": "inf", "b": [1.0], "ok": True}

    def test_csv_repr_floats(self, tmp_path):
        io.write_csv(tmp_path / "t.csv", ("n", "x"), [(0, 0.1), (1, 1 / 3)])
        header, rows = io.read_csv(tmp_path / "t.csv")
        assert header == ["n", "x"]
        assert rows == [["0", "0.1"], ["1", repr(1 / 3)]]

    def test_csv_byte_identical(self, tmp_path):
        rows = [(n, n / 7) for n in range(5)]
        a = io.write_csv(tmp_path / "a.csv", ("n", "x"), rows)
        b = io.write_csv(tmp_path / "b.csv", ("n", "x"), rows)
        assert a.read_bytes() == b.read_bytes()
