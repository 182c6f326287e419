# tests/test_results.py
import os
import sys
import json
import re

import pytest

HERE = os.path.abspath(os.path.dirname(__file__))
sys.path.insert(0, os.path.abspath(os.path.join(HERE, "..")))

from cvqpu.results import CSV_COLUMNS, ResultRow, ResultStore, SweepResult, read_results, write_results


@pytest.fixture
def result():
    rows = [
        ResultRow("omega_r", 6.85e9, 30.0, 0.9991234567891234, 1.7e-6, 40, 1e-10, 2e-12,
                  extras={"gauge_fidelity": 0.9995, "flagged": False, "flag_reasons": []}),
        ResultRow("omega_r", 4e9, 57.142857142857, 0.99981, 1.7097e-6, 40,
                  extras={"flagged": True, "flag_reasons": ["leakage"]}),
    ]
    return SweepResult("rotation", "omega_r", rows, {"trunc_N": 40, "nu": 2 + 0j})


def test_rows_sorted_by_swept_value(result):
    assert [r.swept_value for r in result.rows] == [4e9, 6.85e9]
    assert result.rows[0].flagged and not result.rows[1].flagged
    assert list(result.to_frame().columns) == CSV_COLUMNS


def test_timestamped_names(tmp_path, result):
    path = ResultStore(str(tmp_path)).path_for(result, "csv")
    assert re.search(r"rotation_omega_r_\d{8}_\d{6}\.csv$", path)
    fixed = ResultStore(str(tmp_path), fixed_name="run").path_for(result, "json")
    assert fixed == os.path.join(str(tmp_path), "run.json")
    with pytest.raises(ValueError):
        ResultStore(str(tmp_path)).path_for(result, "xlsx")


def test_csv_round_trip(tmp_path, result):
    path = ResultStore(str(tmp_path / "nested"), fixed_name="rot").save(result, "csv")
    with open(path) as f:
        assert f.readline().strip() == ",".join(CSV_COLUMNS)
    back = read_results(path)
    assert len(back.rows) == 2
    assert back.rows[1].fidelity == pytest.approx(0.9991234567891234, rel=1e-11)
    assert back.rows[0].trunc_N == 40
    assert back.swept_name == "omega_r"


def test_json_keeps_diagnostics(tmp_path, result):
    path = str(tmp_path / "rot.json")
    write_results(result, path, "json")
    with open(path) as f:
        text = f.read()
    assert '\n  "op_kind": "rotation"' in text
    doc = json.loads(text)
    assert doc["rows"][0]["flag_reasons"] == ["leakage"]
    assert doc["metadata"]["nu"] == {"re": 2.0, "im": 0.0}
    back = read_results(path)
    assert back.op_kind == "rotation"
    assert back.rows[1].extras["gauge_fidelity"] == pytest.approx(0.9995)


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_results(str(tmp_path / "missing.csv"))
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_results(str(bad))


def test_unwritable_root(tmp_path, result):
    blocker = tmp_path / "file.txt"
    blocker.write_text("")
    with pytest.raises(OSError) as exc:
        ResultStore(str(blocker)).save(result)
    assert str(blocker) in str(exc.value)
