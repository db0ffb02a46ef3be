import json

import numpy as np
import pytest

from report import (
    CSV_COLUMNS,
    ComparisonError,
    CsvSink,
    IntervalRow,
    RunReport,
    RunSummary,
    compare,
    format_table,
    oracle_access_ns,
)


def _row(t_s=2, toggle=True):
    return IntervalRow(
        time_ns=t_s * 1_000_000_000,
        process=1,
        delta=12,
        slope=3,
        slope_state="Varying",
        toggle=toggle,
        accessed_count=0,
        promotions=40,
        demotions=55,
        demote_promoted=12,
        total_cost_ns=123456,
    )


def _report(name, total, seed=1):
    summary = RunSummary(
        scenario=name,
        policy="adaptive",
        seed=seed,
        status="ok",
        end_time_s=10.0,
        total_cost_ns=total,
        processes=[],
        fingerprint={"seed": seed},
    )
    return RunReport(summary=summary)


def test_csv_has_fixed_header_and_lf_endings(tmp_path):
    path = tmp_path / "out" / "run.csv"
    sink = CsvSink(path)
    sink.emit(_row())
    sink.emit(_row(4, toggle=False))
    sink.close()
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "2.000,1,12,3,Varying,on,0,40,55,12,123456"
    assert lines[2].split(",")[5] == "off"


def test_report_writes_summary_beside_csv(tmp_path):
    report = _report("a", 100)
    report.rows.append(_row())
    report.write(tmp_path / "run.csv")
    summary = json.loads((tmp_path / "run.csv.summary.json").read_text())
    assert summary["scenario"] == "a"
    assert summary["status"] == "ok"
    assert report.ok


def test_baseline_against_itself_is_one():
    base = _report("base", 500)
    rows = compare([base], base)
    assert [r.ratio for r in rows] == [1.0, 1.0]


def test_ratios_are_relative_to_baseline():
    rows = compare([_report("fast", 250), _report("slow", 750)], _report("base", 500))
    assert [(r.scenario, r.ratio) for r in rows] == [("base", 1.0), ("fast", 0.5), ("slow", 1.5)]
    table = format_table(rows)
    assert "fast" in table and "1.500" in table


def test_mismatched_workloads_are_refused():
    with pytest.raises(ComparisonError):
        compare([_report("other", 10, seed=2)], _report("base", 500))


def test_compare_does_not_mutate_reports():
    base, other = _report("base", 500), _report("other", 100)
    before = (base.summary.model_dump(), other.summary.model_dump())
    compare([other], base)
    assert (base.summary.model_dump(), other.summary.model_dump()) == before


def test_report_lookups():
    report = _report("a", 1)
    report.rows.extend([_row(2), _row(4)])
    assert len(report.rows_for(1)) == 2
    assert report.rows_for(2) == []
    with pytest.raises(KeyError):
        report.process(1)


def test_oracle_pins_most_probable_pages():
    probs = np.array([0.1, 0.6, 0.3])
    assert oracle_access_ns(probs, 1, 100.0, 200.0) == pytest.approx(0.6 * 100 + 0.4 * 200)
    assert oracle_access_ns(probs, 5, 100.0, 200.0) == pytest.approx(100.0)
    assert oracle_access_ns(probs, 0, 100.0, 200.0) == pytest.approx(200.0)
