import json

import pytest
from click.testing import CliRunner

from main import cli

SCENARIO = """\
name={name}
policy={policy}
seed=3
duration_s=6
tiers.dram.capacity_pages=300
tiers.cxl.capacity_pages=3000
tenants.0.workload.kind=zipf_hotset
tenants.0.workload.rss_pages=800
tenants.0.workload.ops_rate=2000
output.csv={csv}
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def write_scenario(tmp_path):
    def write(name, policy="adaptive", **extra):
        text = SCENARIO.format(name=name, policy=policy, csv=tmp_path / f"{name}.csv")
        text += "".join(f"{k}={v}\n" for k, v in extra.items())
        path = tmp_path / f"{name}.conf"
        path.write_text(text)
        return path

    return write


def test_run_writes_csv_and_summary(runner, write_scenario, tmp_path):
    result = runner.invoke(cli, ["run", str(write_scenario("one"))])
    assert result.exit_code == 0, result.output
    assert "✅" in result.output
    lines = (tmp_path / "one.csv").read_text().splitlines()
    assert lines[0].startswith("time_s,process,delta")
    assert len(lines) == 1 + 3
    summary = json.loads((tmp_path / "one.csv.summary.json").read_text())
    assert summary["status"] == "ok"


def test_run_output_and_overrides(runner, write_scenario, tmp_path):
    out = tmp_path / "elsewhere" / "x.csv"
    result = runner.invoke(
        cli, ["run", str(write_scenario("two")), "--set", "duration_s=4", "--output", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert len(out.read_text().splitlines()) == 1 + 2
    assert (tmp_path / "elsewhere" / "x.csv.summary.json").exists()


def test_invalid_config_lists_keys(runner, write_scenario):
    path = write_scenario("bad", **{"tiers.dram.low_watermark": "0.99", "hint.bogus": "1"})
    result = runner.invoke(cli, ["run", str(path)])
    assert result.exit_code == 1
    assert "❌" in result.output
    assert "tiers.dram" in result.output
    assert "hint.bogus" in result.output


def test_out_of_memory_exits_with_partial_report(runner, write_scenario, tmp_path):
    path = write_scenario("oom", **{"tiers.cxl.capacity_pages": "100"})
    result = runner.invoke(cli, ["run", str(path)])
    assert result.exit_code == 2
    assert (tmp_path / "oom.csv").exists()
    assert json.loads((tmp_path / "oom.csv.summary.json").read_text())["status"] == "oom"


def test_compare_prints_ratios(runner, write_scenario):
    base = write_scenario("static", policy="no_migration")
    other = write_scenario("adaptive")
    result = runner.invoke(cli, ["compare", str(other), "--baseline", str(base)])
    assert result.exit_code == 0, result.output
    assert "static" in result.output and "adaptive" in result.output
    assert "1.000" in result.output


def test_compare_in_parallel_matches_serial(runner, write_scenario):
    base = write_scenario("static", policy="no_migration")
    other = write_scenario("mod", policy="tpp_mod")
    serial = runner.invoke(cli, ["compare", str(other), "--baseline", str(base)])
    parallel = runner.invoke(cli, ["compare", str(other), "--baseline", str(base), "--jobs", "2"])
    assert parallel.exit_code == 0, parallel.output
    assert parallel.output == serial.output


def test_compare_refuses_mismatched_workloads(runner, write_scenario):
    base = write_scenario("static", policy="no_migration")
    other = write_scenario("reseeded", seed="4")
    result = runner.invoke(cli, ["compare", str(other), "--baseline", str(base)])
    assert result.exit_code == 1
    assert "reseeded" in result.output


def test_trace_validate(runner, tmp_path):
    good = tmp_path / "good.trace"
    good.write_text("0 1 0 r\n10 2 5 w\n")
    result = runner.invoke(cli, ["trace-validate", str(good)])
    assert result.exit_code == 0
    assert "2 accesses from 2 processes" in result.output

    bad = tmp_path / "bad.trace"
    bad.write_text("0 1 0 r\n0 1 zero r\n")
    result = runner.invoke(cli, ["trace-validate", str(bad)])
    assert result.exit_code == 1
    assert "line 2" in result.output


def test_trace_validate_rejects_undecodable_bytes(runner, tmp_path):
    path = tmp_path / "binary.trace"
    path.write_bytes(b"0 1 0 r\n1 1 \xff r\n")
    result = runner.invoke(cli, ["trace-validate", str(path)])
    assert result.exit_code == 1
    assert "line 2" in result.output
