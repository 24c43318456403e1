import csv
import io
import json
import re
import subprocess
import sys

import pytest

from chronowatt.cli import main

MS = 10**6


def write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def curve_rows(text):
    lines = text.splitlines()
    assert lines[0] == "# format_version=1"
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


@pytest.fixture
def peak_scenario(tmp_path):
    return write(tmp_path, {"device": "t1600-like", "duration": "PT0.05S",
                            "traffic": {"kind": "cbr", "load": 0.5}})


def test_run_writes_reports(tmp_path, peak_scenario, capsys):
    out = tmp_path / "out"
    log = tmp_path / "events.ndjson"
    before = peak_scenario.read_bytes()
    assert main(["run", "--scenario", str(peak_scenario), "--out", str(out), "--emit", "csv,json",
                 "--log-events", str(log)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["average_power_w"] == pytest.approx(5616, rel=0.01)
    assert (out / "point.csv").read_text().startswith("# format_version=1")
    assert (out / "energy.csv").read_text().startswith("component,state,joules")
    digest = re.search(r"event_digest=(\w+)", capsys.readouterr().out).group(1)
    assert digest == summary["event_digest"]
    assert all(json.loads(line)["kind"] for line in log.read_text().splitlines())
    assert peak_scenario.read_bytes() == before


def test_run_twice_same_digest(tmp_path, capsys):
    path = write(tmp_path, {"device": "mx960-like", "duration_ns": 20 * MS, "seed": 11,
                            "traffic": {"kind": "onoff", "count": 16, "sources": {"peak_rate": 1e9}},
                            "policy": {"mode": "delay_variable"}})
    digests = []
    for i in range(2):
        assert main(["run", "--scenario", str(path), "--out", str(tmp_path / f"o{i}")]) == 0
        digests.append(re.search(r"event_digest=(\w+)", capsys.readouterr().out).group(1))
    assert digests[0] == digests[1]
    assert main(["run", "--scenario", str(path), "--seed", "12", "--out", str(tmp_path / "o3")]) == 0
    assert re.search(r"event_digest=(\w+)", capsys.readouterr().out).group(1) != digests[0]


def test_run_missing_device_exits_2(tmp_path, capsys):
    path = write(tmp_path, {"device": "nonexistent-router", "duration_ns": MS})
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == 2
    assert "device" in capsys.readouterr().err


def test_run_unreadable_scenario_exits_2(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "missing.json")]) == 2


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--axis", "voltage", "--scenario", "x.json", "1"])
    assert exc.value.code == 2


def test_sweep_load(tmp_path, capsys):
    path = write(tmp_path, {"device": "t1600-like", "duration": "PT0.02S", "traffic": {"kind": "cbr", "load": 0}})
    assert main(["sweep", "--scenario", str(path), "--axis", "load", "0,0.25,0.5,1.0", "--jobs", "2",
                 "--out", str(tmp_path / "sw")]) == 0
    rows = curve_rows(capsys.readouterr().out)
    watts = [float(r["watts"]) for r in rows]
    assert watts == pytest.approx([5376, 5423, 5616, 5856], rel=0.01)
    assert rows[0]["ecr"] == "undefined"
    assert (tmp_path / "sw" / "sweep_load.csv").exists()


def test_sweep_packet_size(tmp_path, capsys):
    path = write(tmp_path, {"device": "t1600-like", "duration": "PT0.01S", "traffic": {"kind": "cbr", "load": 1.0}})
    assert main(["sweep", "--scenario", str(path), "--axis", "packet_size", "1500,64"]) == 0
    rows = curve_rows(capsys.readouterr().out)
    assert [r["x"] for r in rows] == ["64.0", "1500.0"]
    assert float(rows[0]["watts"]) >= float(rows[1]["watts"])


def test_sweep_fill(tmp_path, capsys):
    path = write(tmp_path, {"device": "mx960-like", "duration": "PT0.02S", "traffic": {"kind": "cbr", "load": 0.5}})
    assert main(["sweep", "--scenario", str(path), "--axis", "fill", "1,2,3,4"]) == 0
    ecr = [float(r["ecr"]) for r in curve_rows(capsys.readouterr().out)]
    assert all(a >= b for a, b in zip(ecr, ecr[1:]))


def test_sweep_empty_values_exit_2(peak_scenario):
    assert main(["sweep", "--scenario", str(peak_scenario), "--axis", "load", ","]) == 2
    assert main(["sweep", "--scenario", str(peak_scenario), "--axis", "load", ""]) == 2


def test_tolerance_matrix(capsys):
    assert main(["tolerance-matrix", "--format", "csv"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["kind", "wake_ns", "MC", "BFD", "Video", "Voice"]
    assert [r[2:] for r in rows[1:]] == [
        ["yes", "yes", "yes", "yes"],
        ["yes", "yes", "yes", "yes"],
        ["marginal", "yes", "yes", "yes"],
        ["no", "marginal", "marginal", "no"],
        ["no", "no", "no", "no"],
        ["no", "no", "no", "no"],
    ]
    assert main(["tolerance-matrix", "--format", "text"]) == 0
    assert "marginal" in capsys.readouterr().out


def test_traffic_round_trip(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["gen-traffic", "--out", str(trace), "--duration", "PT200S", "--sources", "8",
                 "--alpha", "1.4", "--seed", "1"]) == 0
    first = trace.read_bytes()
    capsys.readouterr()
    assert main(["estimate-hurst", str(trace), "--bin-width", "10000000", "--capacity", "1e8"]) == 0
    out = capsys.readouterr().out
    assert float(re.search(r"hurst=([\d.]+)", out).group(1)) == pytest.approx(0.8, abs=0.1)
    assert trace.read_bytes() == first


def test_estimate_hurst_empty_trace(tmp_path, capsys):
    trace = tmp_path / "empty.csv"
    trace.write_text("timestamp_ns,size_bytes,app_class\n")
    assert main(["estimate-hurst", str(trace)]) == 2
    assert "no packets" in capsys.readouterr().err


def test_estimate_hurst_bad_trace(tmp_path, capsys):
    trace = tmp_path / "bad.csv"
    trace.write_text("timestamp_ns,size_bytes,app_class\n10,100,BestEffort\n5,100,BestEffort\n")
    assert main(["estimate-hurst", str(trace)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "chronowatt.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "chronowatt" in proc.stdout
