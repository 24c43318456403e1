import csv
import io
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from chronowatt.errors import InputError
from chronowatt.metrics import (
    FORMAT_VERSION, EfficiencyPoint, breakdown_report, chassis_fill_curve, curve_csv, delay_summary, ecr,
    efficiency_curve, summary_json, total_violations,
)
from chronowatt.policy import capacity_matched_schedule
from chronowatt.power import calibrate
from chronowatt.scenario import scenario_from_dict

MS = 10**6


def cbr(device, load, duration=20 * MS, **extra):
    doc = {"device": device, "duration_ns": duration, **extra}
    if load:
        doc["traffic"] = {"kind": "cbr", "load": load}
    return scenario_from_dict(doc).run()


@pytest.fixture(scope="module")
def t1600_sweep():
    return [cbr("t1600-like", x) for x in (0.25, 0.5, 1.0)]


def test_ecr_values(t1600_sweep):
    curve = efficiency_curve(t1600_sweep)
    assert [p.x for p in curve] == [0.25, 0.5, 1.0]
    assert [p.ecr for p in curve] == pytest.approx([33.9, 17.55, 9.15], rel=5e-3)
    assert curve[0].ecr > curve[1].ecr > curve[2].ecr


def test_mx960_ecr():
    curve = efficiency_curve([cbr("mx960-like", 1.0), cbr("mx960-like", 0.5)])
    assert [p.ecr for p in curve] == pytest.approx([3209 / 240, 3289 / 480], rel=5e-3)


def test_ecr_identity(t1600_sweep):
    for r in t1600_sweep:
        assert ecr(r) * r.delivered_gbps == pytest.approx(r.average_power, rel=1e-9)


def test_zero_traffic_is_undefined():
    idle = cbr("t1600-like", 0)
    assert ecr(idle) is None
    curve = efficiency_curve([idle, cbr("t1600-like", 0.5)], loads=[0.0, 0.5])
    assert curve[0].ecr is None
    text = curve_csv(curve)
    rows = list(csv.reader(io.StringIO(text.split("\n", 1)[1])))
    assert rows[0] == ["x", "watts", "gbps", "ecr"] and rows[1][3] == "undefined"
    assert json.loads(summary_json(idle))["ecr_w_per_gbps"] == "undefined"


def test_curve_contract_errors(t1600_sweep):
    with pytest.raises(InputError):
        efficiency_curve(t1600_sweep[:1])
    with pytest.raises(InputError):
        efficiency_curve([t1600_sweep[0], cbr("mx960-like", 0.5)])
    with pytest.raises(InputError):
        efficiency_curve(t1600_sweep, loads=[0.1, 0.2])


def test_csv_version_header():
    text = curve_csv([EfficiencyPoint(1.0, 10.0, 2.0, 5.0)])
    assert text.splitlines()[0] == f"# format_version={FORMAT_VERSION}"
    assert text.splitlines()[2] == "1.0,10.000000,2.000000,5.000000"


def test_summary_json_versioned(t1600_sweep):
    doc = json.loads(summary_json(t1600_sweep[1]))
    assert doc["format_version"] == FORMAT_VERSION
    assert doc["ecr_w_per_gbps"] == pytest.approx(17.55, rel=5e-3)


def test_breakdown_full_load(t1600_sweep):
    rep = breakdown_report(t1600_sweep[2])
    assert sum(rep.values()) == pytest.approx(1.0, abs=1e-9)
    assert rep["PHY_Link"] == pytest.approx(0.10, abs=0.02)
    whole = breakdown_report(t1600_sweep[2], scope=None)
    assert sum(whole.values()) == pytest.approx(1.0, abs=1e-9)


def test_breakdown_empty_on_zero_energy():
    r = cbr("t1600-like", 0, duration=0)
    assert breakdown_report(r) == {}


def test_breakdown_lpi_idle_phy_share_drops():
    active = cbr("t1600-like", 0, duration=10 * MS)
    lpi = cbr("t1600-like", 0, duration=10 * MS,
              policy={"mode": "delay_variable", "sleep_kinds": ["PHY_Link"], "idle_threshold_ns": 10_000})
    assert breakdown_report(lpi)["PHY_Link"] < breakdown_report(active)["PHY_Link"]


def test_chassis_fill_shape():
    plain = [cbr("mx960-like", 0.5, populated=n) for n in (1, 2, 4)]
    curve = chassis_fill_curve(plain)
    assert [p.x for p in curve] == [1, 2, 4]
    assert curve[0].ecr > curve[1].ecr > curve[2].ecr
    dev = calibrate("mx960-like")
    managed = []
    for n in (1, 4):
        sched = capacity_matched_schedule(dev.chassis.fabric_planes, dev.chassis.power_supplies, n,
                                          dev.chassis.linecard_slots)
        managed.append(cbr("mx960-like", 0.5, populated=n, policy={
            "mode": "idle_management",
            "schedule": [{"at_ns": a.at, "action": a.action, "target": a.target} for a in sched]}))
    assert ecr(managed[0]) < ecr(plain[0])
    assert ecr(managed[1]) == pytest.approx(ecr(plain[2]), rel=1e-3)
    assert len(chassis_fill_curve(managed[:1])) == 1


def test_delay_summary_peak_mode(t1600_sweep):
    s = delay_summary(t1600_sweep[1])
    assert set(s) == {"BestEffort"}
    be = s["BestEffort"]
    assert be["violations"] == 0 and be["added_max_ns"] == 0
    assert be["min_ns"] == be["max_ns"] == pytest.approx(1200 + 5000)
    assert be["p50_ns"] == pytest.approx(6200, rel=0.02)
    assert total_violations(t1600_sweep[1]) == 0


def test_delay_summary_empty_without_delivery():
    assert delay_summary(cbr("t1600-like", 0)) == {}


def test_adversarial_sram_sleep_violates():
    r = scenario_from_dict({
        "device": "t1600-like", "populated": 1, "duration_ns": 100 * MS,
        "traffic": {"kind": "cbr", "load": 1600 / (0.0105 * 1e10), "packet_size": 200, "app_class": "Voice",
                    "ports": [0]},
        "policy": {"mode": "delay_variable", "gating": False, "sleep_kinds": ["SRAM_Bank"]}}).run()
    s = delay_summary(r)["Voice"]
    assert s["violations"] > 0 and s["added_max_ns"] > s["budget_ns"]


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0))
def test_ecr_identity_property(load):
    r = cbr("t1600-like", load, duration=2 * MS, populated=1)
    e = ecr(r)
    assert e is not None and math.isfinite(e)
    assert e * r.delivered_gbps == pytest.approx(r.average_power, rel=1e-9)
