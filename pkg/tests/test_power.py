import json
from importlib.resources import files

import pytest
from hypothesis import given, strategies as st

from chronowatt.errors import CalibrationError, ParameterError, RangeError
from chronowatt.power import (MODEL_DIR_ENV, all_in_state, calibrate, device_power, dynamic_power,
                              instantaneous_power, load_device_model, state_draw, uniform_rates)

T1600 = {0.0: 5376, 0.25: 5423, 0.5: 5616, 1.0: 5856}
MX960 = {0.0: 2925, 0.25: 3110, 0.5: 3209, 1.0: 3289}


@pytest.fixture(scope="module")
def t1600():
    return calibrate("t1600-like")


@pytest.fixture(scope="module")
def mx960():
    return calibrate("mx960-like")


def _watts(dev, load, size=1500):
    return instantaneous_power(dev, all_in_state(dev, "Active"), uniform_rates(dev, load, size))


def test_device_power_interpolation():
    cal = load_device_model("t1600-like").calibration
    assert device_power(cal, 0.0) == 5376
    assert device_power(cal, 1.0) == 5856
    assert device_power(cal, 0.375) == pytest.approx(5519.5)
    with pytest.raises(RangeError):
        device_power(cal, 1.01)


@pytest.mark.parametrize("name,table", [("t1600-like", T1600), ("mx960-like", MX960)])
def test_anchor_reproduction(name, table):
    dev = calibrate(name)
    for load, watts in table.items():
        assert _watts(dev, load) == pytest.approx(watts, abs=1e-3)


@pytest.mark.parametrize("name", ["t1600-like", "mx960-like"])
@given(st.floats(0, 1), st.floats(0, 1))
def test_monotone_in_load(name, a, b):
    cal = load_device_model(name).calibration
    lo, hi = sorted((a, b))
    assert device_power(cal, lo) <= device_power(cal, hi)


def test_phy_share_of_linecard_power(t1600):
    rates = uniform_rates(t1600, 1.0, 1500)
    card, phy = 0.0, 0.0
    for c in t1600.components:
        if c.scope != "linecard":
            continue
        w = c.draw("Active") + float(dynamic_power(c, t1600.shape, 1500, *rates[c.name]))
        card += w
        if c.kind == "PHY_Link":
            phy += w
    assert phy / card == pytest.approx(0.10, abs=1e-4)


def test_share_conservation(t1600):
    per_kind, total = {}, 0.0
    for c in t1600.components:
        if c.scope == "linecard":
            per_kind[c.kind] = per_kind.get(c.kind, 0.0) + c.draw("Active")
            total += c.draw("Active")
    expected = {"PHY_Link": 0.10, "NPU_Core": 0.35, "LookupEngine": 0.10, "SRAM_Bank": 0.15, "Serdes": 0.12,
                "EmbeddedCPU": 0.08, "PowerSupply": 0.10}
    for kind, share in expected.items():
        assert per_kind[kind] / total == pytest.approx(share, abs=1e-6)


def test_small_packets_cost_more(t1600):
    assert _watts(t1600, 1.0, 64) >= _watts(t1600, 1.0, 1500)
    assert _watts(t1600, 1.0, 64) == pytest.approx(5856 * 1.05)


def test_all_off_is_common_draw(mx960):
    assert instantaneous_power(mx960, all_in_state(mx960, "Off")) == pytest.approx(mx960.common_draw)


def test_transition_draws_max(t1600):
    npu = t1600.by_name()["lc0/npu"]
    assert state_draw(npu, ("Transition", "Active", "LowPowerIdle")) == npu.draw("Active")
    phy = t1600.by_name()["lc0/phy0"]
    assert state_draw(phy, "Quiet") == pytest.approx(0.1 * phy.draw("Active"))
    with pytest.raises(ParameterError):
        state_draw(npu, "Quiet")


def test_chassis_additivity(mx960):
    def idle(dev):
        return instantaneous_power(dev, all_in_state(dev, "Active"))
    one, three = idle(mx960.with_fill(1)), idle(mx960.with_fill(3))
    assert three - one == pytest.approx(2 * (idle(mx960.with_fill(2)) - one))


def test_wake_delay(t1600):
    by = t1600.by_name()
    assert by["lc0/phy0"].wake_delay == 230_000
    assert by["lc0/sram"].wake_delay == 31_000_000
    assert not by["lc0/cpu"].can_sleep


def test_bad_shares():
    with pytest.raises(CalibrationError):
        calibrate("t1600-like", {"PHY_Link": 0.5})


def test_model_dir_env(tmp_path, monkeypatch):
    src = files("chronowatt") / "data" / "mx960-like.json"
    custom = json.loads(src.read_text())
    custom["name"] = "custom-box"
    (tmp_path / "custom-box.json").write_text(json.dumps(custom))
    monkeypatch.setenv(MODEL_DIR_ENV, str(tmp_path))
    assert load_device_model("custom-box").name == "custom-box"


def test_unknown_model():
    with pytest.raises((FileNotFoundError, ParameterError)):
        load_device_model("no-such-box")
