import pytest

from chronowatt.errors import ParameterError, ScenarioError
from chronowatt.policy import (ComponentView, Mode, PolicyConfig, ScheduledAction, capacity_matched_schedule,
                               delay_variable_tick, duration_class_range, idle_management_apply,
                               idle_threshold_for, required_infrastructure, validate_schedule, wake_on_demand)

US, MS = 1_000, 1_000_000
DV = PolicyConfig(mode=Mode.DELAY_VARIABLE, idle_threshold=100 * US)


def view(kind="PHY_Link", last_busy=0, wake=10 * US, classes=("Voice",), entry=200 * US):
    return ComponentView("c", kind, True, last_busy, wake, entry, {c: 0 for c in classes})


def test_phy_sleeps_under_voice():
    assert delay_variable_tick(view(), DV, 500 * US) is not None


def test_sram_never_sleeps_under_voice():
    cfg = PolicyConfig(mode=Mode.DELAY_VARIABLE, idle_threshold=100 * US, declared_classes=("Voice",))
    v = view("SRAM_Bank", wake=30 * MS, classes=())
    assert delay_variable_tick(v, cfg, 3600 * 10**9) is None


def test_below_threshold():
    assert delay_variable_tick(view(), DV, 50 * US) is None


def test_mode_and_kind_filters():
    assert delay_variable_tick(view(), PolicyConfig(idle_threshold=1), 10**9) is None
    cfg = PolicyConfig(mode="delay_variable", idle_threshold=1, sleep_kinds=("Serdes",))
    assert delay_variable_tick(view(), cfg, 10**9) is None
    v = view()
    v.managed = True
    assert delay_variable_tick(v, DV, 10**9) is None


def test_gating_off_allows_anything():
    cfg = PolicyConfig(mode="delay_variable", idle_threshold=1, gating=False)
    assert delay_variable_tick(view("SRAM_Bank", wake=30 * MS), cfg, 10**9) is not None


def test_classes_age_out_of_window():
    cfg = PolicyConfig(mode="delay_variable", idle_threshold=1, class_window=1_000)
    v = ComponentView("c", "Custom", True, 0, 5 * MS, 0, {"MC": 0})
    assert delay_variable_tick(v, cfg, 500) is None
    assert delay_variable_tick(v, cfg, 5_000) is not None


def test_default_threshold():
    assert idle_threshold_for(view(entry=200 * US), PolicyConfig()) == 2 * MS
    assert idle_threshold_for(view(entry=0), PolicyConfig()) == 1_000


def test_config_validation():
    with pytest.raises(ParameterError):
        PolicyConfig(idle_threshold=0)
    with pytest.raises(ValueError):
        PolicyConfig(mode="turbo")
    assert PolicyConfig(mode="combined").delay_variable and PolicyConfig(mode="combined").idle_management


def test_scheduled_action_validation():
    with pytest.raises(ParameterError):
        ScheduledAction(0, "explode", "lc0")
    with pytest.raises(ParameterError):
        ScheduledAction(-1, "activate_psu", "psu0")
    with pytest.raises(ParameterError):
        ScheduledAction(0, "activate_psu", "psu0", "whenever")


def test_duration_classes():
    lo, hi = duration_class_range("dynamic_capacity_increase")
    assert lo == 10**9 and hi == 60 * 10**9
    assert duration_class_range("planned_non_operation")[1] is None


def test_apply_schedule():
    chassis = {"lc0": "Active", "lc1": "Off", "fabric0": "Active", "fabric1": "Off", "psu0": "Active", "psu1": "Off"}
    assert idle_management_apply([], chassis, 0) == []
    cmds = idle_management_apply([ScheduledAction(5, "deactivate_linecard", "lc0"),
                                  ScheduledAction(9, "activate_psu", "psu1")], chassis, 5)
    assert [(c.action, c.target) for c in cmds] == [("deactivate", "lc0")]
    up = idle_management_apply([ScheduledAction(0, "capacity_upgrade", "lc1")], chassis, 0, slots=2)
    assert ("activate", "lc1") in [(c.action, c.target) for c in up]
    assert ("activate", "fabric1") in [(c.action, c.target) for c in up]
    assert ("activate", "psu1") in [(c.action, c.target) for c in up]


def test_wake_on_demand():
    cfg = PolicyConfig()
    assert wake_on_demand("lc0", "Off", 0, cfg).action == "activate"
    assert wake_on_demand("lc0", "Active", 0, cfg).action == "noop"
    assert wake_on_demand("lc0", "BringingUp", 0, cfg).action == "merged"
    assert wake_on_demand("lc0", "Off", 0, PolicyConfig(summons_enabled=False)).action == "rejected"


def test_infrastructure_sizing():
    assert required_infrastructure(4, 1, 4) == 1
    assert required_infrastructure(4, 3, 4) == 3
    assert required_infrastructure(4, 0, 4) == 1
    plan = capacity_matched_schedule(4, 4, 1, 4)
    assert sorted(a.target for a in plan) == ["fabric1", "fabric2", "fabric3", "psu1", "psu2", "psu3"]
    assert capacity_matched_schedule(4, 4, 4, 4) == []


def test_validate_schedule():
    validate_schedule([ScheduledAction(0, "deactivate_linecard", "lc0")], ["lc0", "psu0"])
    with pytest.raises(ScenarioError) as exc:
        validate_schedule([ScheduledAction(0, "deactivate_linecard", "lc9")], ["lc0"])
    assert exc.value.field == "policy.schedule[0].target"
    with pytest.raises(ScenarioError):
        validate_schedule([ScheduledAction(0, "deactivate_psu", "lc0")], ["lc0"])
