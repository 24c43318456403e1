"""Peak, delay-variable and idle-management energy policies.

Policies are plain functions called from the engine's event loop. They
look at a snapshot of runtime state and return requests or commands; the
engine applies them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import ParameterError, ScenarioError
from .sla import MarginalPolicy, SlaPolicy, strictest_allows


class Mode(str, Enum):
    PEAK_ONLY = "peak_only"
    DELAY_VARIABLE = "delay_variable"
    IDLE_MANAGEMENT = "idle_management"
    COMBINED = "combined"


ACTIONS = ("deactivate_linecard", "activate_linecard", "deactivate_fabric_plane", "activate_fabric_plane",
           "deactivate_psu", "activate_psu", "capacity_upgrade")

NS = {"seconds": 10**9, "minutes": 60 * 10**9, "hours": 3600 * 10**9, "days": 86400 * 10**9,
      "months": 30 * 86400 * 10**9, "no limit": None}

# Duration classes of slow network processes as (minimum, maximum).
SLOW_PROCESS_DURATION = {
    "dynamic_capacity_increase": ("seconds", "minutes"),
    "planned_capacity_upgrade": ("minutes", "hours"),
    "planned_non_operation": ("minutes", "no limit"),
    "short_term_pattern": ("minutes", "hours"),
    "long_term_pattern": ("days", "months"),
}


def duration_class_range(name: str) -> tuple[int, int | None]:
    lo, hi = SLOW_PROCESS_DURATION[name]
    return NS[lo], NS[hi]


@dataclass(frozen=True)
class ScheduledAction:
    at: int
    action: str
    target: str
    expected_duration_class: str | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ParameterError(f"unknown scheduled action {self.action!r}")
        if self.at < 0:
            raise ParameterError("scheduled actions cannot precede the run")
        if self.expected_duration_class is not None and self.expected_duration_class not in SLOW_PROCESS_DURATION:
            raise ParameterError(f"unknown duration class {self.expected_duration_class!r}")


@dataclass(frozen=True)
class Summons:
    at: int
    target: str


@dataclass(frozen=True)
class PolicyConfig:
    mode: Mode = Mode.PEAK_ONLY
    idle_threshold: int | None = None  # ns; None -> 10 x the component's sleep-entry time
    marginal_policy: MarginalPolicy = MarginalPolicy.TREAT_AS_NO
    schedule: tuple[ScheduledAction, ...] = ()
    gating: bool = True
    sleep_kinds: tuple[str, ...] | None = None
    class_window: int = 1_000_000_000
    declared_classes: tuple[str, ...] = ()
    summons_enabled: bool = True
    summons: tuple[Summons, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "marginal_policy", MarginalPolicy(self.marginal_policy))
        if self.idle_threshold is not None and self.idle_threshold <= 0:
            raise ParameterError("idle_threshold must be positive")

    @property
    def delay_variable(self) -> bool:
        return self.mode in (Mode.DELAY_VARIABLE, Mode.COMBINED)

    @property
    def idle_management(self) -> bool:
        return self.mode in (Mode.IDLE_MANAGEMENT, Mode.COMBINED)


@dataclass
class ComponentView:
    """What the delay-variable policy sees of one component."""

    name: str
    kind: str
    can_sleep: bool
    last_busy: int
    wake_delay: int
    sleep_entry: int
    classes_seen: Mapping[str, int] = field(default_factory=dict)  # class -> last time seen
    managed: bool = False  # owned by idle management right now


@dataclass(frozen=True)
class SleepRequest:
    component: str
    at: int


def idle_threshold_for(view: ComponentView, config: PolicyConfig) -> int:
    if config.idle_threshold is not None:
        return config.idle_threshold
    return max(10 * view.sleep_entry, 1000)


def gating_classes(view: ComponentView, config: PolicyConfig, now: int) -> set[str]:
    seen = {c for c, t in view.classes_seen.items() if now - t <= config.class_window}
    return seen | set(config.declared_classes)


def delay_variable_tick(view: ComponentView, config: PolicyConfig, now: int,
                        sla_policy: SlaPolicy | None = None) -> SleepRequest | None:
    """Request sleep once a component has idled past the threshold and its
    wake delay is tolerated by every traffic class it serves."""
    if not config.delay_variable or not view.can_sleep or view.managed:
        return None
    if config.sleep_kinds is not None and view.kind not in config.sleep_kinds:
        return None
    if now - view.last_busy < idle_threshold_for(view, config):
        return None
    if config.gating and not strictest_allows(view.wake_delay, gating_classes(view, config, now), view.kind,
                                             config.marginal_policy, sla_policy):
        return None
    return SleepRequest(view.name, now)


@dataclass(frozen=True)
class Command:
    at: int
    action: str  # activate / deactivate / noop / merged / rejected
    target: str
    source: str = "schedule"


def required_infrastructure(total: int, active_cards: int, slots: int) -> int:
    """Planes or PSUs needed to carry ``active_cards`` of ``slots``; at least one."""
    if total == 0:
        return 0
    return max(1, math.ceil(total * active_cards / slots))


def idle_management_apply(schedule: Sequence[ScheduledAction], chassis: Mapping[str, str], now: int,
                          slots: int | None = None) -> list[Command]:
    """Commands for the scheduled actions due at ``now``.

    ``chassis`` maps target names (``lc0``, ``fabric1``, ``psu0``...) to
    their current state: ``Active``, ``Off`` or ``BringingUp``.
    """
    cmds: list[Command] = []
    for a in schedule:
        if a.at != now:
            continue
        if a.action.startswith("deactivate"):
            cmds.append(Command(now, "deactivate", a.target))
        elif a.action.startswith("activate"):
            cmds.append(Command(now, "activate", a.target))
        else:  # capacity_upgrade: the card plus any fabric/PSU capacity it needs
            cmds.append(Command(now, "activate", a.target))
            cards = [k for k in chassis if k.startswith("lc")]
            active = sum(1 for k in cards if chassis[k] != "Off" or k == a.target)
            n_slots = slots or len(cards)
            for prefix in ("fabric", "psu"):
                units = sorted((k for k in chassis if k.startswith(prefix)), key=lambda k: int(k[len(prefix):]))
                need = required_infrastructure(len(units), active, n_slots)
                on = sum(1 for k in units if chassis[k] != "Off")
                for k in units:
                    if on >= need:
                        break
                    if chassis[k] == "Off":
                        cmds.append(Command(now, "activate", k))
                        on += 1
    return cmds


def wake_on_demand(target: str, state: str, now: int, config: PolicyConfig) -> Command:
    """Turn an external summons into an activation command."""
    if not config.summons_enabled:
        return Command(now, "rejected", target, "summons")
    if state == "Active":
        return Command(now, "noop", target, "summons")
    if state == "BringingUp":
        return Command(now, "merged", target, "summons")
    return Command(now, "activate", target, "summons")


def capacity_matched_schedule(fabric_planes: int, power_supplies: int, populated: int, slots: int,
                              at: int = 0) -> list[ScheduledAction]:
    """Deactivate fabric planes and PSUs that the installed linecards do not need."""
    out = []
    for prefix, total, action in (("fabric", fabric_planes, "deactivate_fabric_plane"),
                                  ("psu", power_supplies, "deactivate_psu")):
        need = required_infrastructure(total, populated, slots)
        for k in range(need, total):
            out.append(ScheduledAction(at, action, f"{prefix}{k}", "planned_non_operation"))
    return out


def validate_schedule(schedule: Iterable[ScheduledAction], targets: Iterable[str]) -> None:
    known = set(targets)
    for i, a in enumerate(schedule):
        if a.target not in known:
            raise ScenarioError(f"policy.schedule[{i}].target", f"no component named {a.target!r}")
        kind = a.action.split("_", 1)[1] if "_" in a.action else ""
        prefix = {"linecard": "lc", "fabric_plane": "fabric", "psu": "psu", "upgrade": "lc"}.get(kind)
        if prefix and not a.target.startswith(prefix):
            raise ScenarioError(f"policy.schedule[{i}].target", f"{a.action} cannot target {a.target!r}")
