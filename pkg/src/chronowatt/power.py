"""Chassis -> linecard -> component power hierarchy.

Every component has a static draw per power state and a dynamic term driven
by the traffic it processes. Calibration distributes a device-level
elasticity curve (watts at a handful of load points) over the components
according to their linecard budget shares.

Dynamic power follows the calibrated curve shape rather than a single
joules-per-bit constant: a linear per-bit model cannot hit the published
intermediate load points. ``per_bit_energy`` is therefore the average J/bit
at full load and ``elasticity`` scales it with utilization.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CalibrationError, ParameterError, RangeError
from .lpi import LpiParams, Phase, phase_power_fraction

COMPONENT_KINDS = ("PHY_Link", "Serdes", "NPU_Core", "SRAM_Bank", "EmbeddedCPU", "CentralCPU",
                   "FabricPlane", "PowerSupply", "LookupEngine", "Buffer_Memory")
STATE_NAMES = ("Active", "LowPowerIdle", "Off")
MODEL_DIR_ENV = "CHRONOWATT_MODEL_DIR"

DEFAULT_SHARES = {
    "PHY_Link": 0.10, "NPU_Core": 0.35, "LookupEngine": 0.10, "SRAM_Bank": 0.15,
    "Serdes": 0.12, "EmbeddedCPU": 0.08, "PowerSupply": 0.10,
}


@dataclass(frozen=True)
class PowerStateSpec:
    name: str
    static_draw: float
    per_bit_energy: float = 0.0
    per_packet_energy: float = 0.0
    functional: bool = False

    def __post_init__(self):
        if self.name not in STATE_NAMES:
            raise ParameterError(f"unknown power state {self.name!r}")
        if self.static_draw < 0:
            raise ParameterError("static_draw must be non-negative")


@dataclass(frozen=True)
class TransitionSpec:
    from_state: str
    to_state: str
    duration: int
    energy: float = 0.0

    def __post_init__(self):
        if self.duration < 0 or self.energy < 0:
            raise ParameterError("transition duration and energy must be non-negative")


@dataclass(frozen=True)
class ComponentTemplate:
    """Per-linecard component description as written in a device model file."""

    name: str
    kind: str
    budget_share: float
    per_port: bool = False
    in_path: bool = False
    low_power_fraction: float | None = None
    sleep_ns: int = 0
    wake_ns: int = 0
    bringup_ns: int = 0
    off_floor_w: float = 0.0
    low_power_floor_w: float | None = None
    transition_energy_j: float = 0.0
    lpi: LpiParams | None = None

    def __post_init__(self):
        if self.kind not in COMPONENT_KINDS:
            raise ParameterError(f"unknown component kind {self.kind!r}")

    @property
    def can_sleep(self) -> bool:
        return self.lpi is not None or self.low_power_fraction is not None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ComponentTemplate":
        doc = dict(doc)
        lpi = doc.pop("lpi", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ParameterError(f"unknown component keys: {sorted(unknown)}")
        for k in ("sleep_ns", "wake_ns", "bringup_ns"):
            if k in doc:
                doc[k] = int(doc[k])
        return cls(**doc, lpi=LpiParams.from_dict(lpi) if lpi is not None else None)


@dataclass(frozen=True)
class LinecardSpec:
    ports: int
    port_rate_bps: float
    components: tuple[ComponentTemplate, ...]
    pipeline_latency_ns: int = 5000
    buffer_bytes: int = 1_000_000

    @property
    def capacity_bps(self) -> float:
        return self.ports * self.port_rate_bps

    def bringup_chain(self) -> int:
        """Off -> functional time: components of each kind come up in sequence."""
        per_kind: dict[str, int] = {}
        for c in self.components:
            per_kind[c.kind] = max(per_kind.get(c.kind, 0), c.bringup_ns)
        return sum(per_kind.values())


@dataclass(frozen=True)
class ChassisSpec:
    linecard_slots: int
    populated: tuple[LinecardSpec, ...]
    fabric_planes: int = 0
    fabric_plane_draw_w: float = 0.0
    fabric_bringup_ns: int = 0
    power_supplies: int = 1
    psu_overhead_w: float = 0.0
    psu_efficiency: float = 1.0
    psu_bringup_ns: int = 0
    common_draw_w: float = 0.0

    def __post_init__(self):
        if len(self.populated) > self.linecard_slots:
            raise ParameterError("more populated linecards than slots")
        if not 0 < self.psu_efficiency <= 1:
            raise ParameterError("psu_efficiency must lie in (0, 1]")

    def with_fill(self, n: int) -> "ChassisSpec":
        if not 0 <= n <= self.linecard_slots:
            raise ParameterError(f"fill {n} outside [0, {self.linecard_slots}]")
        card = self.populated[0]
        return replace(self, populated=tuple([card] * n))


@dataclass(frozen=True)
class ElasticityCalibration:
    anchors: tuple[tuple[float, float], ...]
    capacity_bps: float
    reference_packet_bytes: int = 1500
    small_packet_bytes: int = 64
    small_packet_penalty: float = 0.05

    def __post_init__(self):
        us = [u for u, _ in self.anchors]
        if len(us) < 2 or us[0] != 0.0 or us[-1] != 1.0:
            raise ParameterError("anchors must include load 0 and load 1")
        if any(b <= a for a, b in zip(us, us[1:])):
            raise ParameterError("anchor loads must be strictly increasing")
        if self.capacity_bps <= 0:
            raise ParameterError("capacity must be positive")

    @property
    def loads(self) -> np.ndarray:
        return np.array([u for u, _ in self.anchors])

    @property
    def watts(self) -> np.ndarray:
        return np.array([w for _, w in self.anchors], dtype=float)

    @property
    def idle_watts(self) -> float:
        return float(self.anchors[0][1])

    @property
    def full_watts(self) -> float:
        return float(self.anchors[-1][1])

    def shape(self) -> "ElasticityShape":
        delta = self.watts - self.idle_watts
        full = delta[-1]
        norm = delta / full if full > 0 else np.where(self.loads > 0, 1.0, 0.0) * 0.0
        return ElasticityShape(tuple(self.loads.tolist()), tuple(norm.tolist()))


@dataclass(frozen=True)
class ElasticityShape:
    """Normalized dynamic-power curve: ``f(0) = 0``, ``f(1) = 1``, linear beyond 1."""

    loads: tuple[float, ...]
    values: tuple[float, ...]

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        xs, ys = self.loads, self.values
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out = np.interp(u, xs, ys)
        return np.where(u > 1.0, ys[-1] + slope * (u - 1.0), out)


def device_power(cal: ElasticityCalibration, load: float) -> float:
    """Device watts at ``load`` by piecewise-linear interpolation through the anchors."""
    if not 0.0 <= load <= 1.0 or math.isnan(load):
        raise RangeError(f"load {load} outside [0, 1]")
    return float(np.interp(load, cal.loads, cal.watts))


@dataclass(frozen=True)
class DeviceModel:
    name: str
    chassis: ChassisSpec
    calibration: ElasticityCalibration
    description: str = ""

    @property
    def capacity_bps(self) -> float:
        return self.calibration.capacity_bps

    @classmethod
    def from_dict(cls, doc: Mapping) -> "DeviceModel":
        try:
            lc = doc["linecard"]
            card = LinecardSpec(
                ports=int(lc["ports"]), port_rate_bps=float(lc["port_rate_bps"]),
                components=tuple(ComponentTemplate.from_dict(c) for c in lc["components"]),
                pipeline_latency_ns=int(lc.get("pipeline_latency_ns", 5000)),
                buffer_bytes=int(lc.get("buffer_bytes", 1_000_000)))
            ch = dict(doc["chassis"])
            populated = int(ch.pop("populated", ch["linecard_slots"]))
            for k in ("fabric_bringup_ns", "psu_bringup_ns"):
                if k in ch:
                    ch[k] = int(ch[k])
            chassis = ChassisSpec(populated=tuple([card] * populated), **ch)
            c = doc["calibration"]
            cal = ElasticityCalibration(
                tuple((float(u), float(w)) for u, w in c["anchors"]), float(doc["capacity_bps"]),
                int(c.get("reference_packet_bytes", 1500)), int(c.get("small_packet_bytes", 64)),
                float(c.get("small_packet_penalty", 0.05)))
        except KeyError as exc:
            raise ParameterError(f"device model missing field {exc.args[0]!r}") from None
        return cls(doc.get("name", "unnamed"), chassis, cal, doc.get("description", ""))


def model_search_path() -> list[Path]:
    paths = []
    env = os.environ.get(MODEL_DIR_ENV)
    if env:
        paths.extend(Path(p) for p in env.split(os.pathsep) if p)
    return paths


def load_device_model(ref: str | Path | Mapping) -> DeviceModel:
    """Load a model by shipped name (``"t1600-like"``), file path, or inline document."""
    if isinstance(ref, Mapping):
        return DeviceModel.from_dict(ref)
    ref = str(ref)
    candidates = [Path(ref)] if ref.endswith(".json") else []
    candidates += [d / f"{ref}.json" for d in model_search_path()]
    for path in candidates:
        if path.is_file():
            return DeviceModel.from_dict(json.loads(path.read_text("utf-8")))
    shipped = resources.files("chronowatt").joinpath(f"data/{ref}.json")
    if shipped.is_file():
        return DeviceModel.from_dict(json.loads(shipped.read_text("utf-8")))
    raise FileNotFoundError(f"device model {ref!r} not found")


# --- calibrated instances ------------------------------------------------------------

@dataclass(frozen=True)
class ComponentCoefficients:
    static_draw: float  # Active static draw, watts (DC side unless ac_side)
    per_bit_energy: float  # J/bit at full load
    per_packet_energy: float  # J/packet beyond the reference-size packet rate
    capacity_bps: float


@dataclass(frozen=True)
class ComponentSpec:
    """A calibrated component instance inside a device."""

    name: str
    kind: str
    states: tuple[PowerStateSpec, ...]
    transitions: tuple[TransitionSpec, ...]
    budget_share: float
    coefficients: ComponentCoefficients
    scope: str = "linecard"  # or "chassis"
    card: int | None = None
    ports: tuple[int, ...] = ()  # global port indices served
    in_path: bool = False
    lpi: LpiParams | None = None
    ac_side: bool = False

    def __post_init__(self):
        if sum(1 for s in self.states if s.name == "Active") != 1:
            raise ParameterError(f"{self.name}: exactly one Active state required")

    def state(self, name: str) -> PowerStateSpec | None:
        for s in self.states:
            if s.name == name:
                return s
        return None

    def draw(self, name: str) -> float:
        s = self.state(name)
        if s is None:
            raise ParameterError(f"{self.name} has no state {name!r}")
        return s.static_draw

    def transition(self, src: str, dst: str) -> TransitionSpec | None:
        for t in self.transitions:
            if t.from_state == src and t.to_state == dst:
                return t
        return None

    @property
    def can_sleep(self) -> bool:
        return self.state("LowPowerIdle") is not None

    @property
    def wake_delay(self) -> int:
        """Worst-case added delay if the component is asleep: sleep sequence plus wake."""
        if self.lpi is not None:
            return self.lpi.t_s + self.lpi.t_w
        down = self.transition("Active", "LowPowerIdle")
        up = self.transition("LowPowerIdle", "Active")
        return (down.duration if down else 0) + (up.duration if up else 0)


@dataclass(frozen=True)
class CalibratedDevice:
    model: DeviceModel
    chassis: ChassisSpec
    components: tuple[ComponentSpec, ...]
    shape: ElasticityShape
    reference_packet_bytes: int
    device_packet_energy: float

    @property
    def efficiency(self) -> float:
        return self.chassis.psu_efficiency

    @property
    def common_draw(self) -> float:
        return self.chassis.common_draw_w

    def by_name(self) -> dict[str, ComponentSpec]:
        return {c.name: c for c in self.components}

    @property
    def n_ports(self) -> int:
        return sum(card.ports for card in self.chassis.populated)

    @property
    def capacity_bps(self) -> float:
        return sum(card.capacity_bps for card in self.chassis.populated)

    def with_fill(self, n: int) -> "CalibratedDevice":
        """Same calibration with only the first ``n`` linecards installed."""
        chassis = self.chassis.with_fill(n)
        comps = tuple(c for c in self.components if c.scope == "chassis" or c.card < n)
        return replace(self, chassis=chassis, components=comps)


def _share_table(templates: Sequence[ComponentTemplate], shares: Mapping[str, float] | None) -> dict[str, float]:
    table: dict[str, float] = {}
    for t in templates:
        table[t.kind] = table.get(t.kind, 0.0) + t.budget_share
    if shares is not None:
        unknown = set(shares) - set(table)
        if unknown:
            raise CalibrationError(f"shares given for kinds not on the linecard: {sorted(unknown)}")
        table.update({k: float(v) for k, v in shares.items()})
    total = sum(table.values())
    if abs(total - 1.0) > 1e-9:
        raise CalibrationError(f"budget shares sum to {total}, expected 1")
    if any(v < 0 for v in table.values()):
        raise CalibrationError("budget shares must be non-negative")
    return table


def calibrate_components(chassis: ChassisSpec, cal: ElasticityCalibration,
                         shares: Mapping[str, float] | None = None,
                         model: DeviceModel | None = None) -> CalibratedDevice:
    """Derive per-component coefficients from the device elasticity anchors.

    Idle and full-load device power are reproduced exactly at the reference
    packet size, and each component's share of linecard Active power equals
    its budget share.
    """
    if not chassis.populated:
        raise CalibrationError("calibration needs at least one populated linecard")
    card = chassis.populated[0]
    if any(c != card for c in chassis.populated):
        raise CalibrationError("calibration assumes identical linecards")
    n_cards = len(chassis.populated)
    eff = chassis.psu_efficiency
    psu_total = chassis.power_supplies * chassis.psu_overhead_w
    fabric_total = chassis.fabric_planes * chassis.fabric_plane_draw_w
    p0, p1 = cal.idle_watts, cal.full_watts
    card_idle = (eff * (p0 - chassis.common_draw_w - psu_total) - fabric_total) / n_cards
    card_delta = eff * (p1 - p0) / n_cards
    if card_idle <= 0:
        raise CalibrationError("chassis infrastructure exceeds the zero-load anchor")
    ref, small = cal.reference_packet_bytes, cal.small_packet_bytes
    pkt_rate_gap = cal.capacity_bps / 8.0 * (1.0 / small - 1.0 / ref)
    e_dev = cal.small_packet_penalty * p1 / pkt_rate_gap if pkt_rate_gap > 0 else 0.0

    table = _share_table(card.components, shares)
    kind_count: dict[str, int] = {}
    for t in card.components:
        kind_count[t.kind] = kind_count.get(t.kind, 0) + 1
    card_cap = card.capacity_bps

    comps: list[ComponentSpec] = []
    for ci in range(n_cards):
        for t in card.components:
            kind_share = table[t.kind] / kind_count[t.kind]
            instances = range(card.ports) if t.per_port else [None]
            for p in instances:
                share = kind_share / card.ports if t.per_port else kind_share
                cap = card.port_rate_bps if t.per_port else card_cap
                static = share * card_idle
                coeff = ComponentCoefficients(
                    static_draw=static,
                    per_bit_energy=share * card_delta / cap,
                    per_packet_energy=share * eff * e_dev * card_cap / cap,
                    capacity_bps=cap)
                name = f"lc{ci}/{t.name}" + (f"{p}" if p is not None else "")
                ports = (ci * card.ports + p,) if p is not None else tuple(range(ci * card.ports, (ci + 1) * card.ports))
                comps.append(_component_from_template(t, name, share, coeff, ci, ports))
    for k in range(chassis.fabric_planes):
        comps.append(_chassis_component(f"fabric{k}", "FabricPlane", chassis.fabric_plane_draw_w,
                                        chassis.fabric_bringup_ns, ac_side=False))
    for k in range(chassis.power_supplies):
        comps.append(_chassis_component(f"psu{k}", "PowerSupply", chassis.psu_overhead_w,
                                        chassis.psu_bringup_ns, ac_side=True))
    model = model or DeviceModel("custom", chassis, cal)
    return CalibratedDevice(model, chassis, tuple(comps), cal.shape(), ref, e_dev)


def _component_from_template(t: ComponentTemplate, name: str, share: float, coeff: ComponentCoefficients,
                             card: int, ports: tuple[int, ...]) -> ComponentSpec:
    static = coeff.static_draw
    states = [PowerStateSpec("Active", static, coeff.per_bit_energy, coeff.per_packet_energy, functional=True),
              PowerStateSpec("Off", t.off_floor_w)]
    transitions = [TransitionSpec("Off", "Active", t.bringup_ns, t.transition_energy_j),
                   TransitionSpec("Active", "Off", 0, 0.0)]
    if t.can_sleep:
        if t.lpi is not None:
            low = static * t.lpi.quiet_power_fraction
            down, up = t.lpi.t_s, t.lpi.t_w
        else:
            low = static * t.low_power_fraction
            down, up = t.sleep_ns, t.wake_ns
        if t.low_power_floor_w is not None:
            if t.low_power_floor_w > static:
                raise CalibrationError(f"{name}: low-power floor {t.low_power_floor_w} W exceeds its "
                                       f"calibrated share of {static:.3f} W")
            low = t.low_power_floor_w
        if t.off_floor_w > low:
            raise CalibrationError(f"{name}: Off floor exceeds LowPowerIdle draw")
        states.append(PowerStateSpec("LowPowerIdle", low))
        transitions += [TransitionSpec("Active", "LowPowerIdle", down, t.transition_energy_j),
                        TransitionSpec("LowPowerIdle", "Active", up, t.transition_energy_j),
                        TransitionSpec("LowPowerIdle", "Off", 0, 0.0)]
    elif t.off_floor_w > static:
        raise CalibrationError(f"{name}: Off floor exceeds Active draw")
    return ComponentSpec(name, t.kind, tuple(states), tuple(transitions), share, coeff,
                         "linecard", card, ports, t.in_path, t.lpi)


def _chassis_component(name: str, kind: str, draw: float, bringup: int, ac_side: bool) -> ComponentSpec:
    coeff = ComponentCoefficients(draw, 0.0, 0.0, 0.0)
    states = (PowerStateSpec("Active", draw, functional=True), PowerStateSpec("Off", 0.0))
    transitions = (TransitionSpec("Off", "Active", bringup), TransitionSpec("Active", "Off", 0))
    return ComponentSpec(name, kind, states, transitions, 0.0, coeff, "chassis", None, (), False, None, ac_side)


def calibrate(model: DeviceModel | str, shares: Mapping[str, float] | None = None) -> CalibratedDevice:
    if not isinstance(model, DeviceModel):
        model = load_device_model(model)
    return calibrate_components(model.chassis, model.calibration, shares, model)


# --- instantaneous power ---------------------------------------------------------------

def dynamic_power(comp: ComponentSpec, shape: ElasticityShape, ref_bytes: int, bps, pps):
    """Rate-driven part of a component's draw (DC watts unless ``ac_side``)."""
    c = comp.coefficients
    if c.capacity_bps <= 0:
        return np.zeros_like(np.asarray(bps, dtype=float))
    bps = np.asarray(bps, dtype=float)
    pps = np.asarray(pps, dtype=float)
    u = bps / c.capacity_bps
    out = c.per_bit_energy * c.capacity_bps * shape(u) + c.per_packet_energy * (pps - bps / (8.0 * ref_bytes))
    return np.maximum(out, 0.0)


def state_draw(comp: ComponentSpec, state) -> float:
    """Static draw for a state descriptor.

    ``state`` is a state name, an LPI phase name for links, or a
    ``("Transition", from, to)`` tuple; transitions draw the larger endpoint.
    """
    if isinstance(state, tuple):
        _, src, dst = state
        return max(state_draw(comp, src), state_draw(comp, dst))
    if state in STATE_NAMES:
        return comp.draw(state)
    phase = Phase(state)
    if comp.lpi is None:
        raise ParameterError(f"{comp.name} has no LPI phases")
    return comp.draw("Active") * phase_power_fraction(phase, comp.lpi)


def is_functional(state) -> bool:
    return state in ("Active", Phase.ACTIVE, Phase.ACTIVE.value)


def instantaneous_power(device: CalibratedDevice, states: Mapping[str, object],
                        rates: Mapping[str, tuple[float, float]] | None = None) -> float:
    """Device watts (wall side) for the given component states and traffic rates.

    Missing components are taken as Off. Only functional components take
    traffic; rates given for other components are ignored.
    """
    rates = rates or {}
    dc, ac = 0.0, 0.0
    for comp in device.components:
        state = states.get(comp.name, "Off")
        w = state_draw(comp, state)
        if is_functional(state) and comp.name in rates:
            bps, pps = rates[comp.name]
            w += float(dynamic_power(comp, device.shape, device.reference_packet_bytes, bps, pps))
        if comp.ac_side:
            ac += w
        else:
            dc += w
    return dc / device.efficiency + ac + device.common_draw


def uniform_rates(device: CalibratedDevice, load: float, packet_bytes: int) -> dict[str, tuple[float, float]]:
    """Per-component (bps, pps) when every port carries ``load`` of its line rate."""
    out = {}
    for comp in device.components:
        cap = comp.coefficients.capacity_bps
        if cap > 0:
            bps = load * cap
            out[comp.name] = (bps, bps / (8.0 * packet_bytes))
    return out


def all_in_state(device: CalibratedDevice, state: str = "Active") -> dict[str, str]:
    return {c.name: state for c in device.components}
