"""Scenario files: JSON documents that fully determine a run."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .engine import EngineOptions, SimResult, Simulation
from .errors import ChronowattError, ScenarioError
from .lpi import LinkCapability, LpiParams, negotiate
from .policy import Mode, PolicyConfig, ScheduledAction, Summons, validate_schedule
from .power import CalibratedDevice, DeviceModel, calibrate, load_device_model
from .sla import APP_CLASSES, MarginalPolicy
from .traffic import (ArrivalStream, OnOffSourceParams, calibrate_peak_rate, deoverlap, generate_aggregate,
                      generate_cbr, generate_poisson, load_trace)

_ISO_DURATION = re.compile(
    r"^P(?:(?P<d>\d+(?:\.\d+)?)D)?(?:T(?:(?P<h>\d+(?:\.\d+)?)H)?(?:(?P<m>\d+(?:\.\d+)?)M)?(?:(?P<s>\d+(?:\.\d+)?)S)?)?$")


def parse_duration(value: Any, field_name: str = "duration") -> int:
    """Integer nanoseconds from an int or an ISO-8601 duration such as ``PT1.5S``."""
    if isinstance(value, bool):
        raise ScenarioError(field_name, "expected nanoseconds or an ISO-8601 duration")
    if isinstance(value, int):
        ns = value
    elif isinstance(value, float) and value.is_integer():
        ns = int(value)
    elif isinstance(value, str):
        m = _ISO_DURATION.match(value.strip())
        if not m or value.strip() in ("P", "PT") or value.strip().endswith("T"):
            raise ScenarioError(field_name, f"not an ISO-8601 duration: {value!r}")
        parts = {k: float(v) if v else 0.0 for k, v in m.groupdict().items()}
        seconds = parts["d"] * 86400 + parts["h"] * 3600 + parts["m"] * 60 + parts["s"]
        ns = int(round(seconds * 1e9))
    else:
        raise ScenarioError(field_name, "expected nanoseconds or an ISO-8601 duration")
    if ns < 0 or ns > 2**63 - 1:
        raise ScenarioError(field_name, "duration outside the 64-bit nanosecond clock")
    return ns


def derive_seed(seed: int, index: int) -> int:
    """Independent child seed for the ``index``-th traffic spec."""
    ss = np.random.SeedSequence(seed & (2**64 - 1), spawn_key=(1_000_003, index))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class Scenario:
    device: CalibratedDevice
    traffic: list[dict]
    policy: PolicyConfig
    duration: int
    seed: int = 0
    options: EngineOptions = field(default_factory=EngineOptions)
    outputs: dict = field(default_factory=dict)
    name: str = "scenario"
    meta: dict = field(default_factory=dict)

    def port_streams(self) -> dict[int, ArrivalStream]:
        return build_port_streams(self.device, self.traffic, self.duration, self.seed)

    def run(self, event_log=None) -> SimResult:
        streams = self.port_streams()
        sim = Simulation(self.device, streams, self.policy, self.duration, self.options, event_log=event_log,
                         meta=dict(self.meta))
        return sim.run()


# --- traffic ---------------------------------------------------------------------

def _ports(spec: Mapping, device: CalibratedDevice, where: str) -> list[int]:
    ports = spec.get("ports", "all")
    n = device.n_ports
    if ports == "all":
        return list(range(n))
    if not isinstance(ports, list) or not ports:
        raise ScenarioError(f"{where}.ports", "expected 'all' or a non-empty list of port indices")
    for p in ports:
        if not isinstance(p, int) or not 0 <= p < n:
            raise ScenarioError(f"{where}.ports", f"port {p!r} outside 0..{n - 1}")
    return ports


def _class(spec: Mapping, where: str) -> str:
    cls = spec.get("app_class", "BestEffort")
    if cls not in APP_CLASSES:
        raise ScenarioError(f"{where}.app_class", f"unknown application class {cls!r}")
    return cls


def _spec_streams(spec: Mapping, device: CalibratedDevice, duration: int, seed: int,
                  where: str) -> dict[int, ArrivalStream]:
    kind = spec.get("kind")
    rate = device.chassis.populated[0].port_rate_bps if device.chassis.populated else 0.0
    size = int(spec.get("packet_size", 1500))
    out: dict[int, list[ArrivalStream]] = {}
    if kind == "cbr":
        load = float(spec.get("load", 0.0))
        if not 0 <= load <= 1:
            raise ScenarioError(f"{where}.load", "load must lie in [0, 1]")
        cls = _class(spec, where)
        start = parse_duration(spec.get("start_ns", 0), f"{where}.start_ns")
        for p in _ports(spec, device, where):
            out[p] = [generate_cbr(load * rate, duration, size, cls, flow=p, start=start)]
    elif kind == "poisson":
        cls = _class(spec, where)
        ports = _ports(spec, device, where)
        pps = spec.get("rate_pps")
        if pps is None:
            pps = float(spec.get("load", 0.0)) * rate / (8.0 * size)
        for i, p in enumerate(ports):
            out[p] = [generate_poisson(float(pps), duration, derive_seed(seed, i), size, cls, flow=p)]
    elif kind == "onoff":
        raw = spec.get("sources")
        raw = [raw] if isinstance(raw, Mapping) else raw
        if not raw:
            raise ScenarioError(f"{where}.sources", "at least one source parameter set is required")
        try:
            sources = [OnOffSourceParams.from_dict(dict(s)) for s in raw]
        except (TypeError, ChronowattError) as exc:
            raise ScenarioError(f"{where}.sources", str(exc)) from None
        count = int(spec.get("count", 1))
        ports = _ports(spec, device, where)
        if "target_utilization" in spec:
            sources = calibrate_peak_rate(sources, count, duration, seed, float(spec["target_utilization"]),
                                          rate * len(ports))
        agg = generate_aggregate(sources, count, duration, seed)
        for j, p in enumerate(ports):
            sel = agg.select_flows(range(j, count * len(sources), len(ports)))
            out[p] = [sel]
    elif kind == "trace":
        if "path" not in spec:
            raise ScenarioError(f"{where}.path", "trace path is required")
        port = int(spec.get("port", 0))
        _ports({"ports": [port]}, device, where)
        out[port] = [load_trace(spec["path"])]
    elif kind == "packets":
        pk = spec.get("packets")
        if not isinstance(pk, list):
            raise ScenarioError(f"{where}.packets", "expected a list of [time_ns, size, class, port] rows")
        by_port: dict[int, list] = {}
        for i, row in enumerate(pk):
            try:
                t, sz, cls, port = row
            except (TypeError, ValueError):
                raise ScenarioError(f"{where}.packets[{i}]", "expected [time_ns, size, class, port]") from None
            by_port.setdefault(int(port), []).append((int(t), int(sz), APP_CLASSES.index(cls)))
        for port, rows in by_port.items():
            _ports({"ports": [port]}, device, where)
            rows.sort(key=lambda r: r[0])
            ts, sz, cl = zip(*rows)
            out[port] = [ArrivalStream.from_packets(np.array(ts), np.array(sz), np.array(cl, np.int8))]
    else:
        raise ScenarioError(f"{where}.kind", f"unknown traffic kind {kind!r}")
    return {p: ArrivalStream.merge(s) for p, s in out.items()}


def build_port_streams(device: CalibratedDevice, traffic: list[dict], duration: int,
                       seed: int) -> dict[int, ArrivalStream]:
    per_port: dict[int, list[ArrivalStream]] = {}
    for i, spec in enumerate(traffic):
        for p, s in _spec_streams(spec, device, duration, derive_seed(seed, i), f"traffic[{i}]").items():
            per_port.setdefault(p, []).append(s)
    return {p: deoverlap(ArrivalStream.merge(s)) for p, s in per_port.items()}


def declared_classes(traffic: list[dict]) -> tuple[str, ...]:
    classes = set()
    for spec in traffic:
        if spec.get("kind") == "onoff":
            raw = spec.get("sources")
            for s in [raw] if isinstance(raw, Mapping) else raw or []:
                classes.add(s.get("app_class", "BestEffort"))
        elif spec.get("kind") == "packets":
            classes.update(row[2] for row in spec.get("packets", []))
        elif spec.get("kind") != "trace":
            classes.add(spec.get("app_class", "BestEffort"))
    return tuple(sorted(c for c in classes if c in APP_CLASSES))


# --- device and policy ---------------------------------------------------------------

def _with_lpi(model: DeviceModel, params: LpiParams | None) -> DeviceModel:
    def fix(card):
        comps = tuple(replace(c, lpi=params) if c.kind == "PHY_Link" else c for c in card.components)
        return replace(card, components=comps)

    chassis = model.chassis
    return replace(model, chassis=replace(chassis, populated=tuple(fix(c) for c in chassis.populated)))


def resolve_device(doc: Mapping) -> CalibratedDevice:
    ref = doc.get("device", "t1600-like")
    try:
        model = load_device_model(ref)
    except ChronowattError as exc:
        raise ScenarioError("device", str(exc)) from None
    except FileNotFoundError:
        raise ScenarioError("device", f"no device model named {ref!r}") from None
    fill = doc.get("populated")
    if fill is not None and (not isinstance(fill, int) or isinstance(fill, bool)
                             or not 1 <= fill <= model.chassis.linecard_slots):
        raise ScenarioError("populated", f"expected an integer in 1..{model.chassis.linecard_slots}")
    lpi_doc = doc.get("lpi")
    if lpi_doc is not None:
        lpi_doc = dict(lpi_doc)
        peer = lpi_doc.pop("peer", None)
        enabled = lpi_doc.pop("enabled", True)
        refresh_from = lpi_doc.pop("refresh_from", "local")
        phy = next((c for c in model.chassis.populated[0].components if c.kind == "PHY_Link"), None)
        base = phy.lpi if phy is not None and phy.lpi is not None else LpiParams()
        try:
            local = LpiParams.from_dict({**base.to_dict(), **lpi_doc})
            params = local if enabled else None
            if peer is not None and params is not None:
                peer = dict(peer)
                supported = peer.pop("supported", True)
                params = negotiate(LinkCapability(local), LinkCapability(LpiParams.from_dict({**base.to_dict(), **peer}),
                                                                         supported), refresh_from)
        except ChronowattError as exc:
            raise ScenarioError("lpi", str(exc)) from None
        model = _with_lpi(model, params)
    try:
        device = calibrate(model, doc.get("shares"))
    except ChronowattError as exc:
        raise ScenarioError("shares" if "shares" in doc else "device", str(exc)) from None
    # calibration covers the shipped configuration; fill only removes cards
    return device.with_fill(fill) if fill is not None else device


def parse_policy(doc: Mapping, device: CalibratedDevice, traffic: list[dict]) -> PolicyConfig:
    doc = dict(doc or {})
    try:
        mode = Mode(doc.get("mode", "peak_only"))
    except ValueError:
        raise ScenarioError("policy.mode", f"unknown mode {doc.get('mode')!r}") from None
    try:
        marginal = MarginalPolicy(doc.get("marginal_policy", "treat_as_no"))
    except ValueError:
        raise ScenarioError("policy.marginal_policy", "expected treat_as_yes or treat_as_no") from None
    schedule = []
    for i, a in enumerate(doc.get("schedule", [])):
        try:
            schedule.append(ScheduledAction(parse_duration(a.get("at_ns", a.get("at", 0)), f"policy.schedule[{i}].at"),
                                            a["action"], a["target"], a.get("expected_duration_class")))
        except KeyError as exc:
            raise ScenarioError(f"policy.schedule[{i}].{exc.args[0]}", "required") from None
        except ChronowattError as exc:
            raise ScenarioError(f"policy.schedule[{i}]", str(exc)) from None
    if schedule and mode not in (Mode.IDLE_MANAGEMENT, Mode.COMBINED):
        raise ScenarioError("policy.schedule", "a schedule needs mode idle_management or combined")
    targets = [f"lc{i}" for i in range(len(device.chassis.populated))]
    targets += [c.name for c in device.components if c.scope == "chassis"]
    validate_schedule(schedule, targets)
    summons = []
    for i, s in enumerate(doc.get("summons", [])):
        if s.get("target") not in targets:
            raise ScenarioError(f"policy.summons[{i}].target", f"no component named {s.get('target')!r}")
        summons.append(Summons(parse_duration(s.get("at_ns", 0), f"policy.summons[{i}].at_ns"), s["target"]))
    threshold = doc.get("idle_threshold_ns")
    if threshold is not None:
        threshold = parse_duration(threshold, "policy.idle_threshold_ns")
        if threshold <= 0:
            raise ScenarioError("policy.idle_threshold_ns", "must be positive")
    kinds = doc.get("sleep_kinds")
    return PolicyConfig(
        mode=mode, idle_threshold=threshold, marginal_policy=marginal, schedule=tuple(schedule),
        gating=bool(doc.get("gating", True)), sleep_kinds=tuple(kinds) if kinds is not None else None,
        class_window=parse_duration(doc.get("class_window_ns", 1_000_000_000), "policy.class_window_ns"),
        declared_classes=tuple(doc.get("declared_classes", declared_classes(traffic))),
        summons_enabled=bool(doc.get("summons_enabled", True)), summons=tuple(summons))


def scenario_from_dict(doc: Mapping, seed: int | None = None) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    device = resolve_device(doc)
    traffic = doc.get("traffic", [])
    traffic = [traffic] if isinstance(traffic, Mapping) else list(traffic)
    if "duration_ns" in doc:
        duration = parse_duration(doc["duration_ns"], "duration_ns")
    elif "duration" in doc:
        duration = parse_duration(doc["duration"], "duration")
    else:
        raise ScenarioError("duration_ns", "required")
    run_seed = int(doc.get("seed", 0) if seed is None else seed)
    policy = parse_policy(doc.get("policy", {}), device, traffic)
    eng = dict(doc.get("engine", {}))
    unknown = set(eng) - {"accounting_window_ns", "lpi_timer_events", "record_history", "pipeline_latency_ns",
                          "buffer_bytes", "coalesce_bursts"}
    if unknown:
        raise ScenarioError(f"engine.{sorted(unknown)[0]}", "unknown engine setting")
    window = parse_duration(eng.get("accounting_window_ns", 1_000_000), "engine.accounting_window_ns")
    if window <= 0:
        raise ScenarioError("engine.accounting_window_ns", "must be positive")
    options = EngineOptions(window, bool(eng.get("lpi_timer_events", False)), bool(eng.get("record_history", False)),
                            eng.get("pipeline_latency_ns"), eng.get("buffer_bytes"),
                            bool(eng.get("coalesce_bursts", True)))
    # validate traffic eagerly so errors surface before the run
    for i, spec in enumerate(traffic):
        if not isinstance(spec, Mapping):
            raise ScenarioError(f"traffic[{i}]", "expected an object")
        if spec.get("kind") not in ("cbr", "poisson", "onoff", "trace", "packets"):
            raise ScenarioError(f"traffic[{i}].kind", f"unknown traffic kind {spec.get('kind')!r}")
        if spec["kind"] == "packets" and not isinstance(spec.get("packets"), list):
            raise ScenarioError(f"traffic[{i}].packets", "expected a list of [time_ns, size, class, port] rows")
        _class(spec, f"traffic[{i}]")
    meta = {"populated": len(device.chassis.populated), "mode": policy.mode.value}
    cbr = [s for s in traffic if s.get("kind") == "cbr"]
    if len(cbr) == 1:
        meta["load"] = float(cbr[0].get("load", 0.0))
        meta["packet_size"] = int(cbr[0].get("packet_size", 1500))
    return Scenario(device, traffic, policy, duration, run_seed, options, dict(doc.get("outputs", {})),
                    str(doc.get("name", "scenario")), meta)


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError("<file>", f"no such scenario file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(doc, seed)
