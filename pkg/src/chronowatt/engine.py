"""Deterministic discrete-event core.

Time is an integer nanosecond clock. Events dispatch in (time, sequence)
order. Traffic reaches the engine as trains (see :mod:`chronowatt.traffic`);
a train is offered to its port in one step and its packets are served FIFO
at line rate. Per-packet departure times inside a train are exact floats
and never become events, which keeps line-rate runs tractable.

Energy bookkeeping:

* static draw per component is integrated over its state history;
* dynamic draw is evaluated per accounting window from the bits and packets
  a component finished serializing in that window;
* transition energies are booked when a transition starts.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Mapping

import numpy as np

from .errors import DurationError
from .lpi import (LpiParams, LpiState, Phase, Stimulus, cycle_energy_split, cycle_phase_at, lpi_advance,
                  phase_power_fraction)
from .policy import ComponentView, PolicyConfig, delay_variable_tick, idle_management_apply, idle_threshold_for, \
    wake_on_demand
from .power import CalibratedDevice, ComponentSpec, dynamic_power
from .sla import APP_CLASSES, SlaPolicy, default_policy
from .traffic import MAX_NS, ArrivalStream, deoverlap, split_at, split_sparse

EVENT_KINDS = ("PacketArrival", "TransitionComplete", "LpiTimer", "PolicyTick", "ScheduledAction")
DROP_CAUSES = ("buffer_overflow", "port_inactive")

_HIST_SCALE = 200.0  # bins per decade
_HIST_BINS = int(_HIST_SCALE * 14) + 1


def _hist_index(x: np.ndarray) -> np.ndarray:
    return np.minimum((np.log10(1.0 + np.maximum(x, 0.0)) * _HIST_SCALE).astype(np.int64), _HIST_BINS - 1)


def _hist_value(i: int) -> float:
    return 10 ** ((i + 0.5) / _HIST_SCALE) - 1.0


@dataclass
class DelayStats:
    """Streaming delay statistics for one application class (ns).

    Quantiles come from a log-spaced histogram (about 1.2 % resolution);
    count, mean, min and max are exact.
    """

    budget: int | None = None
    count: int = 0
    total: float = 0.0
    min: float = math.inf
    max: float = 0.0
    added_total: float = 0.0
    added_max: float = 0.0
    violations: int = 0
    hist: np.ndarray = field(default_factory=lambda: np.zeros(_HIST_BINS, np.int64))
    added_hist: np.ndarray = field(default_factory=lambda: np.zeros(_HIST_BINS, np.int64))

    def add(self, delays: np.ndarray, added: np.ndarray) -> None:
        if len(delays) == 0:
            return
        self.count += len(delays)
        self.total += float(delays.sum())
        self.min = min(self.min, float(delays.min()))
        self.max = max(self.max, float(delays.max()))
        self.added_total += float(added.sum())
        self.added_max = max(self.added_max, float(added.max()))
        if self.budget is not None:
            self.violations += int(np.count_nonzero(added > self.budget))
        np.add.at(self.hist, _hist_index(delays), 1)
        np.add.at(self.added_hist, _hist_index(added), 1)

    def add_one(self, delay: float, added: float) -> None:
        self.count += 1
        self.total += delay
        self.min = min(self.min, delay)
        self.max = max(self.max, delay)
        self.added_total += added
        self.added_max = max(self.added_max, added)
        if self.budget is not None and added > self.budget:
            self.violations += 1
        self.hist[min(int(math.log10(1.0 + max(delay, 0.0)) * _HIST_SCALE), _HIST_BINS - 1)] += 1
        self.added_hist[min(int(math.log10(1.0 + max(added, 0.0)) * _HIST_SCALE), _HIST_BINS - 1)] += 1

    def add_constant(self, delay: float, added: float, n: int) -> None:
        if n <= 0:
            return
        self.count += n
        self.total += delay * n
        self.min = min(self.min, delay)
        self.max = max(self.max, delay)
        self.added_total += added * n
        self.added_max = max(self.added_max, added)
        if self.budget is not None and added > self.budget:
            self.violations += n
        self.hist[min(int(math.log10(1.0 + max(delay, 0.0)) * _HIST_SCALE), _HIST_BINS - 1)] += n
        self.added_hist[min(int(math.log10(1.0 + max(added, 0.0)) * _HIST_SCALE), _HIST_BINS - 1)] += n

    def quantile(self, q: float, added: bool = False) -> float | None:
        if self.count == 0:
            return None
        hist = self.added_hist if added else self.hist
        target = q * self.count
        i = int(np.searchsorted(np.cumsum(hist), max(target, 1), side="left"))
        exact_max = self.added_max if added else self.max
        return min(_hist_value(i), exact_max)

    @property
    def mean(self) -> float | None:
        return self.total / self.count if self.count else None


@dataclass
class SimResult:
    duration: int
    device_name: str
    total_energy: float
    energy_ledger: dict[str, dict[str, float]]
    dynamic_energy: dict[str, float]
    component_kind: dict[str, str]
    component_scope: dict[str, str]
    offered_packets: int
    offered_bits: int
    delivered_packets: int
    delivered_bits: int
    dropped: dict[str, int]
    residual_packets: int
    delay: dict[str, DelayStats]
    event_digest: str
    event_count: int
    meta: dict = field(default_factory=dict)
    history: dict | None = None
    windows: dict | None = None

    @property
    def dropped_packets(self) -> int:
        return sum(self.dropped.values())

    @property
    def average_power(self) -> float:
        return self.total_energy / (self.duration * 1e-9) if self.duration else 0.0

    @property
    def delivered_gbps(self) -> float:
        return self.delivered_bits / self.duration if self.duration else 0.0

    def energy_of(self, name: str) -> float:
        return sum(self.energy_ledger.get(name, {}).values())


def empty_result(device_name: str, meta: dict | None = None) -> SimResult:
    return SimResult(0, device_name, 0.0, {}, {}, {}, {}, 0, 0, 0, 0, {c: 0 for c in DROP_CAUSES}, 0, {},
                     hashlib.blake2b(b"", digest_size=8).hexdigest(), 0, meta or {})


# --- runtime state -------------------------------------------------------------------

class _Comp:
    __slots__ = ("spec", "state", "trans", "pending_wake", "lpi", "lpi_state", "cycle_origin", "last_busy",
                 "tick_token", "timer_token", "trans_token", "classes_seen", "seg_start", "seg_label", "seg_draw", "seg_state",
                 "ledger", "history", "impulses", "card", "spans")

    def __init__(self, spec: ComponentSpec, card):
        self.spec = spec
        self.state = "Active"
        self.trans: tuple | None = None  # (src, dst, start, end)
        self.pending_wake = False
        self.lpi: LpiParams | None = spec.lpi if spec.can_sleep else None
        self.lpi_state = LpiState()
        self.cycle_origin = 0
        self.last_busy = 0.0
        self.tick_token = 0  # 0 = no tick pending
        self.timer_token = 0
        self.trans_token = 0
        self.classes_seen: dict[str, int] = {}
        self.seg_start = 0
        self.seg_label = "Active"
        self.seg_draw = spec.draw("Active")
        self.seg_state = "Active"  # state descriptor understood by power.state_draw
        self.ledger: dict[str, float] = {}
        self.history: list | None = None
        self.impulses: list[tuple[int, float]] = []
        self.card = card
        self.spans: list[tuple[int, int]] = []  # functional (Active) intervals

    @property
    def functional(self) -> bool:
        return self.state == "Active" and self.trans is None and (
            self.lpi is None or self.lpi_state.phase is Phase.ACTIVE)


class _Card:
    __slots__ = ("index", "spec", "ports", "path", "comps", "state", "ready_at", "last_busy", "token")

    def __init__(self, index, spec):
        self.index = index
        self.spec = spec
        self.ports: list[_Port] = []
        self.path: list[_Comp] = []
        self.comps: list[_Comp] = []
        self.state = "Active"  # Active / Off / BringingUp / Deactivating
        self.ready_at = 0
        self.last_busy = 0.0
        self.token = 0


class _Port:
    __slots__ = ("index", "card", "phy", "stream", "bursts", "next_train", "free_at", "base_free_at", "resid",
                 "resid_bytes", "rate", "latency", "buffer", "win_bits", "win_pkts")

    def __init__(self, index, card, rate, latency, buffer):
        self.index = index
        self.card = card
        self.phy: _Comp | None = None
        self.stream: ArrivalStream | None = None
        self.bursts: dict[int, int] = {}  # first train index -> end index of a run of single packets
        self.next_train = 0
        self.free_at = 0.0
        self.base_free_at = 0.0
        self.resid: deque = deque()  # (completion, bytes) of packets still in the buffer
        self.resid_bytes = 0
        self.rate = rate
        self.latency = latency
        self.buffer = buffer
        self.win_bits: np.ndarray | None = None
        self.win_pkts: np.ndarray | None = None


_BURST_CAP = 8192


def find_bursts(stream: ArrivalStream, instants, min_gap: float) -> dict[int, int]:
    """Runs of consecutive single-packet trains that can be committed together.

    A run breaks where the spacing reaches ``min_gap`` (a component could fall
    asleep in between) or where an idle-management instant falls inside it.
    """
    single = stream.count == 1
    n = len(single)
    if n < 2 or not single.any():
        return {}
    t = stream.start
    brk = np.ones(n, bool)
    brk[1:] = ~(single[1:] & single[:-1]) | (np.diff(t) >= min_gap)
    if len(instants):
        marks = np.searchsorted(np.asarray(instants, dtype=np.int64), t, side="right")
        brk[1:] |= marks[1:] != marks[:-1]
    heads = np.flatnonzero(brk)
    ends = np.append(heads[1:], n)
    out: dict[int, int] = {}
    for h, e in zip(heads.tolist(), ends.tolist()):
        if not single[h]:
            continue
        for k in range(h, e, _BURST_CAP):
            if min(e, k + _BURST_CAP) - k > 1:
                out[k] = min(e, k + _BURST_CAP)
    return out


@dataclass
class EngineOptions:
    accounting_window: int = 1_000_000
    lpi_timer_events: bool = False
    record_history: bool = False
    pipeline_latency: int | None = None
    buffer_bytes: int | None = None
    coalesce_bursts: bool = True  # commit runs of single packets together when no decision can fall inside


class Simulation:
    """One single-threaded run over a calibrated device."""

    def __init__(self, device: CalibratedDevice, port_streams: Mapping[int, ArrivalStream], policy: PolicyConfig,
                 duration: int, options: EngineOptions | None = None, sla_policy: SlaPolicy | None = None,
                 event_log: IO[str] | None = None, meta: dict | None = None):
        if duration < 0 or duration > MAX_NS:
            raise DurationError(f"duration {duration} outside the 64-bit nanosecond clock")
        self.device = device
        self.policy = policy
        self.duration = int(duration)
        self.opt = options or EngineOptions()
        self.sla = sla_policy or default_policy()
        self.meta = dict(meta or {})
        self._log = event_log
        self._digest = hashlib.blake2b(digest_size=8)
        self._events = 0
        self._heap: list = []
        self._seq = 0
        self.now = 0
        self.window = int(self.opt.accounting_window)
        self.n_windows = max(1, -(-self.duration // self.window))

        self.comps: dict[str, _Comp] = {}
        self.cards: list[_Card] = []
        self.ports: list[_Port] = []
        self.fabric: list[_Comp] = []
        self.psus: list[_Comp] = []
        self._build(port_streams)

        self.offered_packets = 0
        self.offered_bits = 0
        self.delivered_packets = 0
        self.delivered_bits = 0
        self.dropped = {c: 0 for c in DROP_CAUSES}
        self.delay = {c: DelayStats(self.sla.budget(c) if c in self.sla.classes else None) for c in APP_CLASSES}

    # --- construction ---------------------------------------------------------------
    def _build(self, port_streams):
        chassis = self.device.chassis
        for ci, card_spec in enumerate(chassis.populated):
            card = _Card(ci, card_spec)
            self.cards.append(card)
            latency = self.opt.pipeline_latency if self.opt.pipeline_latency is not None else card_spec.pipeline_latency_ns
            buffer = self.opt.buffer_bytes if self.opt.buffer_bytes is not None else card_spec.buffer_bytes
            for p in range(card_spec.ports):
                port = _Port(ci * card_spec.ports + p, card, card_spec.port_rate_bps, latency, buffer)
                card.ports.append(port)
                self.ports.append(port)
        for spec in self.device.components:
            card = self.cards[spec.card] if spec.card is not None else None
            comp = _Comp(spec, card)
            if self.opt.record_history:
                comp.history = []
            self.comps[spec.name] = comp
            if card is None:
                (self.fabric if spec.kind == "FabricPlane" else self.psus).append(comp)
                continue
            card.comps.append(comp)
            if spec.kind == "PHY_Link" and len(spec.ports) == 1:
                self.ports[spec.ports[0]].phy = comp
            elif spec.in_path:
                card.path.append(comp)
        prepare, instants, min_gap = self._stream_preparer()
        for idx, stream in port_streams.items():
            if not 0 <= idx < len(self.ports):
                raise ValueError(f"traffic addressed to missing port {idx}")
            port = self.ports[idx]
            port.stream = prepare(stream)
            if self.opt.coalesce_bursts:
                port.bursts = find_bursts(port.stream, instants, min_gap)
        for port in self.ports:
            port.win_bits = np.zeros(self.n_windows + 1)
            port.win_pkts = np.zeros(self.n_windows + 1)

    def _stream_preparer(self):
        """Train surgery so that one offered train never hides a policy decision.

        Trains must not overlap on a port, must not span an idle-management
        instant, and (under delay-variable control) must not contain a gap
        long enough for a component to fall asleep inside it.
        """
        min_gap = math.inf
        if self.policy.delay_variable:
            for comp in self.comps.values():
                if comp.spec.can_sleep and (self.policy.sleep_kinds is None
                                            or comp.spec.kind in self.policy.sleep_kinds):
                    min_gap = min(min_gap, idle_threshold_for(self._view(comp), self.policy))
        instants: set[int] = set()
        if self.policy.idle_management or self.policy.summons:
            chassis = self.device.chassis
            lag = max([c.spec.bringup_chain() for c in self.cards]
                      + [chassis.fabric_bringup_ns, chassis.psu_bringup_ns])
            times = [a.at for a in self.policy.schedule] + [s.at for s in self.policy.summons]
            for x in times:
                instants.update((x, x + lag))

        def prepare(stream: ArrivalStream) -> ArrivalStream:
            stream = deoverlap(stream)
            if instants:
                stream = split_at(stream, sorted(instants))
            if min_gap < math.inf:
                stream = split_sparse(stream, min_gap)
            return stream

        return prepare, sorted(instants), min_gap

    # --- event plumbing -------------------------------------------------------------
    def _push(self, t: int, kind: str, payload) -> None:
        heapq.heappush(self._heap, (int(t), self._seq, kind, payload))
        self._seq += 1

    def _record(self, t: int, kind: str, component: str, detail) -> None:
        self._events += 1
        line = json.dumps({"time": t, "kind": kind, "component": component, "detail": detail},
                          sort_keys=True, separators=(",", ":"))
        self._digest.update(line.encode())
        self._digest.update(b"\n")
        if self._log is not None:
            self._log.write(line + "\n")

    # --- segments and energy --------------------------------------------------------
    def _close_segment(self, comp: _Comp, t: int) -> None:
        t0 = comp.seg_start
        if t > t0:
            if comp.seg_label == "LpiCycle":
                q, r = cycle_energy_split(comp.lpi, comp.cycle_origin, t0, t)
                active = comp.spec.draw("Active") * 1e-9
                comp.ledger["Quiet"] = comp.ledger.get("Quiet", 0.0) + q * active
                comp.ledger["Refresh"] = comp.ledger.get("Refresh", 0.0) + r * active
            else:
                comp.ledger[comp.seg_label] = comp.ledger.get(comp.seg_label, 0.0) + comp.seg_draw * (t - t0) * 1e-9
            if comp.seg_label == "Active":
                comp.spans.append((t0, t))
            if comp.history is not None:
                comp.history.append((t0, t, comp.seg_label, comp.seg_draw, comp.cycle_origin, comp.seg_state))
        comp.seg_start = t

    def _segment(self, comp: _Comp, t: int, label: str, draw: float | None = None, state=None) -> None:
        self._close_segment(comp, t)
        comp.seg_label = label
        comp.seg_state = state if state is not None else label
        if draw is None:
            if label == "LpiCycle":
                draw = math.nan
            elif label in ("Sleep", "Quiet", "Refresh", "Wake"):
                draw = comp.spec.draw("Active") * phase_power_fraction(Phase(label), comp.lpi)
            else:
                draw = comp.spec.draw(label)
        comp.seg_draw = draw

    def _impulse(self, comp: _Comp, t: int, energy: float) -> None:
        if energy > 0:
            comp.ledger["Transition"] = comp.ledger.get("Transition", 0.0) + energy
            comp.impulses.append((t, energy))

    def _begin_transition(self, comp: _Comp, t: int, src: str, dst: str) -> int:
        spec = comp.spec.transition(src, dst)
        duration = spec.duration if spec else 0
        comp.trans = (src, dst, t, t + duration)
        comp.trans_token += 1
        draw = max(comp.spec.draw(src), comp.spec.draw(dst))
        self._segment(comp, t, "Transition", draw, ("Transition", src, dst))
        self._impulse(comp, t, spec.energy if spec else 0.0)
        self._push(t + duration, "TransitionComplete", ("comp", comp.spec.name, comp.trans_token))
        return t + duration

    # --- wake handling --------------------------------------------------------------
    def _request_wake(self, comp: _Comp, t: int) -> int:
        """Raise traffic_pending toward ``comp``; returns when it is functional."""
        if comp.lpi is not None and comp.state == "Active" and comp.trans is None:
            st = comp.lpi_state
            if st.phase is Phase.ACTIVE:
                return t
            if st.phase is Phase.WAKE:
                return st.phase_entered_at + comp.lpi.t_w
            if st.phase is Phase.SLEEP:
                if not st.pending_wake:
                    comp.lpi_state, _, _ = lpi_advance(st, comp.lpi, t, Stimulus.TRAFFIC_PENDING)
                    self._record(t, "PacketArrival", comp.spec.name, "pending_wake")
                return st.phase_entered_at + comp.lpi.t_s + comp.lpi.t_w
            if not self.opt.lpi_timer_events:
                st = cycle_phase_at(comp.lpi, comp.cycle_origin, t)
            comp.lpi_state, deadline, _ = lpi_advance(st, comp.lpi, t, Stimulus.TRAFFIC_PENDING)
            self._segment(comp, t, "Wake")
            comp.timer_token += 1
            self._push(deadline, "LpiTimer", (comp.spec.name, comp.timer_token))
            self._record(t, "PacketArrival", comp.spec.name, "wake")
            return deadline
        if comp.trans is None:
            if comp.state == "Active":
                return t
            if comp.state == "LowPowerIdle":
                self._record(t, "PacketArrival", comp.spec.name, "wake")
                return self._begin_transition(comp, t, "LowPowerIdle", "Active")
            raise RuntimeError(f"{comp.spec.name} is Off on an active path")
        src, dst, _, end = comp.trans
        if dst == "LowPowerIdle":
            comp.pending_wake = True
            up = comp.spec.transition("LowPowerIdle", "Active")
            return end + (up.duration if up else 0)
        return end

    def _path_ready(self, port: _Port, t: int) -> int:
        ready = t
        if port.phy is not None:
            ready = max(ready, self._request_wake(port.phy, t))
        for comp in port.card.path:
            ready = max(ready, self._request_wake(comp, t))
        return ready

    def _path_open(self, port: _Port) -> bool:
        if port.card.state != "Active":
            return False
        if self.fabric and not any(f.state == "Active" and f.trans is None for f in self.fabric):
            return False
        return True

    # --- traffic ---------------------------------------------------------------------
    def _schedule_next_train(self, port: _Port) -> None:
        s = port.stream
        if s is not None and port.next_train < s.n_trains:
            t = int(s.start[port.next_train])
            if t < self.duration:
                self._push(t, "PacketArrival", (port.index, port.next_train, 0))

    def _train_in_horizon(self, port: _Port, i: int) -> int:
        """Number of packets of train ``i`` that arrive before the horizon."""
        s = port.stream
        start, count, gap = int(s.start[i]), int(s.count[i]), float(s.gap[i])
        # packets with start + floor(k*gap) < duration
        if count > 1 and gap > 0:
            limit = self.duration - start
            n_in = min(count, int(math.ceil(limit / gap)))
            while n_in > 0 and math.floor((n_in - 1) * gap) >= limit:
                n_in -= 1
        else:
            n_in = count if start < self.duration else 0
        return n_in

    def _offer_train(self, port: _Port, i: int, skip: int, t: int) -> None:
        if i in port.bursts:
            return self._offer_burst(port, i, port.bursts[i], skip, t)
        s = port.stream
        n_in = self._train_in_horizon(port, i)
        start, gap, size, cls = int(s.start[i]), float(s.gap[i]), int(s.size[i]), int(s.app_class[i])
        n = n_in - skip
        if skip == 0:
            port.next_train = i + 1
            self._schedule_next_train(port)
        if n <= 0:
            return
        bits = size * 8
        card = port.card
        if not self._path_open(port):
            if card.state == "BringingUp" and card.ready_at <= start + math.floor((n_in - 1) * gap):
                k_ready = max(skip, int(math.ceil((card.ready_at - start) / gap)) if gap > 0 else n_in)
                while k_ready > skip and start + math.floor((k_ready - 1) * gap) >= card.ready_at:
                    k_ready -= 1
                while k_ready < n_in and start + math.floor(k_ready * gap) < card.ready_at:
                    k_ready += 1
                lost = k_ready - skip
                self.offered_packets += lost
                self.offered_bits += lost * bits
                self.dropped["port_inactive"] += lost
                if k_ready < n_in:
                    self._push(start + math.floor(k_ready * gap), "PacketArrival", (port.index, i, k_ready))
                self._record(t, "PacketArrival", f"port{port.index}", {"dropped": lost, "cause": "port_inactive"})
                return
            self.offered_packets += n
            self.offered_bits += n * bits
            self.dropped["port_inactive"] += n
            self._record(t, "PacketArrival", f"port{port.index}", {"dropped": n, "cause": "port_inactive"})
            return

        self.offered_packets += n
        self.offered_bits += n * bits
        sigma = bits * 1e9 / port.rate
        ready = self._path_ready(port, t)
        server = max(port.free_at, float(ready))
        first = start + math.floor(skip * gap)
        self._prune(port, first)
        fast = (server <= first and port.base_free_at <= first and (n == 1 or gap >= sigma)
                and not port.resid and size <= port.buffer)
        if fast:
            self._commit_fast(port, start, skip, n, gap, sigma, size, cls)
        elif n == 1:
            self._commit_single(port, float(first), server, sigma, size, cls)
        else:
            k = np.arange(skip, skip + n)
            arrivals = (start + np.floor(k * gap)).astype(np.float64)
            self._commit_general(port, arrivals, server, sigma, size, cls)
        self._record(t, "PacketArrival", f"port{port.index}", {"train": int(i), "packets": int(n)})

    def _commit_fast(self, port: _Port, start: int, skip: int, n: int, gap: float, sigma: float, size: int,
                     cls: int) -> None:
        """Train served without queueing: completion = arrival + serialization."""
        T = self.duration
        last_arrival = start + math.floor((skip + n - 1) * gap)
        first_c = start + math.floor(skip * gap) + sigma
        last_c = last_arrival + sigma
        # windows: number of packets completed before boundary X
        def completed_before(x: float) -> int:
            y = math.ceil(x - start - sigma)
            if y <= 0:
                return 0
            if n == 1 or gap == 0:
                return n if start + math.floor(skip * gap) + sigma < x else 0
            return int(min(max(math.ceil(y / gap) - skip, 0), n))

        w0 = int(first_c // self.window)
        w1 = int(min(last_c, T) // self.window)
        bounds = [completed_before(min(w * self.window, T)) for w in range(w0, w1 + 2)]
        if len(bounds) <= 8:
            for w in range(w0, min(w1, self.n_windows) + 1):
                cnt = bounds[w - w0 + 1] - bounds[w - w0]
                if cnt:
                    port.win_pkts[w] += cnt
                    port.win_bits[w] += cnt * size * 8
        else:
            counts = np.diff(np.array(bounds, dtype=np.float64))
            idx = np.arange(w0, w0 + len(counts))
            keep = idx <= self.n_windows
            port.win_pkts[idx[keep]] += counts[keep]
            port.win_bits[idx[keep]] += counts[keep] * size * 8
        latency = port.latency
        delivered = completed_before(T - latency)
        delay = sigma + latency
        self.delay[APP_CLASSES[cls]].add_constant(delay, 0.0, delivered)
        self.delivered_packets += delivered
        self.delivered_bits += delivered * size * 8
        port.free_at = float(last_c)
        port.base_free_at = float(last_c)
        self._after_commit(port, last_c + latency, cls, last_arrival)

    def _offer_burst(self, port: _Port, i: int, end: int, skip: int, t: int) -> None:
        """Offer a run of single packets as one commit."""
        s = port.stream
        times = s.start[i + skip:end]
        n = int(np.searchsorted(times, self.duration, side="left"))
        if skip == 0:
            port.next_train = end
            self._schedule_next_train(port)
        if n <= 0:
            return
        times = times[:n]
        sizes = s.size[i + skip:i + skip + n]
        classes = s.app_class[i + skip:i + skip + n]
        card = port.card
        if not self._path_open(port):
            lost = n
            if card.state == "BringingUp" and card.ready_at <= int(times[-1]):
                lost = int(np.searchsorted(times, card.ready_at, side="left"))
                self._push(int(times[lost]), "PacketArrival", (port.index, i, skip + lost))
            self.offered_packets += lost
            self.offered_bits += int(sizes[:lost].sum()) * 8
            self.dropped["port_inactive"] += lost
            self._record(t, "PacketArrival", f"port{port.index}", {"dropped": lost, "cause": "port_inactive"})
            return
        self.offered_packets += n
        self.offered_bits += int(sizes.sum()) * 8
        a = times.astype(np.float64)
        sig = sizes * (8e9 / port.rate)
        server = max(port.free_at, float(self._path_ready(port, t)))
        self._prune(port, float(a[0]))
        cum = np.cumsum(sig)
        c = cum + np.maximum(server, np.maximum.accumulate(a - (cum - sig)))
        # bytes in the system just before each arrival, in service included
        occ = np.zeros(n)
        if port.resid:
            rc, rs = (np.array(x, dtype=np.float64) for x in zip(*port.resid))
            rcum = np.concatenate(([0.0], np.cumsum(rs)))
            occ += rcum[-1] - rcum[np.searchsorted(rc, a, side="right")]
        j = np.arange(n)
        done = np.minimum(np.searchsorted(c, a, side="right"), j)
        bcum = np.concatenate(([0], np.cumsum(sizes)))
        occ += bcum[j] - bcum[done]
        if np.all(occ + sizes <= port.buffer):
            keep = None
        else:
            keep, c = self._serve_burst_with_drops(port, a, sig, sizes, server)
            a, sig, sizes, classes = a[keep], sig[keep], sizes[keep], classes[keep]
        if len(a):
            self._finish_burst(port, a, c, sig, sizes, classes)
        self._record(t, "PacketArrival", f"port{port.index}", {"burst": int(i), "packets": int(n)})

    def _serve_burst_with_drops(self, port: _Port, a, sig, sizes, server: float):
        queue = deque(port.resid)
        occupied = port.resid_bytes
        keep, done_at = [], []
        free = server
        for k, (x, sg, sz) in enumerate(zip(a.tolist(), sig.tolist(), sizes.tolist())):
            while queue and queue[0][0] <= x:
                occupied -= queue.popleft()[1]
            if occupied + sz > port.buffer:
                self.dropped["buffer_overflow"] += 1
                continue
            free = max(free, x) + sg
            queue.append((free, sz))
            occupied += sz
            keep.append(k)
            done_at.append(free)
        return np.array(keep, dtype=np.int64), np.array(done_at)

    def _finish_burst(self, port: _Port, a, c, sig, sizes, classes) -> None:
        T = self.duration
        cum = np.cumsum(sig)
        base = cum + np.maximum(port.base_free_at, np.maximum.accumulate(a - (cum - sig)))
        port.base_free_at = float(base[-1])
        added = np.maximum(c - base, 0.0)
        bits = sizes * 8.0
        served = c < T
        w = (c[served] // self.window).astype(np.int64)
        np.add.at(port.win_pkts, w, 1.0)
        np.add.at(port.win_bits, w, bits[served])
        dep = c + port.latency
        ok = dep < T
        present = np.unique(classes)
        for k in present.tolist():
            m = ok & (classes == k)
            self.delay[APP_CLASSES[k]].add(dep[m] - a[m], added[m])
        self.delivered_packets += int(np.count_nonzero(ok))
        self.delivered_bits += int(bits[ok].sum())
        port.free_at = max(port.free_at, float(c[-1]))
        last_a = float(a[-1])
        self._prune(port, last_a)
        for done, sz in zip(c[c > last_a].tolist(), sizes[c > last_a].tolist()):
            port.resid.append((done, sz))
            port.resid_bytes += sz
        last_seen = [float(a[classes == k][-1]) for k in present.tolist()]
        self._after_commit(port, float(c[-1]) + port.latency, present.tolist(), last_seen)

    @staticmethod
    def _prune(port: _Port, t: float) -> None:
        q = port.resid
        while q and q[0][0] <= t:
            port.resid_bytes -= q.popleft()[1]

    def _commit_single(self, port: _Port, a: float, server: float, sigma: float, size: int, cls: int) -> None:
        if port.resid_bytes + size > port.buffer:
            self.dropped["buffer_overflow"] += 1
            return
        T = self.duration
        c = max(server, a) + sigma
        base = max(port.base_free_at, a) + sigma
        port.base_free_at = base
        if c < T:
            w = int(c // self.window)
            port.win_bits[w] += size * 8
            port.win_pkts[w] += 1
        dep = c + port.latency
        if dep < T:
            self.delay[APP_CLASSES[cls]].add_one(dep - a, max(c - base, 0.0))
            self.delivered_packets += 1
            self.delivered_bits += size * 8
        port.free_at = max(port.free_at, c)
        port.resid.append((c, size))
        port.resid_bytes += size
        self._after_commit(port, c + port.latency, cls, a)

    def _commit_general(self, port: _Port, arrivals: np.ndarray, server: float, sigma: float, size: int,
                        cls: int) -> None:
        n = len(arrivals)
        j = np.arange(n)
        c = np.maximum(server, np.maximum.accumulate(arrivals - j * sigma)) + (j + 1) * sigma
        # buffer occupancy just before each arrival (bytes in system, incl. in service)
        occ = np.zeros(n)
        if port.resid:
            rc, rs = (np.array(x, dtype=np.float64) for x in zip(*port.resid))
            cum = np.concatenate(([0.0], np.cumsum(rs)))
            occ += cum[-1] - cum[np.searchsorted(rc, arrivals, side="right")]
        done_before = np.searchsorted(c, arrivals, side="right")
        occ += size * (j - np.minimum(done_before, j))
        if np.all(occ + size <= port.buffer):
            accepted = arrivals
        else:
            accepted, c = self._serve_with_drops(port, arrivals, server, sigma, size)
        self._finish_commit(port, accepted, c, sigma, size, cls)

    def _serve_with_drops(self, port: _Port, arrivals: np.ndarray, server: float, sigma: float, size: int):
        queue = deque(port.resid)
        occupied = port.resid_bytes
        acc_a, acc_c = [], []
        free = server
        for a in arrivals.tolist():
            while queue and queue[0][0] <= a:
                occupied -= queue.popleft()[1]
            if occupied + size > port.buffer:
                self.dropped["buffer_overflow"] += 1
                continue
            done = max(free, a) + sigma
            free = done
            queue.append((done, size))
            occupied += size
            acc_a.append(a)
            acc_c.append(done)
        return np.array(acc_a), np.array(acc_c)

    def _finish_commit(self, port: _Port, a: np.ndarray, c: np.ndarray, sigma: float, size: int, cls: int) -> None:
        if len(a) == 0:
            return
        T = self.duration
        n = len(a)
        j = np.arange(n)
        base = np.maximum(port.base_free_at, np.maximum.accumulate(a - j * sigma)) + (j + 1) * sigma
        port.base_free_at = float(base[-1])
        added = np.maximum(c - base, 0.0)
        served = c < T
        w = (c[served] // self.window).astype(np.int64)
        np.add.at(port.win_pkts, w, 1.0)
        np.add.at(port.win_bits, w, size * 8.0)
        dep = c + port.latency
        ok = dep < T
        self.delay[APP_CLASSES[cls]].add(dep[ok] - a[ok], added[ok])
        n_ok = int(np.count_nonzero(ok))
        self.delivered_packets += n_ok
        self.delivered_bits += n_ok * size * 8
        port.free_at = max(port.free_at, float(c[-1]))
        # residual queue content for the next train's occupancy check
        last_a = float(a[-1])
        self._prune(port, last_a)
        for done in c[c > last_a].tolist():
            port.resid.append((done, size))
            port.resid_bytes += size
        self._after_commit(port, float(c[-1]) + port.latency, cls, last_a)

    def _after_commit(self, port: _Port, busy_until: float, cls, last_seen) -> None:
        """Mark the port's path busy and note when each class was last offered.

        ``cls``/``last_seen`` are a class code and arrival time, or parallel
        sequences of them for a burst.
        """
        if isinstance(cls, (int, np.integer)):
            seen = ((APP_CLASSES[cls], int(last_seen)),)
        else:
            seen = tuple((APP_CLASSES[k], int(x)) for k, x in zip(cls, last_seen))
        comps = ([port.phy] if port.phy is not None else []) + port.card.path
        card = port.card
        card.last_busy = max(card.last_busy, busy_until)
        for comp in comps:
            comp.last_busy = max(comp.last_busy, busy_until)
            for name, x in seen:
                if comp.classes_seen.get(name, -1) < x:
                    comp.classes_seen[name] = x
            self._arm_tick(comp)

    # --- delay-variable policy ----------------------------------------------------------
    def _view(self, comp: _Comp) -> ComponentView:
        lpi = comp.lpi
        entry = lpi.t_s if lpi is not None else (comp.spec.transition("Active", "LowPowerIdle").duration
                                                if comp.spec.can_sleep else 0)
        managed = comp.card is not None and comp.card.state != "Active"
        return ComponentView(comp.spec.name, comp.spec.kind, comp.spec.can_sleep, int(math.ceil(comp.last_busy)),
                             comp.spec.wake_delay, entry, comp.classes_seen, managed)

    def _arm_tick(self, comp: _Comp) -> None:
        if not (self.policy.delay_variable and comp.spec.can_sleep) or comp.tick_token:
            return
        if self.policy.sleep_kinds is not None and comp.spec.kind not in self.policy.sleep_kinds:
            return
        view = self._view(comp)
        at = max(self.now, view.last_busy + idle_threshold_for(view, self.policy))
        self._seq_tick = getattr(self, "_seq_tick", 0) + 1
        comp.tick_token = self._seq_tick
        self._push(at, "PolicyTick", (comp.spec.name, comp.tick_token))

    def _on_tick(self, t: int, name: str, token: int) -> None:
        comp = self.comps[name]
        if comp.tick_token != token:
            return
        comp.tick_token = 0
        if not comp.functional:
            return
        view = self._view(comp)
        threshold = idle_threshold_for(view, self.policy)
        if t - view.last_busy < threshold:
            self._arm_tick(comp)
            return
        req = delay_variable_tick(view, self.policy, t, self.sla)
        self._record(t, "PolicyTick", name, "sleep" if req else "stay")
        if req is None:
            # gating may relax once observed classes age out of the window
            extra = set(comp.classes_seen) - set(self.policy.declared_classes)
            if extra and not view.managed:
                self._seq_tick = getattr(self, "_seq_tick", 0) + 1
                comp.tick_token = self._seq_tick
                self._push(t + self.policy.class_window, "PolicyTick", (name, comp.tick_token))
            return
        self._enter_sleep(comp, t)

    def _enter_sleep(self, comp: _Comp, t: int) -> None:
        if comp.lpi is not None:
            comp.lpi_state, deadline, _ = lpi_advance(comp.lpi_state, comp.lpi, t, Stimulus.IDLE_DETECTED)
            self._segment(comp, t, "Sleep")
            comp.timer_token += 1
            self._push(deadline, "LpiTimer", (comp.spec.name, comp.timer_token))
        else:
            comp.pending_wake = False
            self._begin_transition(comp, t, "Active", "LowPowerIdle")

    def _on_lpi_timer(self, t: int, name: str, token: int) -> None:
        comp = self.comps[name]
        if comp.timer_token != token or comp.state != "Active":
            return
        prev = comp.lpi_state.phase
        comp.lpi_state, deadline, _ = lpi_advance(comp.lpi_state, comp.lpi, t, Stimulus.TIMER)
        phase = comp.lpi_state.phase
        self._record(t, "LpiTimer", name, f"{prev.value}->{phase.value}")
        if phase is Phase.QUIET and not self.opt.lpi_timer_events:
            comp.cycle_origin = t
            self._segment(comp, t, "LpiCycle")
            return
        self._segment(comp, t, phase.value)
        if deadline is not None:
            comp.timer_token += 1
            self._push(deadline, "LpiTimer", (name, comp.timer_token))
        if phase is Phase.ACTIVE:
            self._arm_tick(comp)

    def _on_transition(self, t: int, name: str, token: int) -> None:
        comp = self.comps[name]
        if comp.trans_token != token or comp.trans is None:
            return
        src, dst, _, _ = comp.trans
        comp.trans = None
        self._record(t, "TransitionComplete", name, f"{src}->{dst}")
        if dst == "LowPowerIdle" and comp.pending_wake:
            comp.pending_wake = False
            comp.state = "LowPowerIdle"
            self._begin_transition(comp, t, "LowPowerIdle", "Active")
            return
        comp.state = dst
        self._segment(comp, t, dst)
        if dst == "Active":
            comp.lpi_state = LpiState(Phase.ACTIVE, t)
            self._arm_tick(comp)

    # --- idle management ---------------------------------------------------------------
    def chassis_view(self) -> dict[str, str]:
        view = {}
        for card in self.cards:
            view[f"lc{card.index}"] = {"Deactivating": "Active"}.get(card.state, card.state)
        for comp in self.fabric + self.psus:
            view[comp.spec.name] = "BringingUp" if comp.trans is not None else comp.state
        return view

    def _power_off(self, comp: _Comp, t: int) -> None:
        comp.trans = None
        comp.trans_token += 1
        comp.timer_token += 1
        comp.tick_token = 0
        comp.pending_wake = False
        comp.state = "Off"
        comp.lpi_state = LpiState(Phase.ACTIVE, t)
        self._segment(comp, t, "Off")

    def _deactivate(self, target: str, t: int) -> None:
        if target.startswith("lc"):
            card = self.cards[int(target[2:])]
            if card.state in ("Off",):
                return
            if card.last_busy > t:
                card.state = "Deactivating"
                self._push(int(math.ceil(card.last_busy)), "ScheduledAction", ("drain", target))
                return
            card.state = "Off"
            card.token += 1
            for comp in card.comps:
                self._power_off(comp, t)
        else:
            self._power_off(self.comps[target], t)

    def _activate(self, target: str, t: int) -> None:
        if target.startswith("lc"):
            card = self.cards[int(target[2:])]
            if card.state in ("Active", "BringingUp"):
                return
            if card.state == "Deactivating":
                card.state = "Active"
                return
            card.state = "BringingUp"
            card.token += 1
            card.ready_at = t + card.spec.bringup_chain()
            for comp in card.comps:
                comp.state = "Off"
                comp.trans = ("Off", "Active", t, card.ready_at)
                draw = max(comp.spec.draw("Off"), comp.spec.draw("Active"))
                self._segment(comp, t, "Transition", draw, ("Transition", "Off", "Active"))
                tr = comp.spec.transition("Off", "Active")
                self._impulse(comp, t, tr.energy if tr else 0.0)
            self._push(card.ready_at, "TransitionComplete", ("card", target, card.token))
        else:
            comp = self.comps[target]
            if comp.state == "Active" or comp.trans is not None:
                return
            self._begin_transition(comp, t, "Off", "Active")

    def _on_card_ready(self, t: int, target: str, token: int) -> None:
        card = self.cards[int(target[2:])]
        if card.token != token or card.state != "BringingUp":
            return
        card.state = "Active"
        card.last_busy = float(t)
        self._record(t, "TransitionComplete", target, "Off->Active")
        for comp in card.comps:
            comp.trans = None
            comp.state = "Active"
            comp.lpi_state = LpiState(Phase.ACTIVE, t)
            comp.last_busy = float(t)
            self._segment(comp, t, "Active")
            self._arm_tick(comp)

    def _on_scheduled(self, t: int, payload) -> None:
        tag = payload[0]
        if tag == "schedule":
            cmds = idle_management_apply(self.policy.schedule, self.chassis_view(), t,
                                         self.device.chassis.linecard_slots)
        elif tag == "summons":
            target = payload[1]
            cmds = [wake_on_demand(target, self.chassis_view().get(target, "Off"), t, self.policy)]
        else:  # drain finished
            self._record(t, "ScheduledAction", payload[1], "drained")
            card = self.cards[int(payload[1][2:])]
            if card.state == "Deactivating":
                card.state = "Active"
                self._deactivate(payload[1], t)
            return
        for cmd in cmds:
            self._record(t, "ScheduledAction", cmd.target, cmd.action)
            if cmd.action == "activate":
                self._activate(cmd.target, t)
            elif cmd.action == "deactivate":
                self._deactivate(cmd.target, t)
        self.commands.extend(cmds)

    # --- main loop -------------------------------------------------------------------------
    def run(self) -> SimResult:
        T = self.duration
        self.commands = []
        if T == 0:
            return empty_result(self.device.model.name, self.meta)
        # operator actions are queued first so they win ties with arrivals at the same instant
        if self.policy.idle_management:
            for at in sorted({a.at for a in self.policy.schedule}):
                self._push(at, "ScheduledAction", ("schedule",))
        for s in self.policy.summons:
            self._push(s.at, "ScheduledAction", ("summons", s.target))
        for port in self.ports:
            self._schedule_next_train(port)
        for comp in self.comps.values():
            self._arm_tick(comp)

        heap = self._heap
        while heap:
            t, _, kind, payload = heapq.heappop(heap)
            if t >= T:
                break
            self.now = t
            if kind == "PacketArrival":
                port_idx, train, skip = payload
                self._offer_train(self.ports[port_idx], train, skip, t)
            elif kind == "PolicyTick":
                self._on_tick(t, *payload)
            elif kind == "LpiTimer":
                self._on_lpi_timer(t, *payload)
            elif kind == "TransitionComplete":
                if payload[0] == "card":
                    self._on_card_ready(t, payload[1], payload[2])
                else:
                    self._on_transition(t, payload[1], payload[2])
            else:
                self._on_scheduled(t, payload)
        return self._finalize()

    def _finalize(self) -> SimResult:
        T = self.duration
        W = self.window
        bounds = np.minimum(np.arange(self.n_windows + 2, dtype=np.int64) * W, T)
        eff = self.device.efficiency
        ledger: dict[str, dict[str, float]] = {}
        dyn: dict[str, float] = {}
        history = {} if self.opt.record_history else None
        for name, comp in self.comps.items():
            self._close_segment(comp, T)
            spec = comp.spec
            if spec.coefficients.capacity_bps > 0:
                if spec.kind == "PHY_Link" and len(spec.ports) == 1:
                    port = self.ports[spec.ports[0]]
                    bits, pkts = port.win_bits, port.win_pkts
                else:
                    bits = sum(self.ports[p].win_bits for p in spec.ports)
                    pkts = sum(self.ports[p].win_pkts for p in spec.ports)
                secs = functional_time(comp.spans, bounds) * 1e-9
                safe = np.where(secs > 0, secs, 1.0)
                p = dynamic_power(spec, self.device.shape, self.device.reference_packet_bytes, bits / safe, pkts / safe)
                energy = float(np.sum(np.where(secs > 0, p * secs, 0.0)))
                if np.any((secs <= 0) & (bits > 0)):
                    raise RuntimeError(f"{name} served traffic in a window where it was never functional")
            else:
                energy = 0.0
            dyn[name] = energy
            scale = 1.0 if spec.ac_side else 1.0 / eff
            entries = {k: v * scale for k, v in comp.ledger.items()}
            if energy:
                entries["Active"] = entries.get("Active", 0.0) + energy * scale
            ledger[name] = entries
            if history is not None:
                history[name] = {"segments": comp.history, "impulses": comp.impulses}
        ledger["chassis-common"] = {"Active": self.device.common_draw * T * 1e-9}
        total = sum(sum(v.values()) for v in ledger.values())
        delivered = self.delivered_packets
        residual = self.offered_packets - delivered - sum(self.dropped.values())
        windows = None
        if self.opt.record_history:
            windows = {"width": W, "bits": {p.index: p.win_bits.copy() for p in self.ports},
                       "packets": {p.index: p.win_pkts.copy() for p in self.ports}}
        kinds = {c.spec.name: c.spec.kind for c in self.comps.values()}
        kinds["chassis-common"] = "Common"
        scopes = {c.spec.name: c.spec.scope for c in self.comps.values()}
        scopes["chassis-common"] = "chassis"
        return SimResult(
            duration=T, device_name=self.device.model.name, total_energy=total, energy_ledger=ledger,
            dynamic_energy=dyn, component_kind=kinds, component_scope=scopes,
            offered_packets=self.offered_packets, offered_bits=self.offered_bits,
            delivered_packets=delivered, delivered_bits=self.delivered_bits, dropped=dict(self.dropped),
            residual_packets=residual, delay={k: v for k, v in self.delay.items() if v.count},
            event_digest=self._digest.hexdigest(), event_count=self._events, meta=self.meta,
            history=history, windows=windows)


def functional_time(spans, bounds: np.ndarray) -> np.ndarray:
    """Functional nanoseconds inside each window ``[bounds[i], bounds[i+1])``."""
    if not spans:
        return np.zeros(len(bounds) - 1)
    starts = np.array([s for s, _ in spans], dtype=np.float64)
    ends = np.array([e for _, e in spans], dtype=np.float64)
    cum = np.concatenate(([0.0], np.cumsum(ends - starts)))
    b = bounds.astype(np.float64)
    i = np.searchsorted(ends, b, side="right")  # spans wholly before b
    partial = np.where(i < len(starts), np.maximum(b - starts[np.minimum(i, len(starts) - 1)], 0.0), 0.0)
    covered = cum[i] + partial
    return np.diff(covered)


def integrate_energy(segments, impulses, t0: int, t1: int, lpi: LpiParams | None = None,
                     active_draw: float | None = None, dynamic=None) -> float:
    """Energy of one component over ``[t0, t1)`` from its recorded history.

    ``segments`` are ``(start, end, label, draw_w, cycle_origin, state)`` tuples as
    recorded by the engine; ``impulses`` are ``(time, joules)`` transition
    energies. ``dynamic`` is an optional ``(window_ns, watts_per_window)``
    pair added pro rata. Energy is on the component's own supply side.
    """
    if t1 < t0:
        raise ValueError("from_time must not exceed to_time")
    total = 0.0
    for start, end, label, draw, origin, *_ in segments:
        a, b = max(start, t0), min(end, t1)
        if b <= a:
            continue
        if label == "LpiCycle":
            q, r = cycle_energy_split(lpi, origin, a, b)
            total += (q + r) * active_draw * 1e-9
        else:
            total += draw * (b - a) * 1e-9
    total += sum(e for t, e in impulses if t0 <= t < t1)
    if dynamic is not None:
        width, watts = dynamic
        for w, p in enumerate(np.asarray(watts)):
            a, b = max(w * width, t0), min((w + 1) * width, t1)
            if b > a:
                total += p * (b - a) * 1e-9
    return total
