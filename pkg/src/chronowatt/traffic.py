"""Self-similar traffic generation, trace replay and Hurst estimation.

Streams are stored as *trains*: runs of equal-size packets emitted at a
fixed spacing, which is how an ON period of a source looks on the wire.
Packet-level arrays are materialized on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateSeriesError, DurationError, ParameterError, TraceOrderError, TraceParseError
from .sla import APP_CLASSES

MIN_PACKET = 64
DEFAULT_MTU = 9216
MAX_NS = 2**63 - 1

CLASS_CODE = {name: i for i, name in enumerate(APP_CLASSES)}


def class_code(name: str) -> int:
    try:
        return CLASS_CODE[name]
    except KeyError:
        raise ParameterError(f"unknown application class {name!r}") from None


@dataclass(frozen=True)
class PacketArrival:
    timestamp: int
    size: int
    app_class: str


class ArrivalStream:
    """Time-ordered packet arrivals, stored as trains.

    Train ``i`` emits ``count[i]`` packets of ``size[i]`` bytes at
    ``start[i] + k * gap[i]`` (rounded down to whole nanoseconds).
    """

    __slots__ = ("start", "count", "gap", "size", "app_class", "flow", "_packets")

    def __init__(self, start, count, gap, size, app_class, flow=None, *, mtu: int = DEFAULT_MTU):
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        self.gap = np.asarray(gap, dtype=np.float64)
        self.size = np.asarray(size, dtype=np.int64)
        self.app_class = np.asarray(app_class, dtype=np.int8)
        n = len(self.start)
        self.flow = np.zeros(n, dtype=np.int32) if flow is None else np.asarray(flow, dtype=np.int32)
        if not all(len(a) == n for a in (self.count, self.gap, self.size, self.app_class, self.flow)):
            raise ParameterError("train columns have different lengths")
        if n:
            if self.size.min() < MIN_PACKET or self.size.max() > mtu:
                raise ParameterError(f"packet sizes must lie in [{MIN_PACKET}, {mtu}]")
            if self.count.min() < 1:
                raise ParameterError("trains must hold at least one packet")
            if np.any(np.diff(self.start) < 0):
                raise ParameterError("trains must be sorted by start time")
        self._packets = None

    @classmethod
    def empty(cls) -> "ArrivalStream":
        return cls([], [], [], [], [])

    @classmethod
    def from_packets(cls, timestamps, sizes, app_classes, flow=None, *, mtu: int = DEFAULT_MTU) -> "ArrivalStream":
        ts = np.asarray(timestamps, dtype=np.int64)
        codes = np.array([class_code(c) if isinstance(c, str) else int(c) for c in app_classes], dtype=np.int8) \
            if not isinstance(app_classes, np.ndarray) else app_classes.astype(np.int8)
        n = len(ts)
        return cls(ts, np.ones(n, np.int64), np.zeros(n), sizes, codes, flow, mtu=mtu)

    @classmethod
    def merge(cls, streams: Sequence["ArrivalStream"]) -> "ArrivalStream":
        streams = [s for s in streams if len(s.start)]
        if not streams:
            return cls.empty()
        cols = [np.concatenate([getattr(s, c) for s in streams])
                for c in ("start", "count", "gap", "size", "app_class", "flow")]
        order = np.argsort(cols[0], kind="stable")
        return cls(*[c[order] for c in cols])

    def __len__(self) -> int:
        return int(self.count.sum())

    @property
    def n_trains(self) -> int:
        return len(self.start)

    @property
    def total_bits(self) -> int:
        return int((self.count * self.size).sum() * 8)

    def _materialize(self):
        if self._packets is None:
            counts = self.count
            total = int(counts.sum())
            idx = np.repeat(np.arange(len(counts)), counts)
            first = np.cumsum(counts) - counts
            k = np.arange(total) - np.repeat(first, counts)
            ts = self.start[idx] + np.floor(k * self.gap[idx]).astype(np.int64)
            order = np.argsort(ts, kind="stable")
            self._packets = (ts[order], self.size[idx][order], self.app_class[idx][order], self.flow[idx][order])
        return self._packets

    @property
    def timestamps(self) -> np.ndarray:
        return self._materialize()[0]

    @property
    def sizes(self) -> np.ndarray:
        return self._materialize()[1]

    @property
    def app_classes(self) -> np.ndarray:
        return self._materialize()[2]

    @property
    def flows(self) -> np.ndarray:
        return self._materialize()[3]

    def __iter__(self):
        ts, sz, cl, _ = self._materialize()
        for t, s, c in zip(ts.tolist(), sz.tolist(), cl.tolist()):
            yield PacketArrival(t, s, APP_CLASSES[c])

    def to_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.start, self.count, self.gap, self.size, self.app_class, self.flow))

    def select_flows(self, flows: Iterable[int]) -> "ArrivalStream":
        mask = np.isin(self.flow, np.fromiter(flows, dtype=np.int32))
        return ArrivalStream(self.start[mask], self.count[mask], self.gap[mask], self.size[mask],
                             self.app_class[mask], self.flow[mask])


@dataclass(frozen=True)
class OnOffSourceParams:
    shape_on: float = 1.4
    shape_off: float = 1.4
    min_on: float = 1_000_000.0  # ns
    min_off: float = 1_000_000.0  # ns
    peak_rate: float = 1e8  # bits/s while ON
    packet_size: int = 1500
    app_class: str = "BestEffort"

    def __post_init__(self):
        for name in ("shape_on", "shape_off"):
            a = getattr(self, name)
            if not 1 < a < 2:
                raise ParameterError(f"{name} must lie in (1, 2), got {a}")
        if self.min_on <= 0 or self.min_off <= 0:
            raise ParameterError("Pareto scale parameters must be positive")
        if self.peak_rate <= 0:
            raise ParameterError("peak_rate must be positive")
        if not MIN_PACKET <= self.packet_size <= DEFAULT_MTU:
            raise ParameterError(f"packet_size out of range: {self.packet_size}")
        class_code(self.app_class)

    @property
    def mean_on(self) -> float:
        return self.min_on * self.shape_on / (self.shape_on - 1)

    @property
    def mean_off(self) -> float:
        return self.min_off * self.shape_off / (self.shape_off - 1)

    @property
    def packet_gap(self) -> float:
        return self.packet_size * 8e9 / self.peak_rate

    @classmethod
    def from_dict(cls, doc: dict) -> "OnOffSourceParams":
        return cls(**doc)


def source_rng(seed: int, index: int) -> np.random.Generator:
    """Independent substream for source ``index``; unaffected by the source count."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & (2**64 - 1), spawn_key=(index,))))


def _check_duration(duration) -> int:
    if duration < 0:
        raise DurationError("duration must be non-negative")
    if duration > MAX_NS:
        raise DurationError("duration overflows the 64-bit nanosecond clock")
    return int(duration)


def _pareto(rng: np.random.Generator, shape: float, scale: float, n: int) -> np.ndarray:
    return scale * (1.0 + rng.pareto(shape, n))


def _onoff_source(p: OnOffSourceParams, duration: int, rng: np.random.Generator, flow: int):
    # Start in a random phase weighted by the mean sojourns.
    start_on = rng.random() < p.mean_on / (p.mean_on + p.mean_off)
    cycle = p.mean_on + p.mean_off
    starts, lengths = [], []
    t = 0.0
    if not start_on:
        t = float(_pareto(rng, p.shape_off, p.min_off, 1)[0])
    while t < duration:
        n = max(16, int(1.2 * (duration - t) / cycle) + 16)
        on = _pareto(rng, p.shape_on, p.min_on, n)
        off = _pareto(rng, p.shape_off, p.min_off, n)
        period_start = t + np.concatenate(([0.0], np.cumsum(on + off)[:-1]))
        keep = period_start < duration
        starts.append(period_start[keep])
        lengths.append(on[keep])
        t = float(period_start[-1] + on[-1] + off[-1])
    if not starts:
        return None
    start = np.concatenate(starts)
    on_len = np.minimum(np.concatenate(lengths), duration - start)
    count = np.floor(on_len / p.packet_gap).astype(np.int64)
    keep = count > 0
    start = np.floor(start[keep]).astype(np.int64)
    count = count[keep]
    n = len(start)
    return (start, count, np.full(n, p.packet_gap), np.full(n, p.packet_size, np.int64),
            np.full(n, class_code(p.app_class), np.int8), np.full(n, flow, np.int32))


def generate_aggregate(sources: Sequence[OnOffSourceParams], count_per_params: int, duration: int,
                       seed: int) -> ArrivalStream:
    """Superpose ``count_per_params`` heavy-tailed ON/OFF sources per parameter set.

    Each source alternates Pareto ON and OFF periods; during ON it emits
    back-to-back fixed-size packets at its peak rate. A packet that would not
    finish before the ON period ends is not generated.
    """
    duration = _check_duration(duration)
    if count_per_params < 0:
        raise ParameterError("count_per_params must be non-negative")
    for p in sources:
        if not isinstance(p, OnOffSourceParams):
            raise ParameterError("sources must be OnOffSourceParams")
    if count_per_params == 0 or duration == 0 or not sources:
        return ArrivalStream.empty()
    parts = []
    flow = 0
    for p in sources:
        for _ in range(count_per_params):
            part = _onoff_source(p, duration, source_rng(seed, flow), flow)
            if part is not None:
                parts.append(part)
            flow += 1
    if not parts:
        return ArrivalStream.empty()
    cols = [np.concatenate(c) for c in zip(*parts)]
    order = np.lexsort((cols[5], cols[0]))
    return ArrivalStream(*[c[order] for c in cols])


def generate_poisson(rate_pps: float, duration: int, seed: int, packet_size: int = 1500,
                     app_class: str = "BestEffort", flow: int = 0) -> ArrivalStream:
    """Poisson arrivals; the short-range-dependent control for Hurst checks."""
    duration = _check_duration(duration)
    if rate_pps < 0:
        raise ParameterError("rate must be non-negative")
    if duration == 0 or rate_pps == 0:
        return ArrivalStream.empty()
    rng = source_rng(seed, flow)
    mean_gap = 1e9 / rate_pps
    n_expected = duration / mean_gap
    chunks, t = [], 0.0
    while t < duration:
        gaps = rng.exponential(mean_gap, int(n_expected + 10 * math.sqrt(n_expected) + 16))
        times = t + np.cumsum(gaps)
        t = float(times[-1])
        chunks.append(times[times < duration])
    ts = np.floor(np.concatenate(chunks)).astype(np.int64)
    n = len(ts)
    return ArrivalStream(ts, np.ones(n, np.int64), np.zeros(n), np.full(n, packet_size),
                         np.full(n, class_code(app_class), np.int8), np.full(n, flow, np.int32))


def generate_cbr(load_bps: float, duration: int, packet_size: int = 1500, app_class: str = "BestEffort",
                 flow: int = 0, start: int = 0) -> ArrivalStream:
    """Constant-bit-rate packets as a single train."""
    duration = _check_duration(duration)
    if load_bps <= 0 or duration <= start:
        return ArrivalStream.empty()
    gap = packet_size * 8e9 / load_bps
    count = int(math.ceil((duration - start) / gap))
    if start + math.floor((count - 1) * gap) >= duration:
        count -= 1
    if count <= 0:
        return ArrivalStream.empty()
    return ArrivalStream([start], [count], [gap], [packet_size], [class_code(app_class)], [flow])


def calibrate_peak_rate(sources: Sequence[OnOffSourceParams], count_per_params: int, duration: int,
                        seed: int, target_utilization: float, capacity: float, rtol: float = 1e-3,
                        max_iter: int = 20) -> list[OnOffSourceParams]:
    """Rescale every source's peak rate so the aggregate mean utilization hits the target.

    ON/OFF sojourns depend only on the seed, so the achieved ON-time fraction
    is measured once and the peak rates are scaled to match.
    """
    from dataclasses import replace

    duration = _check_duration(duration)
    on_time = 0.0
    flow = 0
    for p in sources:
        probe = replace(p, peak_rate=p.packet_size * 8e9 / 1.0)  # 1 ns gap: ON time counted to the ns
        for _ in range(count_per_params):
            part = _onoff_source(probe, duration, source_rng(seed, flow), flow)
            if part is not None:
                on_time += float(part[1].sum()) * p.peak_rate
            flow += 1
    if on_time <= 0:
        raise ParameterError("sources never switch on within the horizon")
    scale = target_utilization * capacity * duration / on_time
    out = [replace(p, peak_rate=p.peak_rate * scale) for p in sources]
    # whole-packet truncation at ON-period ends loses bits; refine on the real generator
    target_bits = target_utilization * capacity * duration * 1e-9
    for _ in range(max_iter):
        bits = generate_aggregate(out, count_per_params, duration, seed).total_bits
        if bits <= 0:
            ratio = 2.0
        else:
            ratio = target_bits / bits
            if abs(ratio - 1.0) <= rtol:
                break
        out = [replace(p, peak_rate=p.peak_rate * ratio) for p in out]
    return out


# --- train surgery ---------------------------------------------------------------

def deoverlap(stream: ArrivalStream) -> ArrivalStream:
    """Make trains on one port strictly sequential by expanding overlapping runs into packets."""
    n = stream.n_trains
    if n <= 1:
        return stream
    order = np.lexsort((stream.flow, stream.start))
    s = stream if np.all(order == np.arange(n)) else ArrivalStream(
        stream.start[order], stream.count[order], stream.gap[order], stream.size[order],
        stream.app_class[order], stream.flow[order])
    last = s.start + np.floor((s.count - 1) * s.gap).astype(np.int64)
    prev_max = np.maximum.accumulate(last)
    overlap = np.zeros(n, bool)
    overlap[1:] = s.start[1:] <= prev_max[:-1]
    if not overlap.any():
        return s
    # a run of overlapping trains starts one before each flagged train
    group = overlap.copy()
    group[:-1] |= overlap[1:]
    keep = ~group
    parts = [ArrivalStream(s.start[keep], s.count[keep], s.gap[keep], s.size[keep], s.app_class[keep],
                           s.flow[keep])]
    g = ArrivalStream(s.start[group], s.count[group], s.gap[group], s.size[group], s.app_class[group],
                      s.flow[group])
    ts = g.timestamps
    parts.append(ArrivalStream(ts, np.ones(len(ts), np.int64), np.zeros(len(ts)), g.sizes, g.app_classes, g.flows))
    merged = ArrivalStream.merge(parts)
    order = np.lexsort((merged.flow, merged.start))
    return ArrivalStream(merged.start[order], merged.count[order], merged.gap[order], merged.size[order],
                         merged.app_class[order], merged.flow[order])


def split_at(stream: ArrivalStream, instants) -> ArrivalStream:
    """Split trains so none spans one of ``instants`` (a train starts at or after each)."""
    out = stream
    for t in sorted(set(int(x) for x in instants)):
        last = out.start + np.floor((out.count - 1) * out.gap).astype(np.int64)
        hit = np.nonzero((out.start < t) & (last >= t) & (out.count > 1))[0]
        if len(hit) == 0:
            continue
        starts, counts, gaps, sizes, classes, flows = [list(a) for a in (
            out.start, out.count, out.gap, out.size, out.app_class, out.flow)]
        for i in hit:
            k = int(math.ceil((t - out.start[i]) / out.gap[i]))
            while k > 0 and out.start[i] + math.floor((k - 1) * out.gap[i]) >= t:
                k -= 1
            while out.start[i] + math.floor(k * out.gap[i]) < t:
                k += 1
            # tail keeps exact packet times by shifting the fractional origin into a packet list
            tail_ts = out.start[i] + np.floor(np.arange(k, out.count[i]) * out.gap[i]).astype(np.int64)
            counts[i] = k
            starts.extend(tail_ts.tolist())
            counts.extend([1] * len(tail_ts))
            gaps.extend([0.0] * len(tail_ts))
            sizes.extend([out.size[i]] * len(tail_ts))
            classes.extend([out.app_class[i]] * len(tail_ts))
            flows.extend([out.flow[i]] * len(tail_ts))
        cols = [np.asarray(c) for c in (starts, counts, gaps, sizes, classes, flows)]
        order = np.lexsort((cols[5], cols[0]))
        out = ArrivalStream(*(c[order] for c in cols))
    return out


def split_sparse(stream: ArrivalStream, min_gap: float) -> ArrivalStream:
    """Expand trains whose packet spacing is at least ``min_gap`` into single packets."""
    sparse = (stream.count > 1) & (stream.gap >= min_gap)
    if not sparse.any():
        return stream
    keep = ~sparse
    g = ArrivalStream(stream.start[sparse], stream.count[sparse], stream.gap[sparse], stream.size[sparse],
                      stream.app_class[sparse], stream.flow[sparse])
    ts = g.timestamps
    singles = ArrivalStream(ts, np.ones(len(ts), np.int64), np.zeros(len(ts)), g.sizes, g.app_classes, g.flows)
    rest = ArrivalStream(stream.start[keep], stream.count[keep], stream.gap[keep], stream.size[keep],
                         stream.app_class[keep], stream.flow[keep])
    merged = ArrivalStream.merge([rest, singles])
    order = np.lexsort((merged.flow, merged.start))
    return ArrivalStream(merged.start[order], merged.count[order], merged.gap[order], merged.size[order],
                         merged.app_class[order], merged.flow[order])



# --- trace files -----------------------------------------------------------------

TRACE_HEADER = "timestamp_ns,size_bytes,app_class"


def load_trace(path: str | Path, *, mtu: int = DEFAULT_MTU) -> ArrivalStream:
    """Parse a ``timestamp_ns,size_bytes,app_class`` CSV trace."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        return ArrivalStream.empty()
    if lines[0].strip() != TRACE_HEADER:
        raise TraceParseError(1, f"expected header {TRACE_HEADER!r}")
    n = len(lines) - 1
    ts = np.empty(n, np.int64)
    sizes = np.empty(n, np.int64)
    classes = np.empty(n, np.int8)
    prev = None
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        parts = line.split(",")
        if len(parts) != 3:
            raise TraceParseError(lineno, f"expected 3 fields, got {len(parts)}")
        try:
            t, s = int(parts[0]), int(parts[1])
        except ValueError:
            raise TraceParseError(lineno, "timestamp and size must be integers") from None
        if t < 0:
            raise TraceParseError(lineno, "negative timestamp")
        if not MIN_PACKET <= s <= mtu:
            raise TraceParseError(lineno, f"size {s} outside [{MIN_PACKET}, {mtu}]")
        code = CLASS_CODE.get(parts[2].strip())
        if code is None:
            raise TraceParseError(lineno, f"unknown application class {parts[2]!r}")
        if prev is not None and t < prev:
            raise TraceOrderError(lineno, f"timestamp {t} precedes previous {prev}")
        prev = t
        ts[i], sizes[i], classes[i] = t, s, code
    return ArrivalStream.from_packets(ts, sizes, classes, mtu=mtu)


def write_trace(stream: ArrivalStream, path: str | Path) -> None:
    names = np.array(APP_CLASSES)
    ts, sz, cl = stream.timestamps, stream.sizes, stream.app_classes
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        if len(ts):
            rows = np.char.add(np.char.add(np.char.add(np.char.add(ts.astype(str), ","), sz.astype(str)), ","),
                               names[cl])
            fh.write("\n".join(rows.tolist()))
            fh.write("\n")


# --- utilization and Hurst ---------------------------------------------------------

@dataclass(frozen=True)
class UtilizationSeries:
    bin_width: int
    capacity: float
    values: np.ndarray
    overload: bool = False


def _bits_per_bin(stream: ArrivalStream, bin_width: int, n_bins: int) -> np.ndarray:
    bits = np.zeros(n_bins, dtype=np.float64)
    if stream.n_trains == 0:
        return bits
    start, count, gap, size = stream.start, stream.count, stream.gap, stream.size
    last = start + np.floor((count - 1) * gap).astype(np.int64)
    b0 = start // bin_width
    b1 = last // bin_width
    pkt_bits = size * 8.0
    single = b0 == b1
    np.add.at(bits, np.minimum(b0[single], n_bins - 1), (count * pkt_bits)[single])
    multi = np.flatnonzero(~single)
    if len(multi):
        spans = (b1 - b0 + 1)[multi]
        rep = np.repeat(multi, spans)
        offs = np.arange(spans.sum()) - np.repeat(np.cumsum(spans) - spans, spans)
        b = b0[rep] + offs
        lo = b * bin_width - start[rep]
        hi = lo + bin_width
        g = gap[rep]
        c = count[rep]
        # packets k with floor(k*g) in [lo, hi)  <=>  k*g in [lo, hi) for integer lo, hi
        n_lo = np.clip(np.ceil(np.maximum(lo, 0) / g), 0, c)
        n_hi = np.clip(np.ceil(hi / g), 0, c)
        np.add.at(bits, np.minimum(b, n_bins - 1), (n_hi - n_lo) * pkt_bits[rep])
    return bits


def utilization_series(stream: ArrivalStream, bin_width: int, capacity: float,
                       duration: int | None = None) -> UtilizationSeries:
    """Fraction of ``capacity`` used per bin; values above 1 clamp and set ``overload``."""
    if bin_width <= 0 or capacity <= 0:
        raise ParameterError("bin_width and capacity must be positive")
    if duration is None:
        duration = int(stream.timestamps[-1]) + 1 if len(stream) else bin_width
    n_bins = max(1, -(-int(duration) // int(bin_width)))
    bits = _bits_per_bin(stream, int(bin_width), n_bins)
    raw = bits / (capacity * bin_width * 1e-9)
    overload = bool(np.any(raw > 1.0))
    return UtilizationSeries(int(bin_width), float(capacity), np.minimum(raw, 1.0), overload)


@dataclass(frozen=True)
class HurstEstimate:
    hurst: float
    slope: float
    residual: float
    levels: np.ndarray
    variances: np.ndarray


def aggregation_ladder(min_agg: int, max_agg: int) -> list[int]:
    ladder, m = [], min_agg
    while m <= max_agg:
        ladder.append(m)
        m *= 2
    return ladder


def estimate_hurst(series: UtilizationSeries | np.ndarray, min_agg: int = 1, max_agg: int | None = None) -> HurstEstimate:
    """Variance-time estimate of the Hurst parameter.

    The variance of m-block means is fitted against m in log-log space over a
    doubling ladder of m; ``H = 1 + slope / 2``.
    """
    x = np.asarray(series.values if isinstance(series, UtilizationSeries) else series, dtype=np.float64)
    if max_agg is None:
        max_agg = max(min_agg + 1, len(x) // 10)
    if min_agg < 1 or max_agg <= min_agg:
        raise ParameterError("need 1 <= min_agg < max_agg")
    if len(x) < 10 * max_agg:
        raise ParameterError(f"series of length {len(x)} too short for max_agg={max_agg}")
    levels = aggregation_ladder(min_agg, max_agg)
    if len(levels) < 2:
        raise ParameterError("aggregation ladder needs at least two levels")
    variances = []
    for m in levels:
        n = len(x) // m
        v = x[: n * m].reshape(n, m).mean(axis=1).var(ddof=1)
        if not v > 0:
            raise DegenerateSeriesError(f"zero variance at aggregation level {m}")
        variances.append(v)
    lx, ly = np.log(levels), np.log(variances)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    h = min(max(1.0 + slope / 2.0, 1e-9), 1 - 1e-9)
    return HurstEstimate(float(h), float(slope), resid, np.array(levels), np.array(variances))
