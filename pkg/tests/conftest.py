from contextlib import contextmanager

import numpy as np
import pytest

from chronowatt.lpi import cycle_boundaries, cycle_phase_at
from chronowatt.power import instantaneous_power


def _functional_ns(segments, a, b):
    return sum(max(0, min(e, b) - max(s, a)) for s, e, label, *_ in segments if label == "Active")


def integrate_power(result, device):
    """Independent wall-side energy: integrate instantaneous_power over a fine partition.

    Needs a result recorded with ``record_history``. Each component's rate in
    a window is the window's bits and packets spread over the time the
    component was functional in that window.
    """
    hist = result.history
    W = result.windows["width"]
    T = result.duration
    specs = device.by_name()
    cuts = set(range(0, T + 1, W)) | {T}
    for name, h in hist.items():
        for s, e, label, draw, origin, state in h["segments"]:
            cuts.update((s, e))
            if label == "LpiCycle":
                cuts.update(cycle_boundaries(specs[name].lpi, origin, s, e))
    cuts = sorted(c for c in cuts if 0 <= c <= T)

    def port_sum(key, ports, w):
        return sum(result.windows[key][p][w] for p in ports)

    rates_cache = {}
    total = 0.0
    seg_idx = {name: 0 for name in hist}
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        w = a // W
        states, rates = {}, {}
        for name, h in hist.items():
            segs = h["segments"]
            i = seg_idx[name]
            while segs[i][1] <= a:
                i += 1
            seg_idx[name] = i
            s, e, label, draw, origin, state = segs[i]
            if label == "LpiCycle":
                state = cycle_phase_at(specs[name].lpi, origin, a).phase.value
            states[name] = state
            spec = specs[name]
            if state == "Active" and spec.coefficients.capacity_bps > 0:
                key = (name, w)
                if key not in rates_cache:
                    lo, hi = w * W, min((w + 1) * W, T)
                    ft = _functional_ns(segs, lo, hi) * 1e-9
                    bits = port_sum("bits", spec.ports, w)
                    pkts = port_sum("packets", spec.ports, w)
                    rates_cache[key] = (bits / ft, pkts / ft) if ft > 0 else (0.0, 0.0)
                rates[name] = rates_cache[key]
        total += instantaneous_power(device, states, rates) * (b - a) * 1e-9
    for name, h in hist.items():
        scale = 1.0 if specs[name].ac_side else 1.0 / device.efficiency
        total += sum(e for _, e in h["impulses"]) * scale
    return total


def packet_conserved(r):
    return r.offered_packets == r.delivered_packets + sum(r.dropped.values()) + r.residual_packets


def uniform_arrivals(n, lo, hi, seed):
    rng = np.random.default_rng(seed)
    return np.cumsum(rng.integers(lo, hi, n))


_VERDICTS: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """Context manager that records a PASS/FAIL verdict for one acceptance criterion."""
    @contextmanager
    def record(number: int, title: str):
        try:
            yield
        except BaseException:
            _VERDICTS[number] = ("FAIL", title)
            raise
        _VERDICTS[number] = ("PASS", title)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title = _VERDICTS[n]
        terminalreporter.write_line(f"{verdict} criterion {n:2d}: {title}")
