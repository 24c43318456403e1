import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chronowatt.errors import DegenerateSeriesError, DurationError, ParameterError, TraceOrderError, TraceParseError
from chronowatt.traffic import (TRACE_HEADER, ArrivalStream, OnOffSourceParams, aggregation_ladder,
                                calibrate_peak_rate, deoverlap, estimate_hurst, generate_aggregate, generate_cbr,
                                generate_poisson, load_trace, split_at, split_sparse, utilization_series,
                                write_trace)

SRC = OnOffSourceParams(peak_rate=1e7)


def test_empty_generation():
    assert len(generate_aggregate([SRC], 0, 10**9, 1)) == 0
    assert len(generate_aggregate([SRC], 8, 0, 1)) == 0


@pytest.mark.parametrize("alpha", [1.0, 2.0, 0.5, 2.5])
def test_alpha_bounds(alpha):
    with pytest.raises(ParameterError):
        OnOffSourceParams(shape_on=alpha)


def test_duration_overflow():
    with pytest.raises(DurationError):
        generate_aggregate([SRC], 1, 2**63, 1)


def test_pareto_mean():
    p = OnOffSourceParams(shape_on=1.5, min_on=2e6)
    assert p.mean_on == pytest.approx(6e6)


def test_deterministic_bytes():
    a = generate_aggregate([SRC], 4, 10**9, 42)
    b = generate_aggregate([SRC], 4, 10**9, 42)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != generate_aggregate([SRC], 4, 10**9, 43).to_bytes()


def test_merge_is_union_of_sources():
    agg = generate_aggregate([SRC], 6, 5 * 10**8, 9)
    assert np.all(np.diff(agg.timestamps) >= 0)
    per_source = [agg.select_flows([f]) for f in range(6)]
    assert sum(len(s) for s in per_source) == len(agg)
    # adding sources leaves existing sources untouched
    bigger = generate_aggregate([SRC], 8, 5 * 10**8, 9)
    for f in range(6):
        assert bigger.select_flows([f]).to_bytes() == per_source[f].to_bytes()


def test_on_periods_hold_whole_packets():
    p = OnOffSourceParams(peak_rate=1e6, packet_size=1500)  # 12 ms per packet, min ON 1 ms
    s = generate_aggregate([p], 1, 10**10, 3)
    assert np.all(s.count >= 1)
    assert np.allclose(s.gap, p.packet_gap)


def test_cbr_train():
    s = generate_cbr(1e9, 10**6, 1250)
    assert s.n_trains == 1 and len(s) == 100
    assert s.timestamps[-1] == 990_000


def test_trace_roundtrip(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(f"{TRACE_HEADER}\n0,64,Voice\n10,1500,BestEffort\n10,200,MC\n")
    s = load_trace(path)
    assert len(s) == 3 and list(s.sizes) == [64, 1500, 200]
    out = tmp_path / "u.csv"
    write_trace(s, out)
    assert load_trace(out).to_bytes() == s.to_bytes()


def test_trace_empty(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("")
    assert len(load_trace(path)) == 0


def test_trace_errors(tmp_path):
    bad = tmp_path / "b.csv"
    bad.write_text(f"{TRACE_HEADER}\n5,64,Voice\n4,64,Voice\n")
    with pytest.raises(TraceOrderError) as exc:
        load_trace(bad)
    assert exc.value.line == 3
    bad.write_text(f"{TRACE_HEADER}\n5,64\n")
    with pytest.raises(TraceParseError) as exc:
        load_trace(bad)
    assert exc.value.line == 2
    bad.write_text(f"{TRACE_HEADER}\n5,10,Voice\n")
    with pytest.raises(TraceParseError):
        load_trace(bad)


def test_utilization_single_packet():
    s = ArrivalStream.from_packets([0], [1500], [4])
    u = utilization_series(s, 1_000_000, 1e8, duration=3_000_000)
    assert u.values[0] == pytest.approx(0.12)
    assert np.all(u.values[1:] == 0)


def test_utilization_empty_and_overload():
    u = utilization_series(ArrivalStream.empty(), 1000, 1e9, duration=10_000)
    assert np.all(u.values == 0)
    s = ArrivalStream.from_packets([0, 0, 0], [1500] * 3, [4] * 3)
    u = utilization_series(s, 1000, 1e9, duration=1000)
    assert u.values[0] == 1.0 and u.overload


def test_utilization_matches_packet_count():
    s = generate_aggregate([SRC], 4, 10**9, 5)
    u = utilization_series(s, 10**6, 1e9, duration=10**9)
    raw = np.bincount(s.timestamps // 10**6, weights=s.sizes * 8.0, minlength=1000)[:1000] / 1e6
    assert np.allclose(np.minimum(raw, 1.0), u.values)


def test_calibrated_low_utilization_is_bursty():
    sources = calibrate_peak_rate([OnOffSourceParams()], 8, 10**12, 11, 0.01, 1e8)
    s = generate_aggregate(sources, 8, 10**12, 11)
    u = utilization_series(s, 10**6, 1e8, duration=10**12).values
    assert u.mean() == pytest.approx(0.010, abs=0.002)
    assert u.max() >= 10 * u.mean()


def test_ladder():
    assert aggregation_ladder(1, 16) == [1, 2, 4, 8, 16]
    assert aggregation_ladder(3, 20) == [3, 6, 12]


def test_hurst_uniform_noise():
    x = np.random.default_rng(0).random(200_000)
    assert estimate_hurst(x).hurst == pytest.approx(0.5, abs=0.1)


def test_hurst_degenerate():
    with pytest.raises(DegenerateSeriesError):
        estimate_hurst(np.ones(1000))


def test_poisson_rate():
    s = generate_poisson(1000.0, 10**10, 1)
    assert len(s) == pytest.approx(10_000, rel=0.05)


def test_deoverlap_keeps_packets():
    a = ArrivalStream([0, 50], [10, 10], [10.0, 10.0], [64, 64], [4, 4], [0, 1])
    d = deoverlap(a)
    assert np.array_equal(np.sort(d.timestamps), np.sort(a.timestamps))
    last = d.start + np.floor((d.count - 1) * d.gap).astype(np.int64)
    assert np.all(d.start[1:] >= last[:-1])


def test_split_helpers():
    a = ArrivalStream([0], [10], [10.5], [64], [4], [0])
    s = split_at(a, [40])
    assert np.array_equal(s.timestamps, a.timestamps)
    assert all(st_ >= 40 or st_ + np.floor((c - 1) * g) < 40 for st_, c, g in zip(s.start, s.count, s.gap))
    sp = split_sparse(a, 10.0)
    assert sp.n_trains == 10 and np.array_equal(sp.timestamps, a.timestamps)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(1, 20), st.floats(1.0, 500.0)), min_size=1,
                max_size=8))
def test_deoverlap_property(trains):
    start, count, gap = zip(*sorted(trains))
    s = ArrivalStream(list(start), list(count), list(gap), [64] * len(start), [4] * len(start))
    d = deoverlap(s)
    assert np.array_equal(np.sort(d.timestamps), np.sort(s.timestamps))
    last = d.start + np.floor((d.count - 1) * d.gap).astype(np.int64)
    assert np.all(d.start[1:] >= last[:-1])


def test_split_at_interleaved_trains_stay_sorted():
    s = ArrivalStream([0, 5, 7], [10, 10, 1], [10.0, 10.0, 0.0], [100, 100, 100], [4, 4, 4], [0, 1, 2])
    out = split_at(s, [50])
    assert np.all(np.diff(out.start) >= 0)
    assert np.array_equal(np.sort(out.timestamps), np.sort(s.timestamps))
    assert np.all(out.start[out.start < 50] + np.floor((out.count[out.start < 50] - 1) * out.gap[out.start < 50]) < 50)
