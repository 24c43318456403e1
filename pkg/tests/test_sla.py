import pytest
from hypothesis import given, strategies as st

from chronowatt.errors import ParameterError
from chronowatt.sla import (AppClassSpec, MarginalPolicy, Verdict, default_policy, may_sleep, strictest_allows,
                            threshold_verdict, tolerance_matrix)

# Literal wake-time tolerance table: (kind, wake ns, MC, BFD, Video, Voice); "?" means marginal.
TABLE = [
    ("PHY_Link", 10_000, "yes", "yes", "yes", "yes"),
    ("Serdes", 100_000, "yes", "yes", "yes", "yes"),
    ("NPU_Core", 90, "?", "yes", "yes", "yes"),
    ("SRAM_Bank", 30_000_000, "no", "?", "?", "no"),
    ("EmbeddedCPU", 2_000_000_000, "no", "no", "no", "no"),
    ("CentralCPU", 100_000_000_000, "no", "no", "no", "no"),
]
MS = 1_000_000


def _verdict(cell):
    return Verdict.MARGINAL if cell == "?" else Verdict(cell)


def test_budgets():
    p = default_policy()
    assert p.budget("Video") == 10 * MS
    assert p.budget("Voice") == 30 * MS
    assert p.budget("BFD") == 50 * MS
    assert p.budget("MC") == 1 * MS
    assert p.budget("BestEffort") is None


def test_shipped_matrix_cell_for_cell():
    m = tolerance_matrix()
    assert m.classes == ("MC", "BFD", "Video", "Voice")
    assert [r for r in m.rows] == [(k, w) for k, w, *_ in TABLE]
    for kind, _, *cells in TABLE:
        for cls, cell in zip(m.classes, cells):
            assert m.verdict(kind, cls) is _verdict(cell), (kind, cls)


def test_matrix_csv_and_text():
    m = tolerance_matrix()
    lines = m.to_csv().strip().splitlines()
    assert lines[0] == "kind,wake_ns,MC,BFD,Video,Voice"
    assert lines[3] == "NPU_Core,90,marginal,yes,yes,yes"
    text = m.to_text()
    assert "SRAM bank" in text and "marginal" in text


def test_user_components_use_threshold():
    m = tolerance_matrix([("Custom", 0), ("Slow", 100 * 10**9)])
    assert all(v is Verdict.YES for v in m.cells[0])
    assert all(v is Verdict.NO for v in m.cells[1])


def test_empty_matrix_rejected():
    with pytest.raises(ParameterError):
        tolerance_matrix([])


@pytest.mark.parametrize("delay,cls,kind,expected", [
    (10_000, "Voice", "PHY_Link", True),
    (30 * MS, "Voice", "SRAM_Bank", False),
    (2 * 10**9, "BFD", "EmbeddedCPU", False),
    (30 * MS, "Voice", None, False),  # strict: 30 ms < 30 ms is false
    (30 * MS - 1, "Voice", None, True),
    (10**12, "BestEffort", None, True),
])
def test_may_sleep_examples(delay, cls, kind, expected):
    assert may_sleep(delay, cls, kind=kind) is expected


def test_marginal_policy_resolution():
    assert not may_sleep(90, "MC", MarginalPolicy.TREAT_AS_NO, kind="NPU_Core")
    assert may_sleep(90, "MC", MarginalPolicy.TREAT_AS_YES, kind="NPU_Core")
    assert may_sleep(30 * MS, "BFD", "treat_as_yes", kind="SRAM_Bank")


def test_custom_class_spec():
    assert may_sleep(4 * MS, AppClassSpec("Gaming", 5 * MS))
    assert not may_sleep(5 * MS, AppClassSpec("Gaming", 5 * MS))


def test_threshold_band():
    assert threshold_verdict(9, 30) is Verdict.YES
    assert threshold_verdict(10, 30) is Verdict.MARGINAL
    assert threshold_verdict(90, 30) is Verdict.MARGINAL
    assert threshold_verdict(91, 30) is Verdict.NO


def test_strictest_class_gates():
    assert strictest_allows(5 * MS, ["Voice", "BFD"], None, "treat_as_no")
    assert not strictest_allows(5 * MS, ["Voice", "MC"], None, "treat_as_no")
    assert strictest_allows(10**12, [], None, "treat_as_no")


@given(st.integers(0, 10**11), st.integers(0, 10**11), st.sampled_from(["MC", "BFD", "Video", "Voice"]))
def test_threshold_monotone(d1, d2, cls):
    lo, hi = sorted((d1, d2))
    if may_sleep(hi, cls):
        assert may_sleep(lo, cls)


@given(st.integers(0, 10**11))
def test_class_ordering(delay):
    if may_sleep(delay, "Video"):
        assert may_sleep(delay, "Voice")
    if may_sleep(delay, "Voice"):
        assert may_sleep(delay, "BFD")
