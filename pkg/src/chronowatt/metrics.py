"""Efficiency metrics and reports over simulation results."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

from .engine import SimResult
from .errors import InputError
from .sla import APP_CLASSES

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EfficiencyPoint:
    x: float
    watts: float
    gbps: float
    ecr: float | None  # None when nothing was delivered

    def row(self) -> list:
        return [self.x, f"{self.watts:.6f}", f"{self.gbps:.6f}",
                "undefined" if self.ecr is None else f"{self.ecr:.6f}"]


def ecr(result: SimResult) -> float | None:
    """Average watts per delivered Gbps; ``None`` when throughput is zero."""
    if result.delivered_bits == 0 or result.duration == 0:
        return None
    return result.average_power / result.delivered_gbps


def point(result: SimResult, x: float) -> EfficiencyPoint:
    return EfficiencyPoint(float(x), result.average_power, result.delivered_gbps, ecr(result))


def _check_same_device(results: Sequence[SimResult], min_points: int = 2) -> None:
    if len(results) < min_points:
        raise InputError(f"a curve needs at least {min_points} results")
    names = {r.device_name for r in results}
    if len(names) > 1:
        raise InputError(f"results mix device models: {sorted(names)}")


def efficiency_curve(results: Sequence[SimResult], loads: Sequence[float] | None = None) -> list[EfficiencyPoint]:
    """ECR against offered load, sorted by load."""
    _check_same_device(results)
    if loads is None:
        loads = [r.meta.get("load") for r in results]
        if any(x is None for x in loads):
            raise InputError("results carry no offered-load metadata; pass loads explicitly")
    if len(loads) != len(results):
        raise InputError("one load value per result is required")
    return sorted((point(r, x) for r, x in zip(results, loads)), key=lambda p: p.x)


def packet_size_curve(results: Sequence[SimResult], sizes: Sequence[int] | None = None) -> list[EfficiencyPoint]:
    _check_same_device(results)
    sizes = sizes if sizes is not None else [r.meta.get("packet_size") for r in results]
    if any(x is None for x in sizes) or len(sizes) != len(results):
        raise InputError("one packet size per result is required")
    return sorted((point(r, x) for r, x in zip(results, sizes)), key=lambda p: p.x)


def chassis_fill_curve(results: Sequence[SimResult], fills: Sequence[int] | None = None) -> list[EfficiencyPoint]:
    """ECR against the number of populated linecards."""
    _check_same_device(results, min_points=1)
    fills = fills if fills is not None else [r.meta.get("populated") for r in results]
    if any(x is None for x in fills) or len(fills) != len(results):
        raise InputError("one fill count per result is required")
    return sorted((point(r, x) for r, x in zip(results, fills)), key=lambda p: p.x)


def breakdown_report(result: SimResult, scope: str | None = "linecard") -> dict[str, float]:
    """Energy share per component kind.

    ``scope="linecard"`` restricts the report to linecard components (the
    usual per-card budget view); ``None`` covers the whole device.
    """
    totals: dict[str, float] = {}
    for name, states in result.energy_ledger.items():
        if scope is not None and result.component_scope.get(name) != scope:
            continue
        kind = result.component_kind.get(name, name)
        totals[kind] = totals.get(kind, 0.0) + sum(states.values())
    grand = sum(totals.values())
    if grand <= 0:
        return {}
    return {k: v / grand for k, v in sorted(totals.items())}


def delay_summary(result: SimResult) -> dict[str, dict]:
    """Per-class delay quantiles, policy-added delay (jitter) and SLA violations."""
    out = {}
    for cls in APP_CLASSES:
        st = result.delay.get(cls)
        if st is None or st.count == 0:
            continue
        out[cls] = {
            "count": st.count,
            "p50_ns": st.quantile(0.5), "p95_ns": st.quantile(0.95), "p99_ns": st.quantile(0.99),
            "max_ns": st.max, "min_ns": st.min, "mean_ns": st.mean,
            "added_p50_ns": st.quantile(0.5, added=True), "added_p99_ns": st.quantile(0.99, added=True),
            "added_max_ns": st.added_max,
            "budget_ns": st.budget, "violations": st.violations,
        }
    return out


def total_violations(result: SimResult) -> int:
    return sum(st.violations for st in result.delay.values())


def curve_csv(points: Sequence[EfficiencyPoint]) -> str:
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "watts", "gbps", "ecr"])
    for p in points:
        w.writerow(p.row())
    return buf.getvalue()


def summary(result: SimResult) -> dict:
    """JSON-ready bundle of every report for one run."""
    e = ecr(result)
    return {
        "format_version": FORMAT_VERSION,
        "device": result.device_name,
        "duration_ns": result.duration,
        "meta": result.meta,
        "total_energy_j": result.total_energy,
        "average_power_w": result.average_power,
        "delivered_gbps": result.delivered_gbps,
        "ecr_w_per_gbps": "undefined" if e is None else e,
        "packets": {
            "offered": result.offered_packets, "delivered": result.delivered_packets,
            "dropped": result.dropped, "residual": result.residual_packets,
        },
        "energy_by_component": result.energy_ledger,
        "breakdown_linecard": breakdown_report(result),
        "breakdown_device": breakdown_report(result, scope=None),
        "delay": delay_summary(result),
        "event_digest": result.event_digest,
        "event_count": result.event_count,
    }


def summary_json(result: SimResult) -> str:
    return json.dumps(summary(result), indent=2, sort_keys=True)
