"""Application jitter budgets and the component wake-time tolerance matrix.

Shipped components carry a literal verdict per application class (the
matrix is data, not a derivation). Components that are not in the shipped
matrix fall back to a strict threshold against the class jitter budget.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ParameterError

APP_CLASSES = ("MC", "BFD", "Video", "Voice", "BestEffort")


class Verdict(str, Enum):
    YES = "yes"
    NO = "no"
    MARGINAL = "marginal"


class MarginalPolicy(str, Enum):
    TREAT_AS_YES = "treat_as_yes"
    TREAT_AS_NO = "treat_as_no"


@dataclass(frozen=True)
class AppClassSpec:
    name: str
    jitter_budget: int | None  # ns; None means no budget stated

    def __post_init__(self):
        if self.jitter_budget is not None and self.jitter_budget < 0:
            raise ParameterError(f"negative jitter budget for {self.name}")


@dataclass(frozen=True)
class ToleranceEntry:
    kind: str
    wake_ns: int
    app_class: str
    verdict: Verdict


@dataclass(frozen=True)
class ToleranceRow:
    kind: str
    label: str
    wake_ns: int
    verdicts: Mapping[str, Verdict]


@dataclass(frozen=True)
class SlaPolicy:
    classes: Mapping[str, AppClassSpec]
    class_order: tuple[str, ...]
    rows: tuple[ToleranceRow, ...] = ()
    _by_kind: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._by_kind.update({row.kind: row for row in self.rows})

    def budget(self, app_class: str) -> int | None:
        spec = self.classes.get(app_class)
        return None if spec is None else spec.jitter_budget

    def row_for(self, kind: str) -> ToleranceRow | None:
        return self._by_kind.get(kind)

    def with_budget(self, app_class: str, budget_ns: int) -> "SlaPolicy":
        classes = dict(self.classes)
        classes[app_class] = AppClassSpec(app_class, budget_ns)
        return SlaPolicy(classes, self.class_order, self.rows)


def _policy_from_doc(doc: Mapping) -> SlaPolicy:
    classes = {c["name"]: AppClassSpec(c["name"], c.get("jitter_budget_ns")) for c in doc["classes"]}
    rows = tuple(
        ToleranceRow(r["kind"], r.get("label", r["kind"]), int(r["wake_ns"]),
                     {k: Verdict(v) for k, v in r["verdicts"].items()})
        for r in doc.get("matrix", [])
    )
    order = tuple(doc.get("class_order", list(classes)))
    return SlaPolicy(classes, order, rows)


def load_policy(path: str | Path | None = None) -> SlaPolicy:
    """Load a JSON policy file; ``None`` loads the shipped table."""
    if path is None:
        text = resources.files("chronowatt").joinpath("data/sla_policy.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return _policy_from_doc(json.loads(text))


_DEFAULT: SlaPolicy | None = None


def default_policy() -> SlaPolicy:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_policy()
    return _DEFAULT


def _resolve(verdict: Verdict, marginal_policy: MarginalPolicy | str) -> bool:
    if verdict is Verdict.MARGINAL:
        return MarginalPolicy(marginal_policy) is MarginalPolicy.TREAT_AS_YES
    return verdict is Verdict.YES


def threshold_verdict(wake_ns: int, budget: int | None) -> Verdict:
    """Heuristic verdict for components outside the shipped matrix.

    Marginal when the wake time is within a factor of three of the budget.
    """
    if budget is None:
        return Verdict.YES
    if wake_ns < budget / 3:
        return Verdict.YES
    if wake_ns <= 3 * budget:
        return Verdict.MARGINAL
    return Verdict.NO


def may_sleep(total_wake_delay: int, app_class: str | AppClassSpec,
              marginal_policy: MarginalPolicy | str = MarginalPolicy.TREAT_AS_NO,
              kind: str | None = None, policy: SlaPolicy | None = None) -> bool:
    """Whether a component may sleep given the traffic class it serves.

    A shipped matrix entry for ``kind`` overrides the delay threshold.
    Otherwise sleeping is allowed iff the wake delay is strictly below the
    class jitter budget.
    """
    policy = policy or default_policy()
    if isinstance(app_class, AppClassSpec):
        name, budget = app_class.name, app_class.jitter_budget
    else:
        name, budget = app_class, policy.budget(app_class)
    if kind is not None:
        row = policy.row_for(kind)
        if row is not None and name in row.verdicts:
            return _resolve(row.verdicts[name], marginal_policy)
    if budget is None:
        return True
    return total_wake_delay < budget


@dataclass(frozen=True)
class ToleranceMatrix:
    rows: tuple[tuple[str, int], ...]
    classes: tuple[str, ...]
    cells: tuple[tuple[Verdict, ...], ...]
    labels: tuple[str, ...] = ()

    def entries(self) -> list[ToleranceEntry]:
        return [ToleranceEntry(k, w, c, v)
                for (k, w), verdicts in zip(self.rows, self.cells)
                for c, v in zip(self.classes, verdicts)]

    def verdict(self, kind: str, app_class: str) -> Verdict:
        i = [k for k, _ in self.rows].index(kind)
        return self.cells[i][self.classes.index(app_class)]

    def to_text(self) -> str:
        names = [f"{lab} - {_fmt_ns(w)}" for lab, (_, w) in zip(self.labels or [k for k, _ in self.rows], self.rows)]
        left = max(len(n) for n in names)
        widths = [max(len(c), 8) for c in self.classes]
        lines = [" " * left + "  " + "  ".join(c.ljust(w) for c, w in zip(self.classes, widths))]
        for name, verdicts in zip(names, self.cells):
            lines.append(name.ljust(left) + "  " + "  ".join(v.value.ljust(w) for v, w in zip(verdicts, widths)))
        return "\n".join(line.rstrip() for line in lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "wake_ns", *self.classes])
        for (kind, wake), verdicts in zip(self.rows, self.cells):
            w.writerow([kind, wake, *[v.value for v in verdicts]])
        return buf.getvalue()


def _fmt_ns(ns: int) -> str:
    for unit, scale in (("s", 10**9), ("ms", 10**6), ("us", 10**3)):
        if ns >= scale:
            value = ns / scale
            return f"{value:g} {unit}"
    return f"{ns} ns"


def tolerance_matrix(components: Sequence[tuple[str, int]] | None = None,
                     classes: Sequence[str | AppClassSpec] | None = None,
                     policy: SlaPolicy | None = None) -> ToleranceMatrix:
    """Verdict per (component, class).

    Shipped kinds return their literal matrix cells; other components are
    derived from their wake time with :func:`threshold_verdict`.
    """
    policy = policy or default_policy()
    if components is None:
        components = [(r.kind, r.wake_ns) for r in policy.rows]
    if classes is None:
        classes = list(policy.class_order)
    if not components or not classes:
        raise ParameterError("tolerance matrix needs at least one component and one class")
    class_specs = [c if isinstance(c, AppClassSpec) else AppClassSpec(c, policy.budget(c)) for c in classes]
    cells, labels = [], []
    for kind, wake in components:
        row = policy.row_for(kind)
        labels.append(row.label if row is not None else kind)
        out = []
        for spec in class_specs:
            if row is not None and spec.name in row.verdicts:
                out.append(row.verdicts[spec.name])
            else:
                out.append(threshold_verdict(wake, spec.jitter_budget))
        cells.append(tuple(out))
    return ToleranceMatrix(tuple((k, int(w)) for k, w in components),
                           tuple(c.name for c in class_specs), tuple(cells), tuple(labels))


def strictest_allows(wake_delay: int, classes: Iterable[str], kind: str | None,
                     marginal_policy: MarginalPolicy | str, policy: SlaPolicy | None = None) -> bool:
    """True iff every class in ``classes`` tolerates the wake delay."""
    return all(may_sleep(wake_delay, c, marginal_policy, kind=kind, policy=policy) for c in classes)
