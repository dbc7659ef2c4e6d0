"""mMAPE and Mean/Median aggregation by product group."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .preprocess import GroupAssignment

TABLE_GROUPS = ("All", "G1", "G2", "G3")


def mmape(forecast, actual) -> float:
    """``mean(|F - A| / (1 + |A|))`` over the horizon."""
    f = np.asarray(forecast, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if f.shape != a.shape:
        raise ValueError(f"forecast length {f.shape} does not match actual length {a.shape}")
    if f.ndim != 1 or len(f) == 0:
        raise ValueError("mmape needs non-empty 1-D inputs")
    return float(np.mean(np.abs(f - a) / (1.0 + np.abs(a))))


def lower_median(values: Sequence[float]) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(len(v) - 1) // 2])


@dataclass(frozen=True)
class GroupStats:
    mean_mmape: float
    median_mmape: float
    k: int


@dataclass
class MetricReport:
    model_tag: str
    per_item: Dict[str, float]
    aggregates: Dict[str, Optional[GroupStats]]
    excluded: int = 0
    note: str = ""

    def get(self, group: str = "All") -> Optional[GroupStats]:
        return self.aggregates.get(group)

    @property
    def mean(self) -> float:
        return self.aggregates["All"].mean_mmape


def _stats(vals: List[float]) -> Optional[GroupStats]:
    if not vals:
        return None
    return GroupStats(float(np.mean(vals)), lower_median(vals), len(vals))


def aggregate(per_item: Mapping[str, float], groups: Optional[GroupAssignment], model_tag: str = "",
              excluded: int = 0, note: str = "") -> MetricReport:
    """Mean and (lower) median per group label plus an ``All`` row.

    Groups with no scored items are reported as ``None`` rather than zero.
    """
    per_item = dict(per_item)
    agg: Dict[str, Optional[GroupStats]] = {"All": _stats(list(per_item.values()))}
    if groups is not None:
        missing = [i for i in per_item if i not in groups.labels]
        if missing:
            raise KeyError(f"items without a group label: {missing[:5]}")
        labels = sorted({str(v) for v in groups.labels.values()} | {"G1", "G2", "G3"}) \
            if groups.strategy == "domain" else sorted({str(v) for v in groups.labels.values()})
        for lab in labels:
            agg[lab] = _stats([v for i, v in per_item.items() if str(groups.labels[i]) == lab])
    return MetricReport(model_tag, per_item, agg, excluded, note)


def score_forecasts(forecasts: Mapping[str, np.ndarray], actuals: Mapping[str, np.ndarray],
                    groups: Optional[GroupAssignment], model_tag: str, clamp: bool = False,
                    excluded: int = 0, note: str = "") -> MetricReport:
    per_item = {}
    for iid, f in forecasts.items():
        f = np.asarray(f, dtype=np.float64)
        if clamp:
            f = np.maximum(f, 0.0)
        per_item[iid] = mmape(f, actuals[iid])
    return aggregate(per_item, groups, model_tag, excluded, note)


def _fmt(x: Optional[GroupStats], attr: str) -> str:
    return "-" if x is None else f"{getattr(x, attr):.3f}"


def format_table(reports: Sequence[MetricReport], groups: Sequence[str] = TABLE_GROUPS) -> str:
    """Plain-text table: one row per model, Mean/Median per group."""
    first = reports[0] if reports else None
    head1 = f"{'Model':<28}" + "".join(f"{'mMAPE (' + g + ')':^18}" for g in groups)
    ks = []
    for g in groups:
        st = first.get(g) if first else None
        ks.append(f"{'k = ' + (str(st.k) if st else '0'):^18}")
    head2 = f"{'':<28}" + "".join(ks)
    head3 = f"{'':<28}" + "".join(f"{'Mean':>8}  {'Median':<8}" for _ in groups)
    lines = [head1, head2, head3, "-" * len(head1)]
    for r in reports:
        row = f"{r.model_tag:<28}"
        for g in groups:
            st = r.get(g)
            row += f"{_fmt(st, 'mean_mmape'):>8}  {_fmt(st, 'median_mmape'):<8}"
        lines.append(row)
    return "\n".join(lines)


def write_report_csv(reports: Sequence[MetricReport], path, clamped_flags: Optional[Sequence[bool]] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_tag", "clamped", "group", "k", "mean_mmape", "median_mmape", "excluded"])
        for j, r in enumerate(reports):
            clamped = int(clamped_flags[j]) if clamped_flags is not None else 0
            for g, st in r.aggregates.items():
                if st is None:
                    w.writerow([r.model_tag, clamped, g, 0, "", "", r.excluded])
                else:
                    w.writerow([r.model_tag, clamped, g, st.k, repr(st.mean_mmape), repr(st.median_mmape), r.excluded])


def write_per_item_csv(reports: Sequence[MetricReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_tag", "item_id", "mmape"])
        for r in reports:
            for iid in sorted(r.per_item):
                w.writerow([r.model_tag, iid, repr(r.per_item[iid])])
