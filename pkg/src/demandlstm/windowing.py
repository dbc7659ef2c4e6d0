"""Mean-scale normalisation, moving-window patches and exogenous feature blocks."""
from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .core_types import CALENDAR_FEATURES, Calendar, ItemMeta, SalesSeries

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaledSeries:
    item_id: str
    start_date: dt.date
    scaled_values: np.ndarray
    scale_factor: float

    def __len__(self):
        return len(self.scaled_values)


def mean_scale(s: SalesSeries) -> ScaledSeries:
    """Divide sales by ``1 + mean(sales)``."""
    if s.missing_mask.any():
        raise ValueError(f"series {s.item_id} still has missing values")
    factor = 1.0 + float(np.mean(s.values))
    return ScaledSeries(s.item_id, s.start_date, s.values / factor, factor)


def default_input_window(m: int) -> int:
    if m < 1:
        raise ValueError("output window must be >= 1")
    return math.ceil(1.25 * m)


def postprocess_forecast(raw, local_mean, scale_factor: float, clamp: bool = False,
                         round_to: Optional[int] = None) -> np.ndarray:
    """Undo window normalisation then mean scaling: ``(raw + local_mean) * scale_factor``.

    ``raw`` may be a vector or a batch of rows (with one ``local_mean`` and
    ``scale_factor`` per row).
    """
    raw = np.asarray(raw, dtype=np.float64)
    lm = np.asarray(local_mean, dtype=np.float64)
    sf = np.asarray(scale_factor, dtype=np.float64)
    if raw.ndim == 2:
        lm = lm.reshape(-1, 1)
        sf = sf.reshape(-1, 1)
    out = (raw + lm) * sf
    if clamp:
        out = np.maximum(out, 0.0)
    if round_to is not None:
        out = np.round(out, round_to)
    return out


@dataclass(frozen=True)
class WindowPair:
    item_id: str
    input_sales: np.ndarray
    output_targets: np.ndarray
    local_mean: float
    feature_block: np.ndarray
    origin_index: int


@dataclass
class FeatureLayout:
    """Column layout of the per-step exogenous block.

    ``[holiday, season(4), weekday(7), subcategory one-hot..., extra one-hot...]``
    """

    subcategories: List[str]
    extra_labels: List[str] = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return CALENDAR_FEATURES + len(self.subcategories) + len(self.extra_labels)

    def static_row(self, meta: ItemMeta, extra_label=None) -> np.ndarray:
        row = np.zeros(len(self.subcategories) + len(self.extra_labels))
        if meta.subcategory_id in self.subcategories:
            row[self.subcategories.index(meta.subcategory_id)] = 1.0
        if self.extra_labels:
            if extra_label is None:
                raise ValueError(f"item {meta.item_id} needs an extra feature label")
            row[len(self.subcategories) + self.extra_labels.index(str(extra_label))] = 1.0
        return row

    def to_dict(self) -> dict:
        return {"subcategories": list(self.subcategories), "extra_labels": list(self.extra_labels)}


@dataclass
class ItemWindows:
    """All stride-1 windows of one item (a training-set fragment).

    Window ``o`` reads input days ``[o, o+n)`` and targets ``[o+n, o+n+m)``.
    Origins ``0 .. n_train-1`` train, origin ``n_train`` validates, and the
    last input-only origin ``len(series)-n`` feeds the forecast beyond the end.
    """

    item_id: str
    scale_factor: float
    inputs: np.ndarray        # (K-n+1, n), local mean removed
    local_means: np.ndarray   # (K-n+1,)
    targets: np.ndarray       # (K-n-m+1, m), local mean removed
    features: np.ndarray      # (K-n+1, n, P)
    n_train: int

    @property
    def n(self) -> int:
        return self.inputs.shape[1]

    @property
    def m(self) -> int:
        return self.targets.shape[1]

    @property
    def validation_origin(self) -> int:
        return self.n_train

    @property
    def forecast_origin(self) -> int:
        return len(self.inputs) - 1

    def step_inputs(self) -> np.ndarray:
        """Flattened per-step LSTM input ``[sales(n), features(n*P)]`` for every origin."""
        return np.concatenate([self.inputs, self.features.reshape(len(self.inputs), -1)], axis=1)

    def pair(self, origin: int) -> WindowPair:
        return WindowPair(self.item_id, self.inputs[origin], self.targets[origin],
                          float(self.local_means[origin]), self.features[origin], origin)


def make_windows(s: ScaledSeries, meta: ItemMeta, cal: Calendar, n: int, m: int,
                 layout: Optional[FeatureLayout] = None, extra_label=None) -> Optional[ItemWindows]:
    """Moving-window patches of one scaled series, or ``None`` if it is too short."""
    k = len(s)
    if k < n + m + 1:
        log.warning("item %s: %d days < n+m+1=%d, excluded from windowing", s.item_id, k, n + m + 1)
        return None
    if layout is None:
        layout = FeatureLayout([meta.subcategory_id])
    x = s.scaled_values
    n_in = k - n + 1
    idx = np.arange(n_in)[:, None] + np.arange(n)[None, :]
    raw_in = x[idx]
    lm = raw_in.mean(axis=1)
    n_out = k - n - m + 1
    tidx = np.arange(n_out)[:, None] + n + np.arange(m)[None, :]
    targets = x[tidx] - lm[:n_out, None]
    days = cal.day_features(s.start_date, k)
    static = layout.static_row(meta, extra_label)
    per_day = np.concatenate([days, np.broadcast_to(static, (k, len(static)))], axis=1)
    feats = per_day[idx]
    return ItemWindows(s.item_id, s.scale_factor, raw_in - lm[:, None], lm, targets, feats, k - n - m)


@dataclass
class TrainingSet:
    items: List[ItemWindows]
    layout: FeatureLayout
    n: int
    m: int
    excluded: List[str] = field(default_factory=list)

    @property
    def feature_dimension(self) -> int:
        return self.layout.dimension

    @property
    def step_dimension(self) -> int:
        return self.n * (1 + self.feature_dimension)

    def __len__(self):
        return sum(it.n_train for it in self.items)

    def train_pairs(self) -> Iterator[WindowPair]:
        for it in self.items:
            for o in range(it.n_train):
                yield it.pair(o)

    def validation_pairs(self) -> List[WindowPair]:
        return [it.pair(it.validation_origin) for it in self.items]

    def by_item(self) -> Dict[str, ItemWindows]:
        return {it.item_id: it for it in self.items}

    def subset(self, item_ids) -> "TrainingSet":
        keep = set(item_ids)
        return TrainingSet([it for it in self.items if it.item_id in keep], self.layout, self.n, self.m)


def build_training_set(scaled: Sequence[ScaledSeries], metas: Sequence[ItemMeta], cal: Calendar,
                       n: int, m: int, layout: Optional[FeatureLayout] = None,
                       extra_labels: Optional[Dict[str, object]] = None) -> TrainingSet:
    """Windows for every item, merged in item order."""
    if layout is None:
        layout = FeatureLayout(sorted({mt.subcategory_id for mt in metas}))
    items, excluded = [], []
    for s, meta in zip(scaled, metas):
        extra = None if extra_labels is None else extra_labels[s.item_id]
        w = make_windows(s, meta, cal, n, m, layout, extra)
        if w is None:
            excluded.append(s.item_id)
        else:
            items.append(w)
    return TrainingSet(items, layout, n, m, excluded)


def dump_training_set(ts: TrainingSet, path) -> None:
    """CSV dump of training and validation pairs for debugging."""
    n, m, p = ts.n, ts.m, ts.feature_dimension
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", "origin", "split", "local_mean"]
                   + [f"in{j}" for j in range(n)] + [f"out{j}" for j in range(m)]
                   + [f"f{j}_{q}" for j in range(n) for q in range(p)])
        for it in ts.items:
            for o in range(it.n_train + 1):
                pr = it.pair(o)
                split = "train" if o < it.n_train else "validation"
                w.writerow([pr.item_id, o, split, repr(pr.local_mean)]
                           + [repr(float(v)) for v in pr.input_sales]
                           + [repr(float(v)) for v in pr.output_targets]
                           + [repr(float(v)) for v in pr.feature_block.ravel()])
