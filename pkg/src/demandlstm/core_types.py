"""Shared domain vocabulary: sales series, catalog metadata, calendar, forecasts."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

DEFAULT_EPOCH = dt.date(2018, 1, 1)

SEASONS = ("winter", "spring", "summer", "autumn")
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")

# month -> season index, northern hemisphere (Dec-Feb winter, ...)
_NORTH = {12: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 1, 6: 2, 7: 2, 8: 2, 9: 3, 10: 3, 11: 3}


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SalesSeries:
    """Daily sales history of one item.

    ``values`` at masked positions carry no meaning (they are stored as 0).
    """

    item_id: str
    start_date: dt.date
    values: np.ndarray
    missing_mask: np.ndarray = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if self.missing_mask is None:
            mask = np.zeros(vals.shape, dtype=bool)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool)
        object.__setattr__(self, "values", _frozen(vals, np.float64))
        object.__setattr__(self, "missing_mask", _frozen(mask, bool))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self) - 1)

    def replace(self, values=None, missing_mask=None, start_date=None) -> "SalesSeries":
        return SalesSeries(
            self.item_id,
            self.start_date if start_date is None else start_date,
            self.values if values is None else values,
            self.missing_mask if missing_mask is None else missing_mask,
        )

    def head(self, k: int) -> "SalesSeries":
        return self.replace(values=self.values[:k], missing_mask=self.missing_mask[:k])

    def tail(self, k: int) -> "SalesSeries":
        start = len(self) - k
        return self.replace(
            values=self.values[start:],
            missing_mask=self.missing_mask[start:],
            start_date=self.start_date + dt.timedelta(days=start),
        )


@dataclass(frozen=True)
class ItemMeta:
    item_id: str
    subcategory_id: str = "unknown"
    category_id: str = "unknown"
    department_id: str = "unknown"
    super_department_id: str = "unknown"
    sales_quantile: float = 0.0
    zero_sales_pct: float = 0.0

    @property
    def catalog_path(self) -> tuple:
        return (self.super_department_id, self.department_id, self.category_id, self.subcategory_id)


def season_of(date: dt.date, hemisphere: str = "north") -> int:
    """Season index into ``SEASONS`` from the month."""
    idx = _NORTH[date.month]
    if hemisphere == "south":
        idx = (idx + 2) % 4
    elif hemisphere != "north":
        raise ValueError(f"unknown hemisphere {hemisphere!r}")
    return idx


@dataclass(frozen=True)
class Calendar:
    """Holiday flags on a day-offset grid; season and weekday are derived.

    Day ``k`` of the calendar is ``epoch + k days``.
    """

    epoch: dt.date
    holidays: np.ndarray
    hemisphere: str = "north"

    def __post_init__(self):
        object.__setattr__(self, "holidays", _frozen(self.holidays, bool))

    @classmethod
    def empty(cls, epoch: dt.date, n_days: int, hemisphere: str = "north") -> "Calendar":
        return cls(epoch, np.zeros(n_days, dtype=bool), hemisphere)

    def __len__(self) -> int:
        return len(self.holidays)

    def offset(self, date: dt.date) -> int:
        return (date - self.epoch).days

    def covers(self, start: dt.date, n_days: int) -> bool:
        off = self.offset(start)
        return off >= 0 and off + n_days <= len(self)

    def lookup(self, date: dt.date) -> tuple:
        """``(holiday, season label, weekday label)`` for a date."""
        off = self.offset(date)
        if not 0 <= off < len(self):
            raise KeyError(f"{date} outside calendar range")
        return bool(self.holidays[off]), SEASONS[season_of(date, self.hemisphere)], WEEKDAYS[date.weekday()]

    def day_features(self, start: dt.date, n_days: int) -> np.ndarray:
        """One row per day: ``[holiday, season one-hot(4), weekday one-hot(7)]``."""
        if not self.covers(start, n_days):
            raise KeyError(f"calendar does not cover {start} + {n_days} days")
        off = self.offset(start)
        out = np.zeros((n_days, 12))
        out[:, 0] = self.holidays[off:off + n_days]
        for k in range(n_days):
            day = start + dt.timedelta(days=k)
            out[k, 1 + season_of(day, self.hemisphere)] = 1.0
            out[k, 5 + day.weekday()] = 1.0
        return out


CALENDAR_FEATURES = 12


@dataclass(frozen=True)
class ForecastResult:
    item_id: str
    origin_date: dt.date
    point_forecasts: np.ndarray
    model_tag: str

    def __post_init__(self):
        f = _frozen(self.point_forecasts, np.float64)
        if f.ndim != 1 or len(f) == 0:
            raise ValueError("point_forecasts must be a non-empty vector")
        if not np.all(np.isfinite(f)):
            raise ValueError(f"non-finite forecast for {self.item_id}")
        object.__setattr__(self, "point_forecasts", f)

    @property
    def horizon(self) -> int:
        return len(self.point_forecasts)


def validate_series(s: SalesSeries) -> List[str]:
    """List of invariant violations; empty when the series is admissible."""
    problems = []
    if len(s.values) < 1:
        problems.append("K ≥ 1 violated")
    if len(s.values) != len(s.missing_mask):
        problems.append("mask and values differ in length")
        return problems
    observed = s.values[~s.missing_mask]
    if np.any(~np.isfinite(observed)):
        problems.append("non-finite sale")
    if np.any(observed < 0):
        problems.append("negative sale")
    return problems


def catalog_is_consistent(metas: Sequence[ItemMeta]) -> List[str]:
    """Each item has one path, and each subcategory hangs under one category, etc."""
    problems = []
    seen: Dict[str, tuple] = {}
    parent: Dict[tuple, str] = {}
    for m in metas:
        if m.item_id in seen and seen[m.item_id] != m.catalog_path:
            problems.append(f"item {m.item_id} has two catalog paths")
        seen[m.item_id] = m.catalog_path
        path = m.catalog_path
        for level in range(1, 4):
            key = (level, path[level])
            if key in parent and parent[key] != path[level - 1]:
                problems.append(f"{path[level]} has two parents")
            parent[key] = path[level - 1]
    return problems
