"""Flat-file loading and synthetic hierarchical sales data."""
from __future__ import annotations

import csv
import datetime as dt
import logging
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core_types import Calendar, ItemMeta, SalesSeries, validate_series

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SeriesSet:
    """Aligned collection of item series sharing one daily grid."""

    items: Tuple[Tuple[SalesSeries, ItemMeta], ...]
    calendar: Calendar

    def __post_init__(self):
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise ValueError("a SeriesSet needs at least one item")
        s0 = items[0][0]
        ids = set()
        for s, m in items:
            if s.item_id != m.item_id:
                raise ValueError(f"series/meta id mismatch: {s.item_id} vs {m.item_id}")
            if s.start_date != s0.start_date or len(s) != len(s0):
                raise ValueError(f"item {s.item_id} is not on the common date grid")
            if s.item_id in ids:
                raise ValueError(f"duplicate item {s.item_id}")
            ids.add(s.item_id)
            bad = validate_series(s)
            if bad:
                raise ValueError(f"item {s.item_id}: {', '.join(bad)}")

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def series(self) -> List[SalesSeries]:
        return [s for s, _ in self.items]

    @property
    def metas(self) -> List[ItemMeta]:
        return [m for _, m in self.items]

    @property
    def item_ids(self) -> List[str]:
        return [s.item_id for s, _ in self.items]

    @property
    def start_date(self) -> dt.date:
        return self.items[0][0].start_date

    @property
    def n_days(self) -> int:
        return len(self.items[0][0])

    def values(self) -> np.ndarray:
        return np.stack([s.values for s in self.series])

    def masks(self) -> np.ndarray:
        return np.stack([s.missing_mask for s in self.series])

    def subset(self, item_ids: Iterable[str]) -> "SeriesSet":
        keep = set(item_ids)
        return SeriesSet(tuple(p for p in self.items if p[0].item_id in keep), self.calendar)

    def map_series(self, fn) -> "SeriesSet":
        return SeriesSet(tuple((fn(s), m) for s, m in self.items), self.calendar)

    def truncate(self, n_days: int) -> "SeriesSet":
        """Keep the first ``n_days`` of every series."""
        return self.map_series(lambda s: s.head(n_days))

    def subcategories(self) -> List[str]:
        return sorted({m.subcategory_id for m in self.metas})


def merge_series_sets(*sets: SeriesSet) -> SeriesSet:
    items = []
    for s in sets:
        items.extend(s.items)
    return SeriesSet(tuple(items), sets[0].calendar)


# ---------------------------------------------------------------------------
# CSV

def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise DataFormatError(f"{where}: bad date {text!r}") from None


def _read_rows(path, expected: Sequence[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:len(expected)]] != list(expected):
            raise DataFormatError(f"{path}:1: expected header {','.join(expected)}, got {header}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise DataFormatError(
                    f"{path}:{reader.line_num}: expected {len(expected)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def load_calendar(path, start: Optional[dt.date] = None, n_days: Optional[int] = None,
                  hemisphere: str = "north") -> Calendar:
    flags: Dict[dt.date, bool] = {}
    for line, (d, h) in _read_rows(path, ("date", "holiday")):
        if h not in ("0", "1"):
            raise DataFormatError(f"{path}:{line}: holiday must be 0 or 1, got {h!r}")
        flags[_parse_date(d, f"{path}:{line}")] = h == "1"
    if start is None:
        start = min(flags)
    if n_days is None:
        n_days = (max(flags) - start).days + 1
    hol = np.zeros(n_days, dtype=bool)
    uncovered = 0
    for k in range(n_days):
        day = start + dt.timedelta(days=k)
        if day in flags:
            hol[k] = flags[day]
        else:
            uncovered += 1
    if uncovered:
        log.warning("calendar %s lacks %d dates of the sales grid; treated as non-holidays", path, uncovered)
    return Calendar(start, hol, hemisphere)


def load_metadata(path) -> Dict[str, ItemMeta]:
    metas = {}
    cols = ("item_id", "subcategory", "category", "department", "super_department")
    for line, (iid, sc, cat, dep, sup) in _read_rows(path, cols):
        if iid in metas:
            raise DataFormatError(f"{path}:{line}: duplicate metadata for item {iid}")
        metas[iid] = ItemMeta(iid, sc, cat, dep, sup)
    return metas


def load_csv(path, calendar_path=None, meta_path=None, hemisphere: str = "north") -> SeriesSet:
    """Read ``item_id,date,sales`` rows into an aligned :class:`SeriesSet`.

    The date grid spans the earliest to the latest date in the file; dates an
    item has no row for are marked missing. An empty ``sales`` field is also
    read as missing.
    """
    raw: Dict[str, Dict[dt.date, float]] = {}
    missing_rows: Dict[str, set] = {}
    for line, (iid, d, v) in _read_rows(path, ("item_id", "date", "sales")):
        where = f"{path}:{line}"
        day = _parse_date(d, where)
        rows = raw.setdefault(iid, {})
        gaps = missing_rows.setdefault(iid, set())
        if day in rows or day in gaps:
            raise DataFormatError(f"{where}: duplicate row for item {iid} on {day}")
        if v == "":
            gaps.add(day)
            continue
        try:
            val = float(v)
        except ValueError:
            raise DataFormatError(f"{where}: sales value {v!r} is not a number") from None
        if not np.isfinite(val) or val < 0:
            raise DataFormatError(f"{where}: sales must be finite and non-negative, got {v!r}")
        rows[day] = val
    if not raw:
        raise DataFormatError(f"{path}: no data rows")

    all_days = [d for rows in raw.values() for d in rows] + [d for g in missing_rows.values() for d in g]
    start, end = min(all_days), max(all_days)
    n_days = (end - start).days + 1
    metas = load_metadata(meta_path) if meta_path is not None else {}
    if calendar_path is not None:
        calendar = load_calendar(calendar_path, start, n_days, hemisphere)
    else:
        calendar = Calendar.empty(start, n_days, hemisphere)

    items = []
    for iid in sorted(raw):
        vals = np.zeros(n_days)
        mask = np.ones(n_days, dtype=bool)
        for day, v in raw[iid].items():
            k = (day - start).days
            vals[k] = v
            mask[k] = False
        meta = metas.get(iid)
        if meta is None:
            if metas:
                log.warning("no metadata for item %s", iid)
            meta = ItemMeta(iid)
        items.append((SalesSeries(iid, start, vals, mask), meta))
    return SeriesSet(tuple(items), calendar)


def write_csv(series_set: SeriesSet, directory, prefix: str = "") -> Dict[str, Path]:
    """Write sales, metadata and calendar CSVs; missing entries are omitted rows."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "sales": out / f"{prefix}sales.csv",
        "meta": out / f"{prefix}meta.csv",
        "calendar": out / f"{prefix}calendar.csv",
    }
    with open(paths["sales"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "date", "sales"])
        for s in series_set.series:
            for k in range(len(s)):
                if s.missing_mask[k]:
                    continue
                day = s.start_date + dt.timedelta(days=k)
                w.writerow([s.item_id, day.isoformat(), repr(float(s.values[k]))])
    with open(paths["meta"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "subcategory", "category", "department", "super_department"])
        for m in series_set.metas:
            w.writerow([m.item_id, m.subcategory_id, m.category_id, m.department_id, m.super_department_id])
    cal = series_set.calendar
    with open(paths["calendar"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "holiday"])
        for k in range(len(cal)):
            w.writerow([(cal.epoch + dt.timedelta(days=k)).isoformat(), int(cal.holidays[k])])
    return paths


# ---------------------------------------------------------------------------
# synthetic data

@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 200
    n_days: int = 190
    n_subcategories: int = 5
    weekly_seasonality_amplitude: float = 0.5
    shared_pattern_strength: float = 0.8
    zero_inflation_probability: float = 0.2
    noise_std: float = 0.2
    rng_seed: int = 0
    base_level_range: Tuple[float, float] = (2.0, 200.0)
    start_date: dt.date = dt.date(2018, 1, 1)
    item_prefix: str = "item"
    input_window: int = 13
    horizon: int = 10

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be positive")
        if self.n_subcategories < 1:
            raise ValueError("n_subcategories must be positive")
        if self.n_days <= self.input_window + 2 * self.horizon:
            raise ValueError(
                f"n_days={self.n_days} leaves no training patch for "
                f"input_window={self.input_window}, horizon={self.horizon}")
        for name in ("shared_pattern_strength", "zero_inflation_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_std < 0 or self.weekly_seasonality_amplitude < 0:
            raise ValueError("noise_std and amplitude must be non-negative")
        lo, hi = self.base_level_range
        if not 0 < lo <= hi:
            raise ValueError("base_level_range must satisfy 0 < lo <= hi")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "start_date" in d and isinstance(d["start_date"], str):
            d["start_date"] = dt.date.fromisoformat(d["start_date"])
        if "base_level_range" in d:
            d["base_level_range"] = tuple(d["base_level_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_date"] = self.start_date.isoformat()
        d["base_level_range"] = list(self.base_level_range)
        return d


def _nth_weekday(year, month, weekday, n):
    first = dt.date(year, month, 1)
    shift = (weekday - first.weekday()) % 7
    return first + dt.timedelta(days=shift + 7 * (n - 1))


def _last_weekday(year, month, weekday):
    nxt = dt.date(year + (month == 12), month % 12 + 1, 1)
    last = nxt - dt.timedelta(days=1)
    return last - dt.timedelta(days=(last.weekday() - weekday) % 7)


def holiday_calendar(start: dt.date, n_days: int, hemisphere: str = "north") -> Calendar:
    """Calendar flagging a handful of fixed US retail holidays."""
    end = start + dt.timedelta(days=n_days - 1)
    days = set()
    for y in range(start.year, end.year + 1):
        days.update({
            dt.date(y, 1, 1), dt.date(y, 7, 4), dt.date(y, 12, 25),
            _last_weekday(y, 5, 0),          # Memorial Day
            _nth_weekday(y, 9, 0, 1),        # Labor Day
            _nth_weekday(y, 11, 3, 4),       # Thanksgiving
            _nth_weekday(y, 11, 3, 4) + dt.timedelta(days=1),
        })
    hol = np.array([(start + dt.timedelta(days=k)) in days for k in range(n_days)])
    return Calendar(start, hol, hemisphere)


def _weekly_pattern(rng: np.random.Generator) -> np.ndarray:
    p = rng.standard_normal(7)
    p -= p.mean()
    return p / np.max(np.abs(p))


def _item_seed(spec: SyntheticSpec, item_id: str) -> List[int]:
    return [spec.rng_seed, zlib.crc32(item_id.encode())]


def synthetic_signals(spec: SyntheticSpec) -> Tuple[List[str], List[int], np.ndarray]:
    """Noise-free demand level per item and day, before clipping and rounding.

    Returns ``(item_ids, subcategory index per item, levels[n_items, n_days])``.
    """
    sub_patterns = [_weekly_pattern(np.random.default_rng([spec.rng_seed, 10_000, s]))
                    for s in range(spec.n_subcategories)]
    weekday0 = spec.start_date.weekday()
    dow = (weekday0 + np.arange(spec.n_days)) % 7
    lo, hi = spec.base_level_range
    rho = spec.shared_pattern_strength
    ids, subs, levels = [], [], np.empty((spec.n_items, spec.n_days))
    for i in range(spec.n_items):
        iid = f"{spec.item_prefix}{i:05d}"
        rng = np.random.default_rng(_item_seed(spec, iid))
        sub = int(rng.integers(spec.n_subcategories))
        base = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        own = _weekly_pattern(rng)
        pattern = (1.0 - rho) * own + rho * sub_patterns[sub]
        levels[i] = base * (1.0 + spec.weekly_seasonality_amplitude * pattern[dow])
        ids.append(iid)
        subs.append(sub)
    return ids, subs, levels


def generate_synthetic(spec: SyntheticSpec) -> SeriesSet:
    """Deterministic bursty, correlated, zero-inflated daily sales.

    ``sales = round(max(0, level + noise))`` where ``level`` mixes an item's own
    weekly pattern with its subcategory's in proportion to
    ``shared_pattern_strength``; the Gaussian noise is scaled by the item's base
    level; a ``zero_inflation_probability`` share of days is then forced to 0.
    """
    ids, subs, levels = synthetic_signals(spec)
    calendar = holiday_calendar(spec.start_date, spec.n_days)
    items = []
    for iid, sub, level in zip(ids, subs, levels):
        rng = np.random.default_rng(_item_seed(spec, iid) + [1])
        base = level.mean()
        noise = rng.standard_normal(spec.n_days) * spec.noise_std * base
        sales = np.round(np.maximum(0.0, level + noise))
        zero = rng.random(spec.n_days) < spec.zero_inflation_probability
        sales[zero] = 0.0
        meta = ItemMeta(
            iid,
            subcategory_id=f"sc{sub:02d}",
            category_id="cat00",
            department_id="dep00",
            super_department_id="sup00",
        )
        items.append((SalesSeries(iid, spec.start_date, sales), meta))
    return SeriesSet(tuple(items), calendar)
