"""Data-quality repair, imputation and product grouping."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, astuple, fields
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .core_types import ItemMeta, SalesSeries
from .ingestion import SeriesSet

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 10.0
DEFAULT_LOOKBACK = 183


@dataclass(frozen=True)
class GroupAssignment:
    """One label per item under a named strategy (``domain`` or ``cluster``)."""

    labels: Dict[str, object]
    strategy: str

    def __len__(self):
        return len(self.labels)

    def label_of(self, item_id: str):
        return self.labels[item_id]

    def groups(self) -> Dict[object, List[str]]:
        out: Dict[object, List[str]] = {}
        for iid, lab in self.labels.items():
            out.setdefault(lab, []).append(iid)
        return dict(sorted(out.items(), key=lambda kv: str(kv[0])))

    @property
    def label_set(self) -> list:
        return sorted(set(self.labels.values()), key=str)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["item_id", "strategy", "label"])
            for iid in sorted(self.labels):
                w.writerow([iid, self.strategy, self.labels[iid]])

    @classmethod
    def from_csv(cls, path) -> "GroupAssignment":
        labels, strategy = {}, None
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                strategy = row["strategy"]
                lab = row["label"]
                labels[row["item_id"]] = int(lab) if lab.lstrip("-").isdigit() else lab
        return cls(labels, strategy or "unknown")


def single_group(item_ids: Iterable[str], label="All") -> GroupAssignment:
    return GroupAssignment({i: label for i in item_ids}, "single")


# ---------------------------------------------------------------------------
# repair and imputation

def repair_fake_zeros(s: SalesSeries, gamma: float = DEFAULT_GAMMA,
                      lookback_days: int = DEFAULT_LOOKBACK) -> SalesSeries:
    """Mark zero sales as missing where the item's recent minimum is above ``gamma``.

    For a zero at day ``t`` the minimum is taken over the observed non-zero
    sales in days ``[t - lookback_days, t)``. Zeros with no non-zero history in
    that window are kept.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    vals, mask = s.values, s.missing_mask
    nonzero = (~mask) & (vals > 0)
    zeros = np.flatnonzero((~mask) & (vals == 0))
    if len(zeros) == 0 or not nonzero.any():
        return s
    masked = np.where(nonzero, vals, np.inf)
    new_mask = mask.copy()
    for t in zeros:
        lo = max(0, t - lookback_days)
        recent = masked[lo:t]
        if len(recent) and recent.min() > gamma and np.isfinite(recent.min()):
            new_mask[t] = True
    if not new_mask.any() or (new_mask == mask).all():
        return s
    return s.replace(missing_mask=new_mask)


def forward_fill(s: SalesSeries) -> SalesSeries:
    """Impute missing days with the last valid observation (leading gaps backfilled)."""
    mask = s.missing_mask
    if not mask.any():
        return s
    if mask.all():
        raise ValueError(f"series {s.item_id} has no observed values to fill from")
    idx = np.where(~mask, np.arange(len(mask)), -1)
    np.maximum.accumulate(idx, out=idx)
    first = np.flatnonzero(~mask)[0]
    idx[idx < 0] = first
    return s.replace(values=s.values[idx], missing_mask=np.zeros(len(mask), dtype=bool))


# ---------------------------------------------------------------------------
# domain grouping

def _rank_quantile(x: np.ndarray) -> np.ndarray:
    """Empirical quantile in [0, 1] from average ranks (ties share a quantile)."""
    if len(x) == 1:
        return np.array([0.5])
    return (rankdata(x, method="average") - 1.0) / (len(x) - 1.0)


def sales_statistics(series_set: SeriesSet) -> Tuple[np.ndarray, np.ndarray]:
    """Total observed sales and zero-sales share per item."""
    totals, zero_pct = [], []
    for s in series_set.series:
        obs = s.values[~s.missing_mask]
        totals.append(obs.sum())
        zero_pct.append(float(np.mean(obs == 0)) if len(obs) else 1.0)
    return np.asarray(totals), np.asarray(zero_pct)


def annotate_quantiles(series_set: SeriesSet) -> SeriesSet:
    """Copy of the set with ``sales_quantile``/``zero_sales_pct`` filled in on each meta."""
    totals, zero_pct = sales_statistics(series_set)
    q = _rank_quantile(totals)
    items = []
    for (s, m), qi, zi in zip(series_set.items, q, zero_pct):
        meta = ItemMeta(m.item_id, m.subcategory_id, m.category_id, m.department_id,
                        m.super_department_id, float(qi), float(zi))
        items.append((s, meta))
    return SeriesSet(tuple(items), series_set.calendar)


def domain_grouping(series_set: SeriesSet, low: float = 0.33, high: float = 0.67,
                    head_is_g1: bool = True) -> GroupAssignment:
    """Split items into G1 (head), G2 (tail) and G3 (the rest).

    G1 holds items whose sales quantile is strictly above ``high`` and whose
    zero-share quantile is strictly below ``low``; G2 is the mirror image.
    Items on a boundary land in G3. ``head_is_g1=False`` swaps the G1/G2 names.
    """
    if len(series_set) < 3:
        raise ValueError("domain grouping needs at least 3 items")
    totals, zero_pct = sales_statistics(series_set)
    sq, zq = _rank_quantile(totals), _rank_quantile(zero_pct)
    head = (sq > high) & (zq < low)
    tail = (sq < low) & (zq > high)
    g_head, g_tail = ("G1", "G2") if head_is_g1 else ("G2", "G1")
    labels = {}
    for iid, h, t in zip(series_set.item_ids, head, tail):
        labels[iid] = g_head if h else g_tail if t else "G3"
    return GroupAssignment(labels, "domain")


# ---------------------------------------------------------------------------
# time-series features

@dataclass(frozen=True)
class TsFeatureVector:
    sales_quantile: float
    zero_sales_percentage: float
    trend_strength: float
    spikiness: float
    linearity: float
    curvature: float
    acf1_residuals: float
    acf1_series: float
    spectral_entropy: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


def centered_moving_average(x: np.ndarray, window: int = 7) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically near the ends."""
    half = window // 2
    k = len(x)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    t = np.arange(k)
    h = np.minimum(np.minimum(t, k - 1 - t), half)
    return (csum[t + h + 1] - csum[t - h]) / (2 * h + 1)


def decompose(x: np.ndarray, period: int = 7) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Additive ``trend + seasonal + remainder`` split.

    The seasonal part is only estimated when at least two full periods exist.
    """
    x = np.asarray(x, dtype=np.float64)
    trend = centered_moving_average(x, period)
    detrended = x - trend
    seasonal = np.zeros_like(x)
    if len(x) >= 2 * period:
        phase = np.arange(len(x)) % period
        means = np.array([detrended[phase == j].mean() for j in range(period)])
        means -= means.mean()
        seasonal = means[phase]
    return trend, seasonal, x - trend - seasonal


def acf1(x: np.ndarray) -> float:
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom <= 1e-12 * max(1.0, np.dot(x, x)):
        return 0.0
    return float(np.dot(d[:-1], d[1:]) / denom)


def spectral_entropy(x: np.ndarray) -> float:
    """Shannon entropy of the normalised periodogram over ``log(#bins)``; 1 for flat input."""
    d = np.asarray(x, dtype=np.float64) - np.mean(x)
    power = np.abs(np.fft.rfft(d))[1:] ** 2
    total = power.sum()
    if len(power) < 2 or total <= 1e-12 * max(1.0, np.dot(x, x)):
        return 1.0
    p = power / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum() / np.log(len(power)))


def _leave_one_out_var(r: np.ndarray) -> np.ndarray:
    n = len(r)
    s1, s2 = r.sum(), np.dot(r, r)
    m = (s1 - r) / (n - 1)
    return ((s2 - r * r) - (n - 1) * m * m) / (n - 2)


def extract_features(s: SalesSeries, sales_quantile: float = 0.0) -> TsFeatureVector:
    """Feature vector used for clustering; ``sales_quantile`` comes from the whole set."""
    if s.missing_mask.any():
        raise ValueError("extract_features expects a gap-free series (run forward_fill first)")
    x = s.values
    if len(x) < 14:
        raise ValueError("extract_features needs at least 14 observations")
    zero_pct = float(np.mean(x == 0))
    trend, seasonal, r = decompose(x)
    deseason = trend + r
    var_d = deseason.var()
    scale = max(1.0, float(np.mean(x * x)))
    if var_d <= 1e-12 * scale:
        strength = 0.0
    else:
        strength = max(0.0, 1.0 - r.var() / var_d)
    spikiness = float(_leave_one_out_var(r).var())
    t = np.arange(len(x), dtype=np.float64)
    t = (t - t.mean()) / len(x)
    q, _ = np.linalg.qr(np.column_stack([np.ones_like(t), t, t * t]))
    # fix QR sign ambiguity so an increasing trend has positive linearity
    q *= np.sign(np.array([q[0, 0], q[-1, 1] - q[0, 1], q[0, 2]]))
    coefs = q.T @ trend
    return TsFeatureVector(
        sales_quantile=float(sales_quantile),
        zero_sales_percentage=zero_pct,
        trend_strength=float(strength),
        spikiness=spikiness,
        linearity=float(coefs[1]),
        curvature=float(coefs[2]),
        acf1_residuals=acf1(r),
        acf1_series=acf1(x),
        spectral_entropy=spectral_entropy(x),
    )


def feature_matrix(series_set: SeriesSet) -> np.ndarray:
    """Row per item; series with gaps are forward-filled first."""
    totals, _ = sales_statistics(series_set)
    q = _rank_quantile(totals)
    rows = [extract_features(forward_fill(s), qi).as_array() for s, qi in zip(series_set.series, q)]
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# K-means with silhouette selection

def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = _sq_dists(x, np.array(centers))[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx:idx + 1])[:, 0])
    return np.array(centers)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    objective_trace: List[float]


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a k-means++ start; stops once assignments are stable."""
    centers = _kmeanspp(x, k, rng)
    labels = np.full(len(x), -1)
    trace = []
    for _ in range(max_iter):
        d2 = _sq_dists(x, centers)
        new = d2.argmin(1)
        trace.append(float(d2[np.arange(len(x)), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centers[j] = members.mean(0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                far = d2[np.arange(len(x)), labels].argmax()
                centers[j] = x[far]
    d2 = _sq_dists(x, centers)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return KMeansResult(labels, centers, inertia, trace)


def silhouette_samples(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point silhouette coefficients (0 for singleton clusters)."""
    d = np.sqrt(_sq_dists(x, x))
    np.fill_diagonal(d, 0.0)
    uniq = np.unique(labels)
    n = len(x)
    if len(uniq) < 2:
        return np.zeros(n)
    a = np.zeros(n)
    b = np.full(n, np.inf)
    sizes = {u: int((labels == u).sum()) for u in uniq}
    for u in uniq:
        in_u = labels == u
        sums = d[:, in_u].sum(1)
        own = labels == u
        if sizes[u] > 1:
            a[own] = sums[own] / (sizes[u] - 1)
        b[~own] = np.minimum(b[~own], sums[~own] / sizes[u])
    s = np.zeros(n)
    denom = np.maximum(a, b)
    ok = np.array([sizes[lab] > 1 for lab in labels]) & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    return s


def silhouette_score(x: np.ndarray, labels: np.ndarray) -> float:
    return float(silhouette_samples(x, labels).mean())


def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns become 0."""
    mu = x.mean(0)
    sd = x.std(0)
    out = np.zeros_like(x)
    ok = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
    out[:, ok] = (x[:, ok] - mu[ok]) / sd[ok]
    return out


@dataclass
class ClusterSelection:
    assignment: GroupAssignment
    k: int
    silhouettes: Dict[int, float]


def cluster_features(x: np.ndarray, item_ids: Sequence[str], k_range: Iterable[int],
                     rng_seed: int = 0, restarts: int = 25, max_iter: int = 300) -> ClusterSelection:
    """K-means over standardized rows, choosing k by mean silhouette.

    Rows are processed in item-id order so the result does not depend on the
    order items are supplied in.
    """
    k_values = sorted(set(int(k) for k in k_range))
    if not k_values or k_values[0] < 2:
        raise ValueError("k_range must contain values >= 2")
    n = len(item_ids)
    if n < 2 * k_values[-1]:
        raise ValueError(f"need at least {2 * k_values[-1]} items for k up to {k_values[-1]}, got {n}")
    order = np.argsort(np.asarray(item_ids, dtype=object).astype(str), kind="stable")
    ids_sorted = [item_ids[i] for i in order]
    z = standardize(np.asarray(x, dtype=np.float64)[order])
    if not np.any(z):
        log.warning("feature matrix has no variance; assigning every item to one cluster")
        return ClusterSelection(GroupAssignment({i: 0 for i in ids_sorted}, "cluster"), 1, {})
    n_distinct = len(np.unique(z, axis=0))
    best = None
    scores = {}
    for k in k_values:
        if k > n_distinct:
            continue
        rng = np.random.default_rng([rng_seed, k])
        runs = [kmeans(z, k, rng, max_iter) for _ in range(restarts)]
        run = min(runs, key=lambda r: r.inertia)
        scores[k] = silhouette_score(z, run.labels)
        if best is None or scores[k] > scores[best[0]]:
            best = (k, run.labels)
    if best is None:
        log.warning("too few distinct feature rows for k_range; single cluster")
        return ClusterSelection(GroupAssignment({i: 0 for i in ids_sorted}, "cluster"), 1, scores)
    k, labels = best
    # relabel clusters by first appearance so labels are canonical
    remap, nxt = {}, 0
    for lab in labels:
        if lab not in remap:
            remap[lab] = nxt
            nxt += 1
    assignment = {iid: remap[lab] for iid, lab in zip(ids_sorted, labels)}
    return ClusterSelection(GroupAssignment(assignment, "cluster"), k, scores)


def cluster_items(series_set: SeriesSet, k_range: Iterable[int] = range(2, 6),
                  rng_seed: int = 0, restarts: int = 25) -> GroupAssignment:
    """Group items by K-means on their time-series features."""
    x = feature_matrix(series_set)
    return cluster_features(x, series_set.item_ids, k_range, rng_seed, restarts).assignment


def preprocess_set(series_set: SeriesSet, gamma: float = DEFAULT_GAMMA,
                   lookback_days: int = DEFAULT_LOOKBACK) -> SeriesSet:
    """Fake-zero repair followed by forward fill, item by item."""
    return series_set.map_series(lambda s: forward_fill(repair_fake_zeros(s, gamma, lookback_days)))
