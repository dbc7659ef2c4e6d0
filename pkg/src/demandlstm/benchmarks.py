"""Univariate baseline forecasters.

``holt``/``holt_winters`` stand in for full ETS model selection and ``ar``
for ARIMA; reports label them as substitutes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from ._accel import kernel
from .core_types import SalesSeries

log = logging.getLogger(__name__)

ALPHA_GRID = np.round(np.arange(1, 100) * 0.01, 2)
ETS_GRID = np.round(np.arange(1, 20) * 0.05, 2)

BENCHMARK_TAGS = ("naive", "snaive", "ewma", "ses", "holt", "holt_winters", "ar")
DISPLAY_NAMES = {
    "naive": "Naive",
    "snaive": "Naive Seasonal",
    "ewma": "EWMA",
    "ses": "SES",
    "holt": "ETS (non-seasonal)*",
    "holt_winters": "ETS (seasonal)*",
    "ar": "ARIMA (AR(p))*",
}


def _values(series) -> np.ndarray:
    if isinstance(series, SalesSeries):
        if series.missing_mask.any():
            raise ValueError(f"series {series.item_id} has missing values")
        return series.values
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError("series must be a non-empty vector")
    return x


def forecast_naive(series, M: int) -> np.ndarray:
    x = _values(series)
    return np.full(M, x[-1])


def forecast_snaive(series, M: int, period: int = 7) -> np.ndarray:
    x = _values(series)
    K = len(x)
    if K < period:
        raise ValueError(f"seasonal naive needs at least {period} observations, got {K}")
    return x[K - period + (np.arange(M) % period)].copy()


# ---------------------------------------------------------------------------
# smoothing recursions, vectorised over a parameter grid

@kernel
def ses_sse(x, alphas, first_scored):
    """One-step SSE of simple exponential smoothing for each alpha; also final levels."""
    G = alphas.shape[0]
    level = np.full(G, x[0])
    sse = np.zeros(G)
    for t in range(1, x.shape[0]):
        e = x[t] - level
        if t >= first_scored:
            sse += e * e
        level = level + alphas * e
    return sse, level


@kernel
def holt_sse(x, alphas, betas):
    """One-step SSE of additive-trend Holt smoothing for each (alpha, beta) pair."""
    G = alphas.shape[0]
    level = np.full(G, x[0])
    trend = np.full(G, x[1] - x[0])
    sse = np.zeros(G)
    for t in range(1, x.shape[0]):
        fc = level + trend
        e = x[t] - fc
        sse += e * e
        new_level = fc + alphas * e
        trend = betas * (new_level - level) + (1.0 - betas) * trend
        level = new_level
    return sse, level, trend


@kernel
def holt_winters_sse(x, alphas, betas, gammas, period, use_trend):
    """Additive Holt-Winters one-step SSE per parameter triple.

    Initial level/season come from the first period; the initial trend from
    the change in period means (0 when ``use_trend`` is false).
    """
    G = alphas.shape[0]
    m1 = np.mean(x[:period])
    t0 = 0.0
    if use_trend:
        t0 = (np.mean(x[period:2 * period]) - m1) / period
    level = np.full(G, m1 + t0 * (period - 1) / 2.0)
    trend = np.full(G, t0)
    season = np.empty((G, period))
    for j in range(period):
        season[:, j] = x[j] - (m1 + t0 * (j - (period - 1) / 2.0))
    sse = np.zeros(G)
    for t in range(period, x.shape[0]):
        j = t % period
        s = season[:, j].copy()
        fc = level + trend + s
        e = x[t] - fc
        sse += e * e
        new_level = alphas * (x[t] - s) + (1.0 - alphas) * (level + trend)
        if use_trend:
            trend = betas * (new_level - level) + (1.0 - betas) * trend
        season[:, j] = gammas * (x[t] - new_level) + (1.0 - gammas) * s
        level = new_level
    return sse, level, trend, season


def _argmin_first(v: np.ndarray) -> int:
    return int(np.flatnonzero(v == v.min())[0])


def fit_ewma(series, fit_last: Optional[int] = None) -> Tuple[float, float]:
    """Grid-fit alpha on the last ``fit_last`` one-step errors (all if ``None``).

    Returns ``(alpha, sse)``.
    """
    x = _values(series)
    if len(x) < 2:
        return 0.5, 0.0
    first = 1 if fit_last is None else max(1, len(x) - fit_last)
    sse, _ = ses_sse(x, ALPHA_GRID, first)
    k = _argmin_first(sse)
    return float(ALPHA_GRID[k]), float(sse[k])


def ewma_level(series, alpha: float) -> float:
    x = _values(series)
    _, level = ses_sse(x, np.array([alpha]), len(x))
    return float(level[0])


def forecast_ewma(series, M: int, alpha: Optional[float] = None, fit_last: int = 10) -> np.ndarray:
    """Flat forecast at the exponentially weighted level."""
    x = _values(series)
    if alpha is None:
        alpha, _ = fit_ewma(x, fit_last)
    elif not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return np.full(M, ewma_level(x, alpha))


def forecast_ses(series, M: int) -> np.ndarray:
    x = _values(series)
    alpha, _ = fit_ewma(x, None)
    return np.full(M, ewma_level(x, alpha))


@dataclass
class SmoothingFit:
    alpha: float
    beta: float
    gamma: float
    sse: float
    kind: str


def _grid(*axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return [np.ascontiguousarray(g.ravel()) for g in mesh]


def fit_holt(x) -> Tuple[SmoothingFit, float, float]:
    a, b = _grid(ETS_GRID, ETS_GRID)
    sse, level, trend = holt_sse(x, a, b)
    k = _argmin_first(sse)
    return SmoothingFit(float(a[k]), float(b[k]), 0.0, float(sse[k]), "holt"), float(level[k]), float(trend[k])


def fit_holt_winters(x, period: int = 7, use_trend: bool = True):
    a, b, g = _grid(ETS_GRID, ETS_GRID if use_trend else ETS_GRID[:1], ETS_GRID)
    sse, level, trend, season = holt_winters_sse(x, a, b, g, period, use_trend)
    k = _argmin_first(sse)
    fit = SmoothingFit(float(a[k]), float(b[k]) if use_trend else 0.0, float(g[k]), float(sse[k]), "holt_winters")
    return fit, float(level[k]), float(trend[k]), season[k].copy()


def forecast_ets(series, M: int, seasonal: bool = False, period: int = 7) -> np.ndarray:
    """Grid-fit additive Holt, or Holt-Winters with a weekly season when ``seasonal``."""
    x = _values(series)
    h = np.arange(1, M + 1)
    if seasonal:
        if len(x) < 2 * period:
            log.warning("series too short for seasonal smoothing (%d < %d); using SES", len(x), 2 * period)
            return forecast_ses(x, M)
        _, level, trend, season = fit_holt_winters(x, period)
        K = len(x)
        return level + h * trend + season[(K + h - 1) % period]
    if len(x) < 3:
        log.warning("series too short for Holt smoothing; using SES")
        return forecast_ses(x, M)
    _, level, trend = fit_holt(x)
    return level + h * trend


# ---------------------------------------------------------------------------
# autoregression

@dataclass
class ArFit:
    order: int
    coefs: np.ndarray
    mean: float
    sigma2: float
    aicc: float


def _ls(design: np.ndarray, y: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    gram = design.T @ design
    if design.shape[1] and np.linalg.matrix_rank(gram) < design.shape[1]:
        return np.linalg.solve(gram + ridge * np.eye(design.shape[1]), design.T @ y)
    return np.linalg.solve(gram, design.T @ y)


def fit_ar(series, p_max: int = 7) -> ArFit:
    """AR(p) on the mean-centred series, order chosen by AICc over 1..p_max.

    Every order is fitted on the same rows (from ``p_max`` on) so the criteria
    are comparable.
    """
    x = _values(series)
    K = len(x)
    if K < 3 * p_max:
        p_new = max(1, K // 3)
        log.warning("series of length %d too short for p_max=%d; using p_max=%d", K, p_max, p_new)
        p_max = p_new
    mu = float(x.mean())
    z = x - mu
    y = z[p_max:]
    n_eff = len(y)
    lags = np.column_stack([z[p_max - j:K - j] for j in range(1, p_max + 1)])
    best = None
    for p in range(1, p_max + 1):
        coefs = _ls(lags[:, :p], y)
        resid = y - lags[:, :p] @ coefs
        sigma2 = max(float(resid @ resid) / n_eff, 1e-300)
        k = p + 1
        denom = n_eff - k - 1
        aicc = n_eff * np.log(sigma2) + 2 * k + (2 * k * (k + 1) / denom if denom > 0 else np.inf)
        if best is None or aicc < best.aicc:
            best = ArFit(p, coefs, mu, sigma2, float(aicc))
    return best


def forecast_ar(series, M: int, p_max: int = 7) -> np.ndarray:
    x = _values(series)
    fit = fit_ar(x, p_max)
    hist = list(x[-fit.order:] - fit.mean)
    out = np.empty(M)
    for h in range(M):
        nxt = float(np.dot(fit.coefs, hist[::-1][:fit.order]))
        out[h] = nxt + fit.mean
        hist.append(nxt)
    return out


BENCHMARKS: Dict[str, Callable[[np.ndarray, int], np.ndarray]] = {
    "naive": forecast_naive,
    "snaive": forecast_snaive,
    "ewma": forecast_ewma,
    "ses": forecast_ses,
    "holt": lambda x, M: forecast_ets(x, M, seasonal=False),
    "holt_winters": lambda x, M: forecast_ets(x, M, seasonal=True),
    "ar": forecast_ar,
}


def run_benchmark(tag: str, series, M: int) -> np.ndarray:
    if tag not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {tag!r}")
    out = np.asarray(BENCHMARKS[tag](series, M), dtype=np.float64)
    if out.shape != (M,) or not np.all(np.isfinite(out)):
        raise FloatingPointError(f"benchmark {tag} produced an invalid forecast")
    return out
