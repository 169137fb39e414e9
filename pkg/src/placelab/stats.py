"""Timeseries statistics and partition-agreement metrics.

granger_test compares a restricted autoregression of y against an
unrestricted one that adds lags of x, with the lag order picked by AIC on
the restricted model (so lag selection stays independent of x under the
null). detect_anomalies scores points against a rolling median/MAD.
ars/vi are the pair-counting adjusted Rand index and the entropy-based
variation of information over two partitions of the same items.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sps

from .partition import NULL_LABEL, Partition


@dataclass
class TimeSeries:
    """Equally spaced buckets of counts; missing buckets must be zero-filled."""

    start: int
    step: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def load_csv(cls, path: str | Path) -> "TimeSeries":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            for row in reader:
                if row:
                    rows.append((int(float(row[0])), float(row[1])))
        if len(rows) < 2:
            raise ValueError(f"{path}: need at least 2 buckets")
        rows.sort()
        starts = np.array([r[0] for r in rows])
        steps = np.unique(np.diff(starts))
        if len(steps) != 1:
            raise ValueError(f"{path}: buckets are not equally spaced (fill zeros)")
        return cls(start=rows[0][0], step=int(steps[0]),
                   values=np.array([r[1] for r in rows]))


def _lag_matrix(series: np.ndarray, lags: int) -> np.ndarray:
    """Columns [lag1 .. lagL] for rows lags..T-1."""
    t = len(series)
    return np.column_stack([series[lags - k : t - k] for k in range(1, lags + 1)])


def _ols_rss(X: np.ndarray, y: np.ndarray) -> float:
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("singular regression (collinear lags)")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return float(resid @ resid)


def granger_test(
    x: TimeSeries | np.ndarray,
    y: TimeSeries | np.ndarray,
    max_lag: int = 24,
    difference: bool = False,
) -> dict:
    """F-test of whether lags of x improve the autoregression of y.

    Returns {"p_value", "f_stat", "chosen_lag", "df_num", "df_denom"}.
    """
    xv = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    yv = y.values if isinstance(y, TimeSeries) else np.asarray(y, dtype=np.float64)
    if len(xv) != len(yv):
        raise ValueError("series must have equal length")
    if difference:
        xv, yv = np.diff(xv), np.diff(yv)
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if len(yv) < 3 * max_lag + 2:
        raise ValueError(
            f"series too short: need >= {3 * max_lag + 2} points for max_lag={max_lag}"
        )

    # Lag order by AIC on the restricted model y ~ const + own lags.
    best_lag, best_aic = None, np.inf
    for lag in range(1, max_lag + 1):
        yy = yv[lag:]
        X = np.column_stack([np.ones(len(yy)), _lag_matrix(yv, lag)])
        rss = _ols_rss(X, yy)
        t_eff = len(yy)
        if rss <= 0:
            rss = np.finfo(float).tiny
        aic = t_eff * math.log(rss / t_eff) + 2 * (lag + 1)
        if aic < best_aic:
            best_aic, best_lag = aic, lag

    lag = best_lag
    yy = yv[lag:]
    Xr = np.column_stack([np.ones(len(yy)), _lag_matrix(yv, lag)])
    Xu = np.column_stack([Xr, _lag_matrix(xv, lag)])
    rss_r = _ols_rss(Xr, yy)
    rss_u = _ols_rss(Xu, yy)
    df_num = lag
    df_denom = len(yy) - 2 * lag - 1
    if df_denom <= 0:
        raise ValueError("series too short for the chosen lag")
    f_stat = ((rss_r - rss_u) / df_num) / (rss_u / df_denom)
    f_stat = max(f_stat, 0.0)
    p_value = float(sps.f.sf(f_stat, df_num, df_denom))
    return {
        "p_value": p_value,
        "f_stat": float(f_stat),
        "chosen_lag": int(lag),
        "df_num": df_num,
        "df_denom": df_denom,
    }


def detect_anomalies(
    x: TimeSeries | np.ndarray, window: int = 24, threshold: float = 3.5
) -> np.ndarray:
    """Indices where |x_t - rolling median| / (1.4826 * rolling MAD) > threshold.

    The window is centered and clipped at the series edges. A zero MAD means
    any deviation from the window median is anomalous.
    """
    xv = x.values if isinstance(x, TimeSeries) else np.asarray(x, dtype=np.float64)
    n = len(xv)
    if window < 5:
        raise ValueError("window must be >= 5")
    if window > n:
        raise ValueError("window longer than series")
    half = window // 2
    flagged = []
    for t in range(n):
        lo = max(0, t - half)
        hi = min(n, lo + window)
        lo = max(0, hi - window)
        seg = xv[lo:hi]
        med = float(np.median(seg))
        mad = float(np.median(np.abs(seg - med)))
        dev = abs(xv[t] - med)
        if mad == 0.0:
            if dev > 0.0:
                flagged.append(t)
            continue
        if dev / (1.4826 * mad) > threshold:
            flagged.append(t)
    return np.asarray(flagged, dtype=np.int64)


def _align_masked(a: Partition, b: Partition) -> tuple[np.ndarray, np.ndarray]:
    """Align on item id, then drop items null-labeled on either side."""
    common, ia, ib = np.intersect1d(a.items, b.items, return_indices=True)
    if len(common) != len(a.items) or len(common) != len(b.items):
        raise ValueError("partitions must cover the same item set")
    la, lb = a.labels[ia], b.labels[ib]
    keep = (la != NULL_LABEL) & (lb != NULL_LABEL)
    return la[keep], lb[keep]


def _contingency(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    _, ia = np.unique(la, return_inverse=True)
    _, ib = np.unique(lb, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def ars(a: Partition, b: Partition) -> float:
    """Adjusted Rand index via pair counting (null-labeled items masked)."""
    la, lb = _align_masked(a, b)
    if len(la) == 0:
        raise ValueError("no jointly labeled items")
    table = _contingency(la, lb)
    n = table.sum()

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(n))
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def vi(a: Partition, b: Partition, base: float = math.e) -> float:
    """Variation of information H(X) + H(Y) - 2 I(X, Y) (natural log default)."""
    la, lb = _align_masked(a, b)
    if len(la) == 0:
        raise ValueError("no jointly labeled items")
    table = _contingency(la, lb).astype(np.float64)
    n = table.sum()
    pij = table / n
    pa = pij.sum(axis=1)
    pb = pij.sum(axis=0)

    def ent(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    hx, hy = ent(pa), ent(pb)
    nz = pij > 0
    outer = pa[:, None] * pb[None, :]
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    value = hx + hy - 2.0 * mi
    value = max(value, 0.0)
    if base != math.e:
        value /= math.log(base)
    return value
