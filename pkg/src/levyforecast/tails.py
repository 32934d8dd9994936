"""Heavy-tail diagnostics: Hill tail index, kurtosis, Gaussian KS test, regime buckets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

MIN_WINDOW = 50
DEFAULT_HILL_THRESHOLDS = (1.6, 1.2)
BUCKETS = ("low", "medium", "high")


class TailError(ValueError):
    pass


def default_k(n: int) -> int:
    return int(math.ceil(n ** 0.6))


def hill_estimate(series, k: int | None = None, two_sided: bool = True) -> float:
    """Hill estimator ``1 / mean(ln(X_(i) / X_(k+1)))`` over the top ``k`` order statistics.

    Uses ``|x|`` when ``two_sided``, otherwise only the positive values.
    """
    x = np.asarray(series, dtype=float)
    x = np.abs(x) if two_sided else x[x > 0]
    x = x[x > 0]
    if k is None:
        k = default_k(x.size)
    if k < 1:
        raise TailError("k must be at least 1")
    if x.size < k + 1:
        raise TailError(f"insufficient data: need {k + 1} positive magnitudes, have {x.size}")
    top = -np.partition(-x, k)[: k + 1]
    top.sort()
    top = top[::-1]
    spacing = np.mean(np.log(top[:k] / top[k]))
    if not spacing > 0:
        raise TailError("degenerate tail: top order statistics are all equal")
    return float(1.0 / spacing)


@dataclass(frozen=True)
class TailDiagnostics:
    hill_alpha: float
    kurtosis: float
    ks_gaussian_stat: float
    ks_gaussian_p: float
    start: int
    stop: int


def tail_diagnostics(series, start: int = 0, stop: int | None = None, k: int | None = None) -> TailDiagnostics:
    """Hill index, Pearson kurtosis and a KS test against a moment-fitted Gaussian."""
    x = np.asarray(series, dtype=float)
    stop = x.size if stop is None else stop
    seg = x[start:stop]
    if seg.size < MIN_WINDOW:
        raise TailError(f"window of {seg.size} is below the minimum of {MIN_WINDOW}")
    sd = float(np.std(seg))
    if not sd > 0:
        raise TailError("zero spread: segment is constant")
    kurt = float(stats.kurtosis(seg, fisher=False))
    ks = stats.kstest(seg, "norm", args=(float(np.mean(seg)), sd), method="asymp")
    return TailDiagnostics(hill_estimate(seg, k), kurt, float(ks.statistic), float(ks.pvalue), int(start), int(stop))


def rolling_tail_diagnostics(series, window: int, step: int | None = None) -> list[TailDiagnostics]:
    if window < MIN_WINDOW:
        raise TailError(f"window must be at least {MIN_WINDOW}")
    x = np.asarray(series, dtype=float)
    if x.size < window:
        raise TailError("series shorter than the window")
    step = step or window
    return [tail_diagnostics(x, s, s + window) for s in range(0, x.size - window + 1, step)]


def rolling_hill(series, window: int, k: int | None = None) -> np.ndarray:
    """Trailing-window Hill estimate at every index; the first full window fills the warm-up."""
    if window < MIN_WINDOW:
        raise TailError(f"window must be at least {MIN_WINDOW}")
    x = np.asarray(series, dtype=float)
    if x.size < window:
        raise TailError("series shorter than the window")
    out = np.empty(x.size)
    for i in range(window - 1, x.size):
        out[i] = hill_estimate(x[i - window + 1:i + 1], k)
    out[:window - 1] = out[window - 1]
    return out


def bucket_by_hill(hill_values, thresholds=DEFAULT_HILL_THRESHOLDS) -> np.ndarray:
    """Label each Hill value low/medium/high volatility; lower Hill means heavier tails."""
    hi, lo = thresholds
    if not hi > lo:
        raise TailError("thresholds must be (upper, lower) with upper > lower")
    h = np.asarray(hill_values, dtype=float)
    return np.where(h >= hi, "low", np.where(h >= lo, "medium", "high"))


def select_volatile_segments(series, window: int, hill_max: float = 1.6, kurtosis_min: float = 6.0,
                             step: int | None = None) -> list[TailDiagnostics]:
    """Non-overlapping segments whose Hill index is low and kurtosis high."""
    return [d for d in rolling_tail_diagnostics(series, window, step)
            if d.hill_alpha < hill_max and d.kurtosis > kurtosis_min]
