"""Sample-based scores for probabilistic forecasts.

Empirical quantiles use the inverted-CDF convention throughout: the level-q
quantile of N sorted samples is ``x_(ceil(q*N))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

QL_LEVELS = (0.1, 0.5, 0.9, 0.99)
COVERAGE_LEVELS = (0.75, 0.90, 0.995)
CALIBRATION_LEVELS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2)) + (0.975, 0.99, 0.995)
PIT_BINS = 20


def empirical_quantile(samples, level):
    """Inverted-CDF quantile along the last axis; ``level`` may be a vector."""
    x = np.sort(np.asarray(samples, dtype=float), axis=-1)
    n = x.shape[-1]
    idx = np.clip(np.ceil(np.asarray(level, dtype=float) * n - 1e-9).astype(int) - 1, 0, n - 1)
    return np.take(x, idx, axis=-1)


def crps_ensemble(samples, y) -> float:
    """Energy form ``mean|X - y| - 0.5 * mean|X - X'|`` over all N^2 pairs."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("need at least one sample")
    first = np.mean(np.abs(x - y))
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i) for sorted x, i = 1..n
    pair = 2.0 * np.sum((2.0 * np.arange(1, n + 1) - n - 1) * x) / (n * n)
    return float(first - 0.5 * pair)


def crps_integral(samples, y, lo=-math.inf, hi=math.inf) -> float:
    """Exact integral of ``(F(x) - 1{y <= x})^2`` over ``[lo, hi]`` for the empirical CDF F."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("need at least one sample")
    # outside [min(x, y), max(x, y)] the integrand is zero
    a = max(lo, min(x[0], y))
    b = min(hi, max(x[-1], y))
    if not b > a:
        return 0.0
    knots = np.unique(np.concatenate([x, [y, a, b]]))
    knots = knots[(knots >= a) & (knots <= b)]
    left, width = knots[:-1], np.diff(knots)
    f = np.searchsorted(x, left, side="right") / n
    ind = (left >= y).astype(float)
    return float(np.sum((f - ind) ** 2 * width))


def tail_crps(samples, y, lower: float = 0.1, upper: float = 0.9) -> float:
    """CRPS integrand restricted to ``x < q_lower`` and ``x > q_upper`` of the forecast itself."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise ValueError("tail CRPS needs at least 10 samples")
    q_lo, q_hi = empirical_quantile(x, [lower, upper])
    return crps_integral(x, y, hi=q_lo) + crps_integral(x, y, lo=q_hi)


def pinball(y, q, level):
    u = y - q
    return np.maximum(level * u, (level - 1.0) * u)


def quantile_loss(samples, y, levels=QL_LEVELS) -> float:
    """Mean pinball loss of the empirical quantiles (unnormalized)."""
    q = empirical_quantile(samples, levels)
    return float(np.mean(pinball(y, q, np.asarray(levels))))


def coverage(samples_per_case, ys, level: float):
    """Fraction of cases with ``y <= q_level``; returns ``(value, |value - level|)``."""
    ys = np.asarray(ys, dtype=float)
    if ys.size == 0:
        raise ValueError("need at least one case")
    q = empirical_quantile(samples_per_case, level)
    value = float(np.mean(ys <= q))
    return value, abs(value - level)


def pit_values(samples_per_case, ys, rng) -> np.ndarray:
    """Randomized rank PIT ``(#{X < y} + U * (#{X = y} + 1)) / (N + 1)``.

    Uniform on (0, 1) when ``y`` and the N samples are exchangeable, so the
    ensemble's discreteness does not leak into the KS statistic.
    """
    x = np.asarray(samples_per_case, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = x.shape[-1]
    below = np.sum(x < ys[..., None], axis=-1)
    ties = np.sum(x == ys[..., None], axis=-1)
    u = rng.generator.random(ys.shape)
    return (below + u * (ties + 1)) / (n + 1)


def ks_uniform(values) -> float:
    """Kolmogorov-Smirnov distance of values to Uniform(0, 1)."""
    p = np.sort(np.clip(np.asarray(values, dtype=float).ravel(), 0.0, 1.0))
    n = p.size
    if n == 0:
        raise ValueError("need at least one value")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - p), np.max(p - (i - 1) / n)))


def pit_ks(samples_per_case, ys, rng) -> float:
    return ks_uniform(pit_values(samples_per_case, ys, rng))


def ks_critical(n: int, level: float = 0.01) -> float:
    """Asymptotic one-sample KS critical value ``sqrt(-ln(level/2)/2) / sqrt(n)``."""
    return math.sqrt(-0.5 * math.log(level / 2.0)) / math.sqrt(n)


# report ------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Aggregate and per-horizon scores; ``coverage[level] = (value, deviation)``."""

    crps: float
    tail_crps: float
    ql: float
    pit_ks: float
    coverage: dict
    count: int
    per_horizon: list = field(default_factory=list)
    calibration: list = field(default_factory=list)  # (level, empirical coverage)
    pit_histogram: list = field(default_factory=list)

    def row(self) -> dict:
        out = {"crps": self.crps, "tail_crps": self.tail_crps, "ql": self.ql, "pit_ks": self.pit_ks}
        for level, (v, dev) in self.coverage.items():
            out[f"cov@{level:g}"] = v
            out[f"cov@{level:g}_dev"] = dev
        return out


def _scores(samples, ys, rng, coverage_levels, ql_levels):
    cases = samples.reshape(-1, samples.shape[-1])
    flat_y = ys.ravel()
    crps = np.mean([crps_ensemble(s, y) for s, y in zip(cases, flat_y)])
    tcrps = np.mean([tail_crps(s, y) for s, y in zip(cases, flat_y)])
    ql = np.mean([quantile_loss(s, y, ql_levels) for s, y in zip(cases, flat_y)])
    cov = {lvl: coverage(cases, flat_y, lvl) for lvl in coverage_levels}
    ks = pit_ks(cases, flat_y, rng)
    return float(crps), float(tcrps), float(ql), ks, cov


def assemble_report(samples, truths, rng, coverage_levels=COVERAGE_LEVELS, ql_levels=QL_LEVELS) -> MetricReport:
    """Score forecasts ``samples`` (cases, H, N) against ``truths`` (cases, H)."""
    samples = np.asarray(samples, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if truths.size == 0:
        raise ValueError("empty test set")
    if samples.ndim == 2:
        samples = samples[:, None, :]
    if truths.ndim == 1:
        truths = truths[:, None]
    if samples.shape[:2] != truths.shape:
        raise ValueError(f"forecasts {samples.shape[:2]} and truths {truths.shape} are misaligned")
    crps, tcrps, ql, ks, cov = _scores(samples, truths, rng, coverage_levels, ql_levels)
    per_h = []
    for h in range(truths.shape[1]):
        c, t, q, k, cv = _scores(samples[:, h], truths[:, h], rng, coverage_levels, ql_levels)
        per_h.append({"horizon": h + 1, "crps": c, "tail_crps": t, "ql": q, "pit_ks": k,
                      **{f"cov@{lvl:g}": v for lvl, (v, _) in cv.items()}})
    cases = samples.reshape(-1, samples.shape[-1])
    flat_y = truths.ravel()
    calib = [(float(lvl), coverage(cases, flat_y, lvl)[0]) for lvl in CALIBRATION_LEVELS]
    hist, _ = np.histogram(pit_values(cases, flat_y, rng), bins=PIT_BINS, range=(0.0, 1.0))
    return MetricReport(crps, tcrps, ql, ks, cov, int(truths.shape[0]), per_h, calib, hist.tolist())


def calibration_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["nominal", "empirical"])
    for lvl, emp in report.calibration:
        w.writerow([f"{lvl:g}", f"{emp:.6f}"])
    return buf.getvalue()


def pit_histogram_csv(report: MetricReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["bin_lo", "bin_hi", "count"])
    edges = np.linspace(0.0, 1.0, len(report.pit_histogram) + 1)
    for lo, hi, c in zip(edges[:-1], edges[1:], report.pit_histogram):
        w.writerow([f"{lo:.2f}", f"{hi:.2f}", c])
    return buf.getvalue()


def long_rows(dataset: str, model: str, report: MetricReport):
    """One (dataset, model, horizon, metric, value) row per score; horizon 'all' for aggregates."""
    rows = [(dataset, model, "all", k, v) for k, v in report.row().items()]
    for ph in report.per_horizon:
        rows += [(dataset, model, str(ph["horizon"]), k, v) for k, v in ph.items() if k != "horizon"]
    return rows


def format_table(entries) -> str:
    """Aligned text table; ``entries`` is a list of (model name, row dict with optional ``*_std``)."""
    cols = ["CRPS", "Tail-CRPS", "QL", "PIT-KS"] + [f"Cov@{lvl:g} (|d|)" for lvl in COVERAGE_LEVELS]
    keys = ["crps", "tail_crps", "ql", "pit_ks"]
    lines = []
    body = []
    for name, row in entries:
        cells = []
        for k in keys:
            cell = f"{row[k]:.3f}"
            if f"{k}_std" in row:
                cell += f"±{row[f'{k}_std']:.3f}"
            cells.append(cell)
        for lvl in COVERAGE_LEVELS:
            cells.append(f"{row[f'cov@{lvl:g}']:.3f} ({row[f'cov@{lvl:g}_dev']:.3f})")
        body.append([name] + cells)
    header = ["Model"] + cols
    widths = [max(len(r[i]) for r in body + [header]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(wd) if i == 0 else c.rjust(wd) for i, (c, wd) in enumerate(zip(r, widths)))
    lines.append(fmt(header))
    lines.append("-" * len(lines[0]))
    lines += [fmt(r) for r in body]
    return "\n".join(lines)
