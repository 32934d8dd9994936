"""Series generation, CSV ingestion, standardization and windowing."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .sampler import RngStream, sample_stable
from .stable import StableParams

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_FRACS = (0.7, 0.15, 0.15)
DATASET_FORMAT = "levyforecast-dataset"
DATASET_VERSION = 1


class DataError(ValueError):
    pass


# synthetic -------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    params: StableParams
    length: int


def generate_synthetic(spec, length: int, seed: int) -> np.ndarray:
    """Stable draws for ``length`` steps.

    ``spec`` is a single :class:`StableParams` (i.i.d. series) or a sequence of
    :class:`Regime` blocks that is cycled until ``length`` values exist.
    """
    if length < 1:
        raise DataError("length must be positive")
    rng = RngStream(seed, 0)
    if isinstance(spec, StableParams):
        return sample_stable(spec, rng, size=length)
    regimes = list(spec)
    if not regimes or any(r.length < 1 for r in regimes):
        raise DataError("regime schedule needs blocks of positive length")
    out = np.empty(length)
    pos, i = 0, 0
    while pos < length:
        r = regimes[i % len(regimes)]
        n = min(r.length, length - pos)
        out[pos:pos + n] = sample_stable(r.params, rng, size=n)
        pos += n
        i += 1
    return out


def regime_labels(regimes, length: int) -> np.ndarray:
    """Index of the generating regime block for each position."""
    labels = np.empty(length, dtype=int)
    pos, i = 0, 0
    while pos < length:
        n = min(regimes[i % len(regimes)].length, length - pos)
        labels[pos:pos + n] = i % len(regimes)
        pos += n
        i += 1
    return labels


# csv ---------------------------------------------------------------------------

def _parse_time(text: str):
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text.strip()).timestamp()


def ingest_csv(path, column: str, timestamp_column: str | None = None, log_returns: bool = False) -> np.ndarray:
    """Read one numeric column from a headed CSV file.

    Rows are ordered by ``timestamp_column`` when given, otherwise kept in file
    order. Unparsable values raise :class:`DataError` listing file line numbers.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        for col in (column, timestamp_column):
            if col is not None and col not in reader.fieldnames:
                raise DataError(f"{path}: no column {col!r} (have {reader.fieldnames})")
        values, stamps, bad = [], [], []
        for row in reader:
            line = reader.line_num
            raw = (row.get(column) or "").strip()
            try:
                v = float(raw)
                if not math.isfinite(v):
                    raise ValueError
            except ValueError:
                bad.append(line)
                continue
            if timestamp_column is not None:
                try:
                    stamps.append(_parse_time(row[timestamp_column]))
                except (ValueError, TypeError):
                    bad.append(line)
                    continue
            values.append(v)
    if bad:
        raise DataError(f"{path}: unparsable values in column {column!r} at lines {bad}")
    if not values:
        raise DataError(f"{path}: empty series")
    series = np.array(values)
    if timestamp_column is not None:
        series = series[np.argsort(np.array(stamps), kind="stable")]
    if log_returns:
        if np.any(series <= 0):
            raise DataError("log returns need strictly positive values")
        series = np.diff(np.log(series))
        if series.size == 0:
            raise DataError("log returns need at least two rows")
    return series


# scaling ---------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    center: float
    spread: float

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.spread

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.spread + self.center


SCALINGS = ("std", "robust")
IQR_TO_SIGMA = 1.3489795003921634  # interquartile range of N(0, 1)


def fit_scaler(series, method: str = "std") -> Scaler:
    """Mean and population std, or median and IQR/1.349 with ``method="robust"``.

    The std of a stable series with alpha < 2 is driven by a handful of extremes,
    which leaves the bulk of the standardized data far below unit scale.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise DataError("cannot standardize an empty series")
    if method == "std":
        center, spread = float(np.mean(x)), float(np.std(x))
    elif method == "robust":
        q1, med, q3 = np.percentile(x, [25, 50, 75])
        center, spread = float(med), float((q3 - q1) / IQR_TO_SIGMA)
    else:
        raise DataError(f"unknown scaling {method!r}; expected one of {SCALINGS}")
    if not spread > 0:
        raise DataError("zero spread: series is constant")
    return Scaler(center, spread)


def standardize(series, scaler: Scaler | None = None):
    """Return ``(standardized, scaler)``; fits mean and population std when no scaler is given."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise DataError("cannot standardize an empty series")
    scaler = scaler or fit_scaler(x)
    return scaler.transform(x), scaler


# windows ---------------------------------------------------------------------

def split_bounds(n: int, fracs=DEFAULT_SPLIT_FRACS):
    """Chronological [start, stop) index ranges for train/val/test."""
    fracs = np.asarray(fracs, dtype=float)
    if len(fracs) != 3 or np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise DataError(f"split fractions must be 3 nonnegative values summing to 1, got {fracs}")
    cuts = np.round(np.cumsum(fracs) * n).astype(int)
    cuts[-1] = n
    starts = np.concatenate([[0], cuts[:-1]])
    return {name: (int(a), int(b)) for name, a, b in zip(SPLITS, starts, cuts)}


@dataclass
class WindowedDataset:
    """Context/target windows over one series, standardized with train-only statistics.

    ``starts[i]`` is the index of the first context value of window ``i``; its
    targets are ``series[starts[i]+T : starts[i]+T+H]``.
    """

    series: np.ndarray
    context_length: int
    horizon: int
    starts: np.ndarray
    splits: np.ndarray
    scaler: Scaler
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.starts)

    def _windows(self, mask):
        t, h = self.context_length, self.horizon
        idx = self.starts[mask][:, None] + np.arange(t + h)[None, :]
        z = self.scaler.transform(self.series[idx]) if idx.size else np.empty((0, t + h))
        return z[:, :t], z[:, t:]

    def arrays(self, split: str | None = None):
        """Standardized ``(contexts, targets)`` for one split (all windows if None)."""
        mask = np.ones(len(self.starts), bool) if split is None else self.splits == split
        return self._windows(mask)

    def raw_arrays(self, split: str | None = None):
        ctx, tgt = self.arrays(split)
        return self.scaler.inverse(ctx), self.scaler.inverse(tgt)

    def count(self, split: str) -> int:
        return int(np.sum(self.splits == split))

    def to_dict(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "context_length": self.context_length,
            "horizon": self.horizon,
            "scaler": {"center": self.scaler.center, "spread": self.scaler.spread},
            "series": self.series.tolist(),
            "starts": self.starts.tolist(),
            "splits": self.splits.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowedDataset":
        if d.get("format") != DATASET_FORMAT:
            raise DataError("not a dataset file")
        if d.get("version") != DATASET_VERSION:
            raise DataError(f"unsupported dataset version {d.get('version')}")
        return cls(
            np.array(d["series"], dtype=float),
            int(d["context_length"]),
            int(d["horizon"]),
            np.array(d["starts"], dtype=int),
            np.array(d["splits"], dtype=object).astype(str),
            Scaler(float(d["scaler"]["center"]), float(d["scaler"]["spread"])),
            dict(d.get("meta", {})),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "WindowedDataset":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def make_windows(series, context_length: int, horizon: int, stride: int = 1,
                 split_fracs=DEFAULT_SPLIT_FRACS, meta: dict | None = None,
                 scaling: str = "std") -> WindowedDataset:
    """Cut a series into windows after a chronological split.

    A window is kept only if every index it touches lies inside one split, so
    no window straddles a split boundary. The scaler is fit on the train range
    (see ``fit_scaler`` for the ``scaling`` choices).
    """
    x = np.asarray(series, dtype=float)
    t, h = int(context_length), int(horizon)
    if t < 1 or h < 1 or stride < 1:
        raise DataError("context length, horizon and stride must be positive")
    if x.size < t + h:
        raise DataError(f"series of length {x.size} is shorter than T+H={t + h}")
    bounds = split_bounds(x.size, split_fracs)
    starts, labels = [], []
    for name in SPLITS:
        lo, hi = bounds[name]
        if hi - lo < t + h:
            continue
        s = np.arange(lo, hi - t - h + 1, stride)
        starts.append(s)
        labels += [name] * len(s)
    if not labels:
        raise DataError("no split is long enough to hold a window")
    lo, hi = bounds["train"]
    fit_on = x[lo:hi] if hi - lo >= 2 else x
    scaler = fit_scaler(fit_on, scaling)
    return WindowedDataset(x, t, h, np.concatenate(starts).astype(int), np.array(labels), scaler,
                           dict(meta or {}, split_bounds=bounds, stride=stride, scaling=scaling))
