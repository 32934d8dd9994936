import math

import numpy as np
import pytest

from levyforecast.data import (
    DataError, Regime, WindowedDataset, fit_scaler, generate_synthetic, ingest_csv, make_windows,
    regime_labels, standardize,
)
from levyforecast.stable import StableParams
from levyforecast.tails import (
    TailError, bucket_by_hill, hill_estimate, rolling_hill, select_volatile_segments, tail_diagnostics,
)


def test_generate_reproducible():
    p = StableParams(1.5, 0.0, 1.0, 0.0)
    assert np.array_equal(generate_synthetic(p, 100, 7), generate_synthetic(p, 100, 7))
    assert not np.array_equal(generate_synthetic(p, 100, 7), generate_synthetic(p, 100, 8))


def test_regime_schedule_cycles():
    regimes = [Regime(StableParams(2.0, 0, 0.01, 0.0), 3), Regime(StableParams(2.0, 0, 0.01, 100.0), 2)]
    x = generate_synthetic(regimes, 12, 0)
    assert regime_labels(regimes, 12).tolist() == [0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0]
    assert np.all(np.abs(x[[3, 4, 8, 9]] - 100) < 1) and np.all(np.abs(x[[0, 5, 10]]) < 1)


def test_gaussian_kurtosis():
    d = tail_diagnostics(generate_synthetic(StableParams(2.0, 0, 1, 0), 100_000, 3))
    assert abs(d.kurtosis - 3) < 0.1


def test_ingest_csv(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("t,v\n1,1\n2,2\n3,3\n")
    assert ingest_csv(f, "v").tolist() == [1.0, 2.0, 3.0]
    f.write_text("t,v\n1,1\n2,\n3,3\n")
    with pytest.raises(DataError, match=r"lines \[3\]"):
        ingest_csv(f, "v")
    with pytest.raises(DataError):
        ingest_csv(f, "missing")
    f.write_text("v\n1\n" + f"{math.e}\n" + f"{math.e ** 2}\n")
    assert np.allclose(ingest_csv(f, "v", log_returns=True), [1.0, 1.0])
    f.write_text("v\n")
    with pytest.raises(DataError):
        ingest_csv(f, "v")


def test_ingest_sorts_by_timestamp(tmp_path):
    f = tmp_path / "b.csv"
    f.write_text("date,v\n2024-01-03,3\n2024-01-01,1\n2024-01-02,2\n")
    assert ingest_csv(f, "v", timestamp_column="date").tolist() == [1.0, 2.0, 3.0]


def test_standardize():
    z, s = standardize([0.0, 2.0])
    assert z.tolist() == [-1.0, 1.0] and (s.center, s.spread) == (1.0, 1.0)
    x = np.random.default_rng(0).normal(3, 7, 500)
    z, s = standardize(x)
    _, s2 = standardize(z)
    assert abs(s2.center) < 1e-12 and abs(s2.spread - 1) < 1e-12
    assert np.max(np.abs(s.inverse(z) - x)) < 1e-12
    with pytest.raises(DataError):
        standardize(np.ones(4))
    with pytest.raises(DataError):
        standardize([])


def test_robust_scaler():
    s = fit_scaler(np.random.default_rng(1).normal(2.0, 3.0, 200_000), "robust")
    assert abs(s.center - 2) < 0.05 and abs(s.spread - 3) < 0.05
    with pytest.raises(DataError):
        fit_scaler([1.0, 2.0], "minmax")


def test_window_counts():
    assert len(make_windows(np.arange(8.0), 5, 3, split_fracs=(1.0, 0.0, 0.0))) == 1
    assert len(make_windows(np.arange(10.0), 5, 3, split_fracs=(1.0, 0.0, 0.0))) == 3
    with pytest.raises(DataError):
        make_windows(np.arange(7.0), 5, 3)


def test_windows_stay_inside_splits():
    x = np.random.default_rng(0).normal(size=1000)
    ds = make_windows(x, 20, 5)
    b = ds.meta["split_bounds"]
    for start, split in zip(ds.starts, ds.splits):
        lo, hi = b[split]
        assert lo <= start and start + 25 <= hi
    # the scaler only sees the train range
    lo, hi = b["train"]
    assert ds.scaler.center == pytest.approx(np.mean(x[lo:hi]))
    ctx, tgt = ds.arrays("val")
    assert ctx.shape[1] == 20 and tgt.shape[1] == 5
    raw_c, _ = ds.raw_arrays("val")
    first = ds.starts[ds.splits == "val"][0]
    assert np.allclose(raw_c[0], x[first:first + 20])


def test_dataset_round_trip(tmp_path):
    ds = make_windows(np.random.default_rng(2).normal(size=300), 10, 2)
    ds.save(tmp_path / "d.json")
    back = WindowedDataset.load(tmp_path / "d.json")
    assert back.digest() == ds.digest()
    assert np.array_equal(back.arrays("test")[0], ds.arrays("test")[0])


def test_hill_examples():
    assert hill_estimate([math.e ** 2, math.e, 1.0], k=2) == pytest.approx(2 / 3)
    with pytest.raises(TailError, match="degenerate"):
        hill_estimate(np.ones(20), k=5)
    with pytest.raises(TailError, match="insufficient"):
        hill_estimate([1.0, 2.0], k=5)


def test_hill_on_pareto():
    rng = np.random.default_rng(0)
    x = rng.pareto(1.5, 100_000) + 1.0
    assert abs(hill_estimate(x, k=1000) - 1.5) < 0.1


def test_tail_diagnostics_null_and_cauchy():
    rng = np.random.default_rng(4)
    d = tail_diagnostics(rng.standard_normal(100_000))
    assert abs(d.kurtosis - 3) < 0.1 and d.ks_gaussian_p > 0.01
    assert tail_diagnostics(rng.standard_cauchy(5000)).ks_gaussian_p < 0.001
    with pytest.raises(TailError):
        tail_diagnostics(np.ones(100))
    with pytest.raises(TailError):
        tail_diagnostics(rng.standard_normal(49))


def test_buckets():
    assert bucket_by_hill([1.8, 1.4, 1.0]).tolist() == ["low", "medium", "high"]
    assert bucket_by_hill([1.6, 1.2]).tolist() == ["low", "medium"]


def test_rolling_hill_follows_schedule():
    regimes = [Regime(StableParams(1.8, 0, 1, 0), 5000), Regime(StableParams(1.2, 0, 1, 0), 5000)]
    x = generate_synthetic(regimes, 10_000, 1)
    h = rolling_hill(x, 2000)
    assert h[4999] > h[9999] + 0.2


def test_volatile_segments():
    regimes = [Regime(StableParams(2.0, 0, 1, 0), 1000), Regime(StableParams(1.1, 0, 1, 0), 1000)]
    segs = select_volatile_segments(generate_synthetic(regimes, 4000, 2), 1000)
    assert segs and all(s.start % 2000 == 1000 for s in segs)
