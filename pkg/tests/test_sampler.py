import numpy as np
import pytest

from levyforecast.mixture import MixtureParams, empirical_cf, make_grid
from levyforecast.sampler import RngStream, cms_standard, sample_component, sample_mixture, sample_stable
from levyforecast.stable import StableParams, cf


def ecf(x, tau):
    return np.exp(1j * np.outer(tau, x)).mean(axis=1)


def test_cauchy_quantiles():
    x = sample_stable(StableParams(1.0, 0.0, 1.0, 0.0), RngStream(1), 100_000)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    assert abs(med) < 0.02 and abs(q1 + 1) < 0.03 and abs(q3 - 1) < 0.03


def test_gaussian_variance():
    x = sample_stable(StableParams(2.0, 0.0, 1.0, 0.0), RngStream(2), 100_000)
    assert abs(np.var(x) - 2.0) < 0.1


def test_affine_output(monkeypatch):
    import levyforecast.sampler as s
    monkeypatch.setattr(s, "cms_standard", lambda a, b, v, w: np.ones_like(v))
    assert s.sample_stable(StableParams(1.5, 0.0, 2.0, 3.0), RngStream(0)) == pytest.approx(5.0)


def test_determinism_and_streams():
    p = StableParams(1.3, 0.2, 1.0, 0.0)
    a = sample_stable(p, RngStream(7, 3), 50)
    b = sample_stable(p, RngStream(7, 3), 50)
    c = sample_stable(p, RngStream(7, 4), 50)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_uniform_angle_open_interval():
    v = RngStream(0).uniform_angle(100_000)
    assert np.all(np.abs(v) < np.pi / 2)


@pytest.mark.parametrize("params", [(1.5, 0.5, 1.0, 0.0), (0.7, -0.8, 2.0, 1.0), (1.011, 0.5, 1.0, 0.0),
                                    (1.005, 0.5, 1.0, 0.0), (1.0, 0.0, 0.5, -1.0), (2.0, 0.0, 1.0, 0.0)])
def test_ecf_matches_cf(params):
    n = 100_000
    p = StableParams(*params)
    x = sample_stable(p, RngStream(11), n)
    tau = make_grid(129, 15.0).points
    assert np.max(np.abs(ecf(x, tau) - cf(p, tau))) <= 5 / np.sqrt(n)


def test_branch_continuity_around_switch():
    n = 100_000
    tau = np.linspace(-5, 5, 41)
    lo = sample_stable(StableParams(1.009, 0.5, 1.0, 0.0), RngStream(3), n)
    hi = sample_stable(StableParams(1.011, 0.5, 1.0, 0.0), RngStream(4), n)
    assert np.max(np.abs(ecf(lo, tau) - ecf(hi, tau))) <= 3 * 5 / np.sqrt(n)


def test_alpha_two_closed_form():
    rng = np.random.default_rng(0)
    v = rng.uniform(-np.pi / 2, np.pi / 2, 100)
    w = rng.exponential(size=100)
    assert np.allclose(cms_standard(np.full(100, 2.0), np.zeros(100), v, w), 2 * np.sin(v) * np.sqrt(w))


def test_sample_component_frequencies():
    rng = RngStream(5)
    assert np.all(sample_component(np.array([1.0, 0.0, 0.0]), rng, 1000) == 0)
    k = sample_component(np.array([0.5, 0.5]), rng, 100_000)
    assert abs(np.mean(k == 0) - 0.5) < 0.01
    k = sample_component(np.array([0.2, 0.3, 0.5]), rng, 100_000)
    assert np.allclose(np.bincount(k, minlength=3) / k.size, [0.2, 0.3, 0.5], atol=0.01)


def test_sample_component_rowwise():
    w = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert sample_component(w, RngStream(0)).tolist() == [0, 1, 1]


def test_separated_mixture():
    c = StableParams(2.0, 0.0, 0.01, -10.0), StableParams(2.0, 0.0, 0.01, 10.0)
    x = sample_mixture(MixtureParams(np.array([0.5, 0.5]), c), RngStream(9), 10_000)
    neg, pos = x[x < 0], x[x > 0]
    assert abs(neg.size / x.size - 0.5) < 0.02
    assert np.all(np.abs(neg + 10) < 0.1) and np.all(np.abs(pos - 10) < 0.1)


def test_single_component_mixture_law():
    p = StableParams(1.4, 0.3, 1.0, 0.0)
    x = sample_mixture(MixtureParams(np.array([1.0]), (p,)), RngStream(2), 50_000)
    tau = np.linspace(-5, 5, 21)
    assert np.max(np.abs(ecf(x, tau) - cf(p, tau))) <= 5 / np.sqrt(x.size)
