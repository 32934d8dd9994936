"""Chambers-Mallows-Stuck sampling for S0 stable laws and their mixtures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .stable import EPS_ALPHA, StableParams

EPS_BETA = 1e-6
W_FLOOR = 1e-300
HALF_PI = 0.5 * np.pi


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by a counter-based Philox generator so distinct stream ids give
    independent sequences and the same key always replays the same draws.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence([int(self.seed) & (2**64 - 1), int(self.stream_id) & (2**64 - 1)])
        self._gen = np.random.Generator(np.random.Philox(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def uniform_angle(self, size=None):
        """Uniform on the open interval (-pi/2, pi/2); exact endpoints are redrawn."""
        v = self._gen.uniform(-HALF_PI, HALF_PI, size=size)
        bad = np.abs(v) >= HALF_PI
        while np.any(bad):
            if np.ndim(v) == 0:
                v = self._gen.uniform(-HALF_PI, HALF_PI)
            else:
                v[bad] = self._gen.uniform(-HALF_PI, HALF_PI, size=int(bad.sum()))
            bad = np.abs(v) >= HALF_PI
        return v

    def exponential(self, size=None):
        return np.maximum(self._gen.standard_exponential(size=size), W_FLOOR)


def cms_standard(alpha, beta, v, w):
    """Standard S0(alpha, beta, 1, 0) variates from angle ``v`` and exponential ``w``.

    For ``|alpha - 1| > 0.01`` this is the classical CMS formula followed by the
    shift ``-beta*tan(pi*alpha/2)`` that moves the S1 location to S0; the
    Cauchy-like branch needs no shift because the two forms coincide at unit scale.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    alpha, beta, v, w = np.broadcast_arrays(alpha, beta, np.asarray(v, float), np.asarray(w, float))
    general = np.abs(alpha - 1.0) > EPS_ALPHA
    out = np.empty(alpha.shape, dtype=float)

    a, b, vg, wg = alpha[general], beta[general], v[general], w[general]
    zeta = b * np.tan(HALF_PI * a)
    xi = np.arctan(zeta) / a
    z = (
        (1.0 + zeta * zeta) ** (0.5 / a)
        * np.sin(a * (vg + xi))
        / np.cos(vg) ** (1.0 / a)
        * (np.cos(vg - a * (vg + xi)) / wg) ** ((1.0 - a) / a)
    )
    out[general] = z - zeta

    near = ~general
    b, vn, wn = beta[near], v[near], w[near]
    skewed = np.abs(b) >= EPS_BETA
    zc = np.tan(vn)
    bs, vs, ws = b[skewed], vn[skewed], wn[skewed]
    lead = HALF_PI + bs * vs
    zc[skewed] = (2.0 / np.pi) * (lead * np.tan(vs) - bs * np.log(HALF_PI * ws * np.cos(vs) / lead))
    out[near] = zc
    return out


def sample_stable(params: StableParams, rng: RngStream, size=None):
    """Draw from ``S0(alpha, beta, gamma, delta)``; a float when ``size`` is None."""
    v = rng.uniform_angle(size)
    w = rng.exponential(size)
    z = cms_standard(params.alpha, params.beta, v, w)
    x = params.gamma * z + params.delta
    return float(x) if size is None else x


def sample_stable_arrays(alpha, beta, gamma, delta, rng: RngStream):
    """One draw per entry of the broadcast parameter arrays."""
    alpha, beta, gamma, delta = np.broadcast_arrays(*(np.asarray(p, float) for p in (alpha, beta, gamma, delta)))
    v = rng.uniform_angle(alpha.shape)
    w = rng.exponential(alpha.shape)
    return gamma * cms_standard(alpha, beta, v, w) + delta


def sample_component(weights, rng: RngStream, size=None):
    """Categorical index draws with probabilities ``weights`` (last axis)."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        cdf = np.cumsum(weights)
        cdf /= cdf[-1]
        u = rng.generator.random(size)
        idx = np.searchsorted(cdf, u, side="right")
        idx = np.minimum(idx, len(weights) - 1)
        return int(idx) if size is None else idx
    # one draw per row
    cdf = np.cumsum(weights, axis=-1)
    cdf /= cdf[..., -1:]
    u = rng.generator.random(weights.shape[:-1])
    idx = (u[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, weights.shape[-1] - 1)


def sample_mixture(mix, rng: RngStream, size=None):
    """Ancestral draw: pick a component by weight, then sample it with CMS."""
    k = sample_component(mix.weights, rng, size)
    table = np.array([c.as_tuple() for c in mix.components])
    a, b, g, d = (table[k, j] for j in range(4))
    out = sample_stable_arrays(a, b, g, d, rng)
    return float(out) if size is None else out
