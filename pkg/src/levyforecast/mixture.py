"""Mixture characteristic functions and the spectral (CF-matching) training loss.

The loss compares a predicted mixture CF against the single-observation
empirical CF ``exp(i*tau*y)`` on a fixed symmetric frequency grid, weighting
each frequency by ``exp(-|gamma_eff*tau|**alpha_eff)`` computed from detached
mixture-averaged parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .stable import EPS_LN, EPS_TAU, PSI_RE_FLOOR, StableParams, cf_arrays

log = logging.getLogger(__name__)

EPS_W = 1e-8
EPS_H = 1e-8
DEFAULT_M = 129
DEFAULT_TAU_MAX = 15.0


@dataclass(frozen=True)
class MixtureParams:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))
        if w.ndim != 1 or len(w) < 1:
            raise ValueError("weights must be a nonempty vector")
        if len(w) != len(self.components):
            raise ValueError(f"{len(w)} weights for {len(self.components)} components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must lie on the simplex, got {w}")
        for c in self.components:
            if not isinstance(c, StableParams):
                raise TypeError("components must be StableParams")

    @property
    def k(self) -> int:
        return len(self.weights)

    def arrays(self):
        """(weights, alpha, beta, gamma, delta) as length-K arrays."""
        table = np.array([c.as_tuple() for c in self.components], dtype=float)
        return (self.weights, *table.T)

    @classmethod
    def single(cls, params: StableParams) -> "MixtureParams":
        return cls(np.ones(1), (params,))


@dataclass(frozen=True)
class FrequencyGrid:
    points: np.ndarray
    tau_max: float
    include_mask: np.ndarray

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def included(self) -> np.ndarray:
        return self.points[self.include_mask]


def make_grid(m: int = DEFAULT_M, tau_max: float = DEFAULT_TAU_MAX) -> FrequencyGrid:
    """Uniform grid ``-tau_max + 2*tau_max*(j-1)/(M-1)``, j = 1..M.

    An odd M places a point at zero, which the loss excludes; an even M is
    allowed but logged since the grid then straddles zero.
    """
    if m < 2:
        raise ValueError("grid needs at least 2 points")
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    if m % 2 == 0:
        log.warning("even grid size M=%d: zero frequency is not on the grid", m)
    j = np.arange(m)
    points = -tau_max + 2.0 * tau_max * j / (m - 1)
    if m % 2 == 1:
        points[m // 2] = 0.0
    return FrequencyGrid(points, float(tau_max), np.abs(points) > EPS_TAU)


@dataclass(frozen=True)
class EffectiveParams:
    gamma_eff: float
    alpha_eff: float


def mixture_cf(mix: MixtureParams, grid) -> np.ndarray:
    """``sum_k pi_k * phi_k(tau)`` at every grid point (complex array)."""
    tau = grid.points if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
    w, a, b, g, d = mix.arrays()
    comps = cf_arrays(a[:, None], b[:, None], g[:, None], d[:, None], tau[None, :])
    return w @ comps


def effective_params(mix: MixtureParams) -> EffectiveParams:
    w, a, _, g, _ = mix.arrays()
    return EffectiveParams(float(w @ g), float(w @ a))


def adaptive_weights_arrays(gamma_eff, alpha_eff, tau):
    """``exp(-|gamma_eff*tau|**alpha_eff)``, broadcasting; plain arrays, never on a tape."""
    return np.exp(-np.abs(np.asarray(gamma_eff)[..., None] * tau) ** np.asarray(alpha_eff)[..., None])


def adaptive_weights(eff: EffectiveParams, grid) -> np.ndarray:
    tau = grid.points if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
    return np.exp(-np.abs(eff.gamma_eff * tau) ** eff.alpha_eff)


def empirical_cf(y: float, grid) -> np.ndarray:
    tau = grid.points if isinstance(grid, FrequencyGrid) else np.asarray(grid, dtype=float)
    return np.cos(tau * y) + 1j * np.sin(tau * y)


def ecf_batch_mean(ys, tau):
    """Batch-averaged empirical CF ``mean_b exp(i*tau*y_b)``."""
    ys = np.asarray(ys, dtype=float).ravel()
    if ys.size == 0:
        raise ValueError("empty batch")
    tau = np.asarray(tau, dtype=float)
    phase = np.multiply.outer(tau, ys)
    out = np.cos(phase).mean(axis=-1) + 1j * np.sin(phase).mean(axis=-1)
    return complex(out) if out.ndim == 0 else out


# differentiable pieces -------------------------------------------------------

def component_log_cf_tensor(alpha, beta, gamma, delta, tau):
    """Log-CF real/imag parts as tensors of shape ``param.shape + (len(tau),)``.

    ``tau`` must not contain zero (callers pass only included frequencies).
    """
    tau = np.asarray(tau, dtype=float)
    abs_tau, sign_tau = np.abs(tau), np.sign(tau)
    a = ad.reshape(alpha, alpha.shape + (1,))
    b = ad.reshape(beta, beta.shape + (1,))
    g = ad.reshape(gamma, gamma.shape + (1,))
    d = ad.reshape(delta, delta.shape + (1,))
    u = g * abs_tau
    u_alpha = ad.exp(a * ad.log(u))
    skew = ad.expm1((1.0 - a) * ad.log(u + EPS_LN))
    bt = b * ad.tan(a * (0.5 * math.pi))
    psi_im = d * tau - u_alpha * skew * (bt * sign_tau)
    psi_re = ad.maximum(-u_alpha, PSI_RE_FLOOR)
    return psi_re, psi_im


def mixture_cf_tensor(weights, alpha, beta, gamma, delta, tau):
    """Mixture CF (re, im) over the last (component) axis of the parameter tensors."""
    psi_re, psi_im = component_log_cf_tensor(alpha, beta, gamma, delta, tau)
    mod = ad.exp(psi_re)
    w = ad.reshape(weights, weights.shape + (1,))
    re = ad.sum(w * (mod * ad.cos(psi_im)), axis=-2)
    im = ad.sum(w * (mod * ad.sin(psi_im)), axis=-2)
    return re, im


def effective_arrays(pi, gamma, alpha):
    """Weight-averaged ``(gamma_eff, alpha_eff)`` over the last axis."""
    return (pi * gamma).sum(-1), (pi * alpha).sum(-1)


def _loss_frequencies(grid: FrequencyGrid):
    """Included frequencies and their multiplicities.

    Both the CF error and the weights are even in tau, so a symmetric grid is
    folded onto its positive half with every point counted twice.
    """
    tau = grid.included
    pos = np.sort(tau[tau > 0])
    if len(pos) * 2 == len(tau) and np.allclose(np.sort(-tau[tau < 0]), pos, rtol=0, atol=1e-12):
        return pos, 2.0
    return tau, 1.0


def cf_loss_tensor(weights, alpha, beta, gamma, delta, y, grid: FrequencyGrid, weighting: str = "adaptive",
                   effective=None):
    """Spectral loss for parameter tensors of shape (B, H, K) and targets (B, H).

    Per (sample, horizon): weighted squared CF error over included frequencies
    divided by the weight total plus ``EPS_W``; summed over horizons and
    averaged over the batch. ``weighting="uniform"`` sets every weight to 1.

    Adaptive weights are computed from plain values, so no gradient flows
    through them. ``effective=(gamma_eff, alpha_eff)`` (arrays of shape (B, H))
    pins them instead, which is what a finite-difference check of the
    stop-gradient objective must do.
    """
    y = np.asarray(y, dtype=float)
    if weights.ndim != 3 or y.shape != weights.shape[:2]:
        raise ValueError(f"shape mismatch: params {weights.shape}, targets {y.shape}")
    for t in (alpha, beta, gamma, delta):
        if t.shape != weights.shape:
            raise ValueError(f"shape mismatch: {t.shape} vs {weights.shape}")
    tau, mult = _loss_frequencies(grid)
    re, im = mixture_cf_tensor(weights, alpha, beta, gamma, delta, tau)
    phase = y[..., None] * tau
    dre = re - np.cos(phase)
    dim = im - np.sin(phase)
    err = dre * dre + dim * dim
    if weighting == "adaptive":
        if effective is None:
            effective = effective_arrays(weights.value, gamma.value, alpha.value)
        w = adaptive_weights_arrays(effective[0], effective[1], tau)
    elif weighting == "uniform":
        w = np.ones(err.shape)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    w = w * mult
    per = ad.sum(err * w, axis=-1) / (w.sum(axis=-1) + EPS_W)
    return ad.sum(per) * (1.0 / y.shape[0])


def entropy_tensor(weights):
    """Mean mixing-weight entropy over every (sample, horizon) in a (B, H, K) tensor."""
    h = -ad.sum(weights * ad.log(weights + EPS_H), axis=-1)
    return ad.mean(h)


# plain-value front ends ------------------------------------------------------

def _stack_mixes(mixes):
    rows = [[m.arrays() for m in row] for row in mixes]
    arr = np.array(rows, dtype=float)  # (B, H, 5, K)
    return [arr[:, :, i, :] for i in range(5)]


def cf_loss(mixes, targets, grid: FrequencyGrid, weighting: str = "adaptive") -> float:
    """Spectral loss for nested lists ``mixes[b][h]`` of :class:`MixtureParams`."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 2 or len(mixes) != targets.shape[0] or any(len(r) != targets.shape[1] for r in mixes):
        raise ValueError("mixes and targets must both be (batch, horizon)")
    ks = {m.k for row in mixes for m in row}
    if len(ks) != 1:
        raise ValueError("all mixtures must share the component count")
    w, a, b, g, d = (ad.Tensor(x) for x in _stack_mixes(mixes))
    return cf_loss_tensor(w, a, b, g, d, targets, grid, weighting).item()


def entropy_regularizer(weight_vectors) -> float:
    """Mean entropy ``-sum_k pi_k ln(pi_k + 1e-8)``; the last axis is the simplex."""
    p = np.asarray(weight_vectors, dtype=float)
    if p.ndim == 1:
        p = p[None, :]
    return float(np.mean(-(p * np.log(p + EPS_H)).sum(axis=-1)))


def total_loss(cf_term: float, entropy: float, lambda_ent: float = 0.01) -> float:
    return cf_term - lambda_ent * entropy
