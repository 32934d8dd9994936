"""Characteristic functions of alpha-stable laws in Nolan's S0 parameterization.

All evaluation goes through the log-CF split into real and imaginary parts.
The skew term ``tan(pi*alpha/2) * (|gamma*tau|**(1-alpha) - 1)`` is evaluated
with ``expm1`` so the result is continuous across ``alpha = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_LN = 1e-10
EPS_TAU = 1e-12
EPS_ALPHA = 0.01
PSI_RE_FLOOR = -50.0
# below this distance from alpha=1 the tan/expm1 product is replaced by its limit
_ALPHA_ONE_GUARD = 1e-9


@dataclass(frozen=True)
class StableParams:
    """One S0 stable law (alpha, beta, gamma, delta)."""

    alpha: float
    beta: float = 0.0
    gamma: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not -1.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [-1, 1], got {self.beta}")
        if not self.gamma > 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not math.isfinite(self.delta):
            raise ValueError(f"delta must be finite, got {self.delta}")

    def scaled(self, c: float) -> "StableParams":
        """Law of ``c * X`` for ``X`` with these parameters (S0 scaling identity)."""
        if c == 0:
            raise ValueError("scale factor must be nonzero")
        return StableParams(self.alpha, math.copysign(1.0, c) * self.beta, abs(c) * self.gamma, c * self.delta)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.delta)


def _skew_factor(alpha, log_u):
    """tan(pi*alpha/2) * expm1((1-alpha)*log_u), with the alpha=1 limit patched in."""
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        general = np.tan(0.5 * np.pi * alpha) * np.expm1((1.0 - alpha) * log_u)
    limit = (2.0 / np.pi) * log_u
    return np.where(np.abs(alpha - 1.0) < _ALPHA_ONE_GUARD, limit, general)


def log_cf_arrays(alpha, beta, gamma, delta, tau):
    """Vectorised log-CF; every argument broadcasts. Returns (psi_re, psi_im)."""
    tau = np.asarray(tau, dtype=float)
    u = np.abs(np.asarray(gamma, dtype=float) * tau)
    u_alpha = u ** np.asarray(alpha, dtype=float)
    g = _skew_factor(alpha, np.log(u + EPS_LN))
    psi_re = np.maximum(-u_alpha, PSI_RE_FLOOR)
    psi_im = np.asarray(delta, dtype=float) * tau - u_alpha * np.asarray(beta, dtype=float) * np.sign(tau) * g
    return psi_re, psi_im


def log_cf(params: StableParams, tau):
    """Real and imaginary parts of the log characteristic function.

    ``psi_re`` is floored at -50 so ``exp(psi_re)`` never underflows to an
    exact zero. Scalars in, scalars out; arrays broadcast.
    """
    re, im = log_cf_arrays(params.alpha, params.beta, params.gamma, params.delta, tau)
    if np.ndim(re) == 0:
        return float(re), float(im)
    return re, im


def cf_arrays(alpha, beta, gamma, delta, tau, alpha1_closed=False):
    """Vectorised CF as a complex array.

    With ``alpha1_closed`` set, entries with ``|alpha - 1| <= 0.01`` use the
    closed alpha=1 expression instead of the general branch.
    """
    tau = np.asarray(tau, dtype=float)
    psi_re, psi_im = log_cf_arrays(alpha, beta, gamma, delta, tau)
    if alpha1_closed:
        c_re, c_im = _alpha1_log_cf(beta, gamma, delta, tau)
        near = np.abs(np.asarray(alpha, dtype=float) - 1.0) <= EPS_ALPHA
        psi_re = np.where(near, c_re, psi_re)
        psi_im = np.where(near, c_im, psi_im)
    out = np.exp(psi_re) * (np.cos(psi_im) + 1j * np.sin(psi_im))
    return np.where(np.abs(tau) < EPS_TAU, 1.0 + 0.0j, out)


def cf(params: StableParams, tau, alpha1_closed: bool = False):
    """Characteristic function ``E[exp(i*tau*X)]``; exactly 1 at ``tau = 0``."""
    out = cf_arrays(*params.as_tuple(), tau, alpha1_closed=alpha1_closed)
    return complex(out) if out.ndim == 0 else out


def _alpha1_log_cf(beta, gamma, delta, tau):
    u = np.abs(np.asarray(gamma, dtype=float) * tau)
    psi_re = np.maximum(-u, PSI_RE_FLOOR)
    psi_im = np.asarray(delta, dtype=float) * tau - u * np.asarray(beta, dtype=float) * np.sign(tau) * (2.0 / np.pi) * np.log(u + EPS_LN)
    return psi_re, psi_im


def cf_alpha1_closed(params: StableParams, tau):
    """Closed-form CF at alpha = 1: ``exp(-|g t|(1 + i b sgn(t) (2/pi) ln|g t|) + i d t)``.

    Only valid for ``|alpha - 1| <= 0.01``; alpha itself is ignored.
    """
    if abs(params.alpha - 1.0) > EPS_ALPHA:
        raise ValueError(f"closed alpha=1 form needs |alpha-1| <= {EPS_ALPHA}, got alpha={params.alpha}")
    tau = np.asarray(tau, dtype=float)
    psi_re, psi_im = _alpha1_log_cf(params.beta, params.gamma, params.delta, tau)
    out = np.exp(psi_re) * (np.cos(psi_im) + 1j * np.sin(psi_im))
    out = np.where(np.abs(tau) < EPS_TAU, 1.0 + 0.0j, out)
    return complex(out) if out.ndim == 0 else out
