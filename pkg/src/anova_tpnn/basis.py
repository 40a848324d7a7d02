"""Sum-to-zero sigmoid basis functions and their tensor products.

A main-effect basis is

    phi(x | b, gamma) = (1 - s) + c * s,   s = sigmoid((x - b) / gamma),

with ``c = -(1 - eta) / eta`` and ``eta`` the mean of ``s`` under the
reference measure, so ``phi`` integrates to zero. Since ``1 - c = 1 / eta``
this is evaluated as ``1 - s / eta``.

The default reference measure is uniform on [0, 1] (inputs are
rank-transformed), for which

    eta = gamma * (softplus((1 - b) / gamma) - softplus(-b / gamma)).

``gamma`` is kept positive through ``gamma = softplus(rho) + GAMMA_MIN``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError

GAMMA_MIN = 1e-3
ETA_EPS = 1e-6


def sigmoid(z):
    return expit(z)


def softplus(z):
    """ln(1 + e^z), computed as max(z, 0) + ln(1 + e^-|z|)."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def gamma_from_rho(rho):
    return softplus(rho) + GAMMA_MIN


def rho_from_gamma(gamma):
    y = np.asarray(gamma, dtype=np.float64) - GAMMA_MIN
    if np.any(y <= 0):
        raise ConfigError(f"gamma must exceed GAMMA_MIN={GAMMA_MIN}")
    # inverse softplus, stable for large y
    return y + np.log(-np.expm1(-y))


def eta_uniform(b, gamma, grad: bool = False):
    """Mean of sigmoid((x - b)/gamma) for x ~ U(0, 1), clamped to [eps, 1 - eps].

    With ``grad=True`` also returns ``(d eta/d b, d eta/d gamma)``; both are
    zero wherever the clamp is active.
    """
    b = np.asarray(b, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    u1 = (1.0 - b) / gamma
    u0 = -b / gamma
    raw = gamma * (softplus(u1) - softplus(u0))
    eta = np.clip(raw, ETA_EPS, 1.0 - ETA_EPS)
    if not grad:
        return eta
    inside = (raw > ETA_EPS) & (raw < 1.0 - ETA_EPS)
    s1, s0 = expit(u1), expit(u0)
    d_b = np.where(inside, s0 - s1, 0.0)
    d_g = np.where(inside, raw / gamma - s1 * u1 + s0 * u0, 0.0)
    return eta, d_b, d_g


def eta_empirical(b, gamma, samples, grad: bool = False):
    """Mean of the sigmoid over a finite sample of the feature.

    ``b`` and ``gamma`` broadcast together to shape ``A``; ``samples`` has
    shape ``A + (m,)`` or ``(m,)``.
    """
    b = np.asarray(b, dtype=np.float64)[..., None]
    gamma = np.asarray(gamma, dtype=np.float64)[..., None]
    z = (np.asarray(samples, dtype=np.float64) - b) / gamma
    s = expit(z)
    raw = s.mean(axis=-1)
    eta = np.clip(raw, ETA_EPS, 1.0 - ETA_EPS)
    if not grad:
        return eta
    inside = (raw > ETA_EPS) & (raw < 1.0 - ETA_EPS)
    ds = s * (1.0 - s)
    d_b = np.where(inside, -(ds / gamma).mean(axis=-1), 0.0)
    d_g = np.where(inside, -(ds * z / gamma).mean(axis=-1), 0.0)
    return eta, d_b, d_g


def phi_values(x, b, gamma, eta):
    """Elementwise basis value ``1 - sigmoid((x - b)/gamma) / eta``."""
    return 1.0 - expit((x - b) / gamma) / eta


@dataclass(frozen=True)
class BasisParam:
    """Location ``b`` and unconstrained width parameter ``rho`` of one basis."""

    b: float
    rho: float

    @property
    def gamma(self) -> float:
        return float(gamma_from_rho(self.rho))

    @classmethod
    def from_gamma(cls, b: float, gamma: float) -> "BasisParam":
        return cls(float(b), float(rho_from_gamma(gamma)))


def eta(p: BasisParam) -> float:
    return float(eta_uniform(p.b, p.gamma))


def c_coef(p: BasisParam) -> float:
    e = eta(p)
    return -(1.0 - e) / e


def phi_main(x, p: BasisParam):
    """Evaluate the main-effect basis at ``x`` (scalar or array)."""
    g = p.gamma
    out = phi_values(np.asarray(x, dtype=np.float64), p.b, g, eta_uniform(p.b, g))
    return float(out) if np.ndim(out) == 0 else out


def phi_tensor(x_S, thetas) -> float:
    """Product of main-effect bases, one ``BasisParam`` per coordinate."""
    x_S = np.atleast_1d(np.asarray(x_S, dtype=np.float64))
    thetas = list(thetas)
    if x_S.shape[-1] != len(thetas):
        raise ConfigError(f"arity mismatch: {x_S.shape[-1]} inputs for {len(thetas)} bases")
    out = 1.0
    for j, p in enumerate(thetas):
        out = out * phi_main(x_S[..., j], p)
    return out


def phi_grad(x, p: BasisParam):
    """Analytic ``(d phi/d b, d phi/d rho)`` at ``x``.

    Includes the dependence of ``eta`` on ``(b, gamma)``.
    """
    x = np.asarray(x, dtype=np.float64)
    g = gamma_from_rho(p.rho)
    e, de_db, de_dg = eta_uniform(p.b, g, grad=True)
    z = (x - p.b) / g
    s = expit(z)
    ratio = s / e
    d_b = ratio * ((1.0 - s) / g + de_db / e)
    d_g = ratio * ((1.0 - s) * z / g + de_dg / e)
    d_rho = d_g * expit(p.rho)
    if np.ndim(d_b) == 0:
        return float(d_b), float(d_rho)
    return d_b, d_rho
