"""Trace-stabilised log-det set energy over endpoint features.

For a feature matrix Z (m x D) with Gram K = Z Z^T and leverage weights w,

    K~    = W^1/2 K W^1/2
    eps_tr = eps * tr(K~) / m
    A     = I + tau * K~ + eps_tr * I
    E_s   = -1/2 log det A = -log V

Lower energy means a larger spanned volume, i.e. a more spread-out set.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NotPositiveDefinite
from .numerics import cholesky, psd_inverse, spd_inverse, sym_eig


@dataclass(frozen=True)
class EnergyConfig:
    tau: float = 1.0
    eps: float = 1e-3
    alpha: float = 0.5
    ridge: float = 1e-3
    freeze_weights: bool = True
    freeze_stabilizer: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not self.eps > 0:
            raise ConfigError("eps must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if not self.ridge > 0:
            raise ConfigError("ridge must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyReport:
    energy: float
    volume_log: float
    weights: np.ndarray
    leverage: np.ndarray
    eps_tr: float
    gram_spectrum: np.ndarray | None = None


def gram(z) -> np.ndarray:
    """K = Z Z^T, mirrored from the upper triangle so it is exactly symmetric."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    k = z @ z.T
    upper = np.triu(k)
    return upper + np.triu(k, 1).T


def leverage_weights(k, cfg: EnergyConfig) -> tuple[np.ndarray, np.ndarray]:
    """Leverage scores s_i = [(K + ridge I)^-1]_ii and weights w ∝ s^alpha."""
    k = np.asarray(k, dtype=np.float64)
    s = np.diag(psd_inverse(k, cfg.ridge)).copy()
    if cfg.alpha == 0.0:
        m = s.shape[0]
        return s, np.full(m, 1.0 / m)
    p = s**cfg.alpha
    return s, p / p.sum()


def _reweight(k: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = np.sqrt(w)
    kt = r[:, None] * k * r[None, :]
    return np.triu(kt) + np.triu(kt, 1).T


def _stabilized(kt: np.ndarray, cfg: EnergyConfig, eps_tr: float | None):
    m = kt.shape[0]
    if eps_tr is None:
        eps_tr = cfg.eps * np.trace(kt) / m
    a = cfg.tau * kt
    a[np.diag_indices(m)] += 1.0 + eps_tr
    return a, float(eps_tr)


def set_energy(
    z,
    cfg: EnergyConfig,
    weights=None,
    eps_tr: float | None = None,
    spectrum: bool = False,
) -> EnergyReport:
    """Evaluate E_s and log V.

    ``weights`` and ``eps_tr`` override the values derived from ``z``; the
    frozen-objective oracles use this to hold them fixed while ``z`` moves.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    k = gram(z)
    s, w = leverage_weights(k, cfg)
    if weights is not None:
        w = np.asarray(weights, dtype=np.float64)
    a, eps_tr = _stabilized(_reweight(k, w), cfg, eps_tr)
    try:
        lower = cholesky(a)
    except NotPositiveDefinite as exc:  # I + PSD cannot fail for valid input
        raise RuntimeError("stabilised Gram matrix is not positive definite") from exc
    log_volume = float(np.sum(np.log(np.diag(lower))))
    spec = sym_eig(a).eigenvalues if spectrum else None
    return EnergyReport(-log_volume, log_volume, w, s, eps_tr, spec)


def energy_grad(z, cfg: EnergyConfig, weights=None, eps_tr: float | None = None) -> np.ndarray:
    """Gradient of :func:`set_energy` with respect to Z.

    With both freeze flags set this is ``-tau W^1/2 A^-1 W^1/2 Z``. Clearing
    a flag adds the chain-rule term through the stabiliser or the weights.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    m = z.shape[0]
    k = gram(z)
    s, w = leverage_weights(k, cfg)
    fixed_w = weights is not None
    if fixed_w:
        w = np.asarray(weights, dtype=np.float64)
    fixed_eps = eps_tr is not None or cfg.freeze_stabilizer
    a, eps_tr = _stabilized(_reweight(k, w), cfg, eps_tr)
    a_inv = spd_inverse(a)
    r = np.sqrt(w)
    ds = -0.5 * cfg.tau * a_inv  # dE/dK~
    if not fixed_eps:
        ds = ds - 0.5 * cfg.eps / m * np.trace(a_inv) * np.eye(m)
    g_k = r[:, None] * ds * r[None, :]
    if not (fixed_w or cfg.freeze_weights or cfg.alpha == 0.0):
        g_r = 2.0 * np.einsum("ij,j,ji->i", k, r, ds)  # dE/d sqrt(w_i)
        g_w = g_r / (2.0 * r)
        g_s = cfg.alpha * w / s * (g_w - g_w @ w)
        m_inv = psd_inverse(k, cfg.ridge)
        g_k = g_k - (m_inv * g_s) @ m_inv
    return (g_k + g_k.T) @ z

