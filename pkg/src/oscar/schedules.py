"""Time schedules for guidance strength gamma(t) and noise intensity beta(t)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigError, ZeroSupport

GAMMA_SHAPES = ("cos2", "t1mt")
BETA_FAMILIES = ("linfrac", "cos2", "poly", "expnorm", "power")
MONOTONE_FAMILIES = ("linfrac", "cos2", "poly", "expnorm")
SIMPSON_PANELS = 10_000


def _check_gate(gate) -> tuple[float, float]:
    t0, t1 = (float(g) for g in gate)
    if not 0.0 <= t0 < t1 <= 1.0:
        raise ConfigError(f"gate must satisfy 0 <= t0 < t1 <= 1, got {gate}")
    return t0, t1


@dataclass(frozen=True)
class GammaSchedule:
    gamma0: float = 0.12
    shape: str = "cos2"
    gate: tuple[float, float] = (0.05, 0.35)

    def __post_init__(self):
        if self.gamma0 < 0:
            raise ConfigError("gamma0 must be non-negative")
        if self.shape not in GAMMA_SHAPES:
            raise ConfigError(f"unknown gamma shape {self.shape!r}")
        object.__setattr__(self, "gate", _check_gate(self.gate))

    def __call__(self, t: float) -> float:
        return gamma_at(self, t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gate"] = list(self.gate)
        return d


@dataclass(frozen=True)
class BetaSchedule:
    family: str = "power"
    scale: float = 1.0
    gate: tuple[float, float] = (0.0, 1.0)
    eps_beta: float = 0.1  # linfrac
    p: float = 1.0  # poly, power
    kappa: float = 2.0  # expnorm

    def __post_init__(self):
        if self.family not in BETA_FAMILIES:
            raise ConfigError(f"unknown beta family {self.family!r}")
        if self.scale < 0:
            raise ConfigError("beta scale must be non-negative")
        if not 0.0 < self.eps_beta < 1.0:
            raise ConfigError("eps_beta must lie in (0, 1)")
        if self.family in ("poly", "power") and self.p < 1:
            raise ConfigError("exponent p must be >= 1")
        if not self.kappa > 0:
            raise ConfigError("kappa must be positive")
        object.__setattr__(self, "gate", _check_gate(self.gate))

    def __call__(self, t: float) -> float:
        return beta_at(self, t)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gate"] = list(self.gate)
        return d


def gamma_at(s: GammaSchedule, t: float) -> float:
    """Bell-shaped guidance strength, zero outside the gate and at its edges."""
    t0, t1 = s.gate
    if t < t0 or t > t1:
        return 0.0
    u = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
    if s.shape == "cos2":
        return s.gamma0 * np.sin(np.pi * u) ** 2
    return s.gamma0 * 4.0 * u * (1.0 - u)


def beta_base(family: str, t, eps_beta: float = 0.1, p: float = 1.0, kappa: float = 2.0):
    """Unscaled, ungated schedule shape beta_0(t); vectorised over ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if family == "linfrac":
        return (1.0 - t) / (1.0 - t + eps_beta)
    if family == "cos2":
        return np.cos(0.5 * np.pi * t) ** 2
    if family == "poly":
        return (1.0 - t) ** p
    if family == "expnorm":
        return (np.exp(-kappa * t) - np.exp(-kappa)) / (1.0 - np.exp(-kappa))
    if family == "power":
        return t**p
    raise ConfigError(f"unknown beta family {family!r}")


def _beta_vec(s: BetaSchedule, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    t0, t1 = s.gate
    val = s.scale * beta_base(s.family, t, s.eps_beta, s.p, s.kappa)
    return np.where((t >= t0) & (t <= t1), val, 0.0)


def beta_at(s: BetaSchedule, t: float) -> float:
    return float(_beta_vec(s, t))


def integrate_beta(s: BetaSchedule, panels: int = SIMPSON_PANELS) -> float:
    """Simpson integral of beta over [0, 1].

    The integrand is smooth inside the gate and zero outside, so only the gate
    interval is integrated.
    """
    t0, t1 = s.gate
    grid = np.linspace(t0, t1, panels + 1)
    return float(simpson(_beta_vec(s, grid), x=grid))


def normalize_budget(s: BetaSchedule, budget: float) -> BetaSchedule:
    """Rescale ``s`` so that its integral over [0, 1] equals ``budget``."""
    if budget < 0:
        raise ConfigError("noise budget must be non-negative")
    unit = integrate_beta(replace(s, scale=1.0))
    if not unit > 0:
        raise ZeroSupport(f"{s.family} schedule has no positive mass inside gate {s.gate}")
    return replace(s, scale=budget / unit)


def zero_beta() -> BetaSchedule:
    return BetaSchedule(family="power", scale=0.0)
