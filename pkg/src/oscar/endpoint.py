"""Endpoint prediction, feature encoders, and the VJP pullback chain."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFinite

ENCODER_KINDS = ("identity", "fixed-linear", "tanh-lift")


@dataclass(frozen=True)
class EndpointEstimate:
    endpoint: np.ndarray
    intermediate: np.ndarray  # Euler predictor state x + dt * v(x, t)
    v_start: np.ndarray
    v_end: np.ndarray
    t: float
    t_end: float

    def recombine(self, x: np.ndarray) -> np.ndarray:
        return x + 0.5 * (self.t_end - self.t) * (self.v_start + self.v_end)


def heun_endpoint(field, x, t: float, t_end: float = 1.0, v_start=None) -> EndpointEstimate:
    """One Heun step from ``t`` straight to ``t_end``.

    ``v_start`` may be passed when the caller already evaluated v(x, t).
    """
    if not 0.0 <= t <= t_end <= 1.0:
        raise ValueError(f"need 0 <= t <= t_end <= 1, got t={t}, t_end={t_end}")
    x = np.asarray(x, dtype=np.float64)
    dt = t_end - t
    v0 = field.velocity(x, t) if v_start is None else v_start
    xe = x + dt * v0
    v1 = field.velocity(xe, t_end)
    end = x + 0.5 * dt * (v0 + v1)
    if not np.all(np.isfinite(end)):
        raise NonFinite("non-finite endpoint estimate")
    return EndpointEstimate(end, xe, v0, v1, t, t_end)


def heun_endpoint_vjp(
    field, x, t: float, t_end: float, cotangent, through_predictor: bool = True, estimate=None
) -> np.ndarray:
    """(d psi / dx)^T @ cotangent for :func:`heun_endpoint`.

    ``through_predictor=False`` treats the corrector velocity as a function of
    the predictor state only (drops the ``dt * J1`` chain term), for ablations.
    """
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(cotangent, dtype=np.float64)
    dt = t_end - t
    if estimate is None:
        estimate = heun_endpoint(field, x, t, t_end)
    u = field.vjp(estimate.intermediate, t_end, c)  # J2^T c
    if through_predictor:
        return c + 0.5 * dt * u + 0.5 * dt * field.vjp(x, t, c + dt * u)
    back = c + 0.5 * dt * field.vjp(x, t, c)
    return back + 0.5 * dt * u


# --------------------------------------------------------------------------
# encoders


@dataclass
class EncoderSpec:
    kind: str = "tanh-lift"
    dim: int = 32  # output feature dimension D; ignored for identity
    seed: int = 0
    scale: float = 1.0  # spread of the random weights for tanh-lift
    input_dim: int = 2
    weight: np.ndarray | None = field(default=None, repr=False)
    bias: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        if self.kind == "identity":
            self.dim = self.input_dim
            return
        rng = np.random.default_rng(self.seed)
        if self.weight is None:
            w = rng.standard_normal((self.dim, self.input_dim))
            if self.kind == "fixed-linear":
                w /= np.linalg.norm(w, axis=1, keepdims=True)
            else:
                w *= self.scale
            self.weight = w
        else:
            self.weight = np.asarray(self.weight, dtype=np.float64)
            self.dim = self.weight.shape[0]
        if self.kind == "fixed-linear":
            norms = np.linalg.norm(self.weight, axis=1)
            if not np.allclose(norms, 1.0, rtol=0, atol=1e-12):
                raise ConfigError("fixed-linear encoder rows must have unit norm")
        if self.kind == "tanh-lift" and self.bias is None:
            self.bias = rng.uniform(-1.0, 1.0, size=self.dim)
        elif self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed, "scale": self.scale}


def encode(enc: EncoderSpec, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if enc.kind == "identity":
        return u.copy()
    if enc.kind == "fixed-linear":
        return u @ enc.weight.T
    return np.tanh(u @ enc.weight.T + enc.bias)


def encode_vjp(enc: EncoderSpec, u, cotangent) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    c = np.asarray(cotangent, dtype=np.float64)
    if enc.kind == "identity":
        return c.copy()
    if enc.kind == "fixed-linear":
        return c @ enc.weight
    z = np.tanh(u @ enc.weight.T + enc.bias)
    return (c * (1.0 - z * z)) @ enc.weight


def pullback_control(
    field,
    enc: EncoderSpec,
    particles,
    t: float,
    t_end: float,
    feature_grad,
    through_predictor: bool = True,
    estimate: EndpointEstimate | None = None,
) -> np.ndarray:
    """Pull per-particle feature gradients back to state space.

    Row i is ``J_psi(x_i)^T J_phi(psi(x_i))^T feature_grad[i]``. Rows are
    independent; all of them are evaluated in one batched call.
    """
    x = np.asarray(particles, dtype=np.float64)
    gz = np.asarray(feature_grad, dtype=np.float64)
    if gz.shape[0] != x.shape[0]:
        raise ValueError(f"feature gradient has {gz.shape[0]} rows for {x.shape[0]} particles")
    if estimate is None:
        estimate = heun_endpoint(field, x, t, t_end)
    cot = encode_vjp(enc, estimate.endpoint, gz)
    return heun_endpoint_vjp(field, x, t, t_end, cot, through_predictor, estimate)


def endpoint_features(field, enc: EncoderSpec, x, t: float, t_end: float = 1.0) -> np.ndarray:
    """Z with rows phi(psi(x_i, t))."""
    return encode(enc, heun_endpoint(field, x, t, t_end).endpoint)
