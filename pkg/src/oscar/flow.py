"""Velocity fields for rectified flow on toy targets.

Time convention used throughout the package: ``t = 0`` is noise and ``t = 1``
is data, with the straight-line interpolation

    x_t = (1 - t) * x0 + t * x1,   x0 ~ N(0, I),  x1 ~ target

and the regression target ``x1 - x0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DegenerateTime, DivergedLoss

TIME_CONVENTION = "t0-noise_t1-data_linear"
VARIANCE_FLOOR = 1e-12


class VelocityField(Protocol):
    """Anything the samplers can integrate: value and state-Jacobian VJP.

    ``x`` has shape ``(..., d)``; ``t`` is a scalar time shared by the batch.
    """

    dim: int

    def velocity(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray: ...


# --------------------------------------------------------------------------
# Gaussian mixture targets


@dataclass(frozen=True)
class GmmSpec:
    means: np.ndarray  # (K, d)
    stds: np.ndarray  # (K,)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        stds = np.asarray(self.stds, dtype=np.float64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if means.shape[0] < 1:
            raise ValueError("a GMM needs at least one component")
        if stds.size == 1 and means.shape[0] > 1:
            stds = np.full(means.shape[0], stds[0])
        if stds.shape[0] != means.shape[0] or weights.shape[0] != means.shape[0]:
            raise ValueError("means, stds and weights disagree on the component count")
        if np.any(stds <= 0):
            raise ValueError("component stds must be positive")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def conditioned(self, condition: int | None) -> "GmmSpec":
        """Label 0 (or None) keeps every mode; label k >= 1 keeps mode k - 1 only."""
        if condition is None or condition == 0:
            return self
        k = int(condition) - 1
        if not 0 <= k < self.n_components:
            raise ValueError(f"condition {condition} outside 0..{self.n_components}")
        return GmmSpec(self.means[k : k + 1], self.stds[k : k + 1], np.ones(1))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + self.stds[comp, None] * noise

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GmmSpec":
        unknown = set(data) - {"means", "stds", "weights"}
        if unknown:
            raise ConfigError(f"unknown GMM keys: {sorted(unknown)}")
        means = np.asarray(data["means"], dtype=np.float64)
        weights = data.get("weights")
        if weights is None:
            weights = np.full(len(means), 1.0 / len(means))
        return cls(means, np.asarray(data["stds"], dtype=np.float64), np.asarray(weights))


def grid_gmm(n: int = 3, spacing: float = 3.0, std: float = 0.25) -> GmmSpec:
    """n x n grid of equal-weight isotropic modes centred on the origin."""
    offsets = (np.arange(n) - (n - 1) / 2.0) * spacing
    means = np.array([(a, b) for a in offsets for b in offsets])
    k = len(means)
    return GmmSpec(means, np.full(k, std), np.full(k, 1.0 / k))


def ring_gmm(n_modes: int = 12, radius: float = 4.0, std: float = 0.2) -> GmmSpec:
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GmmSpec(means, np.full(n_modes, std), np.full(n_modes, 1.0 / n_modes))


def single_gaussian(mean=(1.5, -1.0), std: float = 0.5) -> GmmSpec:
    return GmmSpec(np.atleast_2d(np.asarray(mean, dtype=np.float64)), np.array([std]), np.ones(1))


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DegenerateTime(f"time {t} outside [0, 1]")
    return t


def _gmm_terms(spec: GmmSpec, x: np.ndarray, t: float):
    s = np.maximum((1.0 - t) ** 2 + t * t * spec.stds**2, VARIANCE_FLOOR)  # (K,)
    diff = x[..., None, :] - t * spec.means  # (..., K, d)
    with np.errstate(divide="ignore"):
        log_w = np.log(spec.weights)
    logits = log_w - 0.5 * spec.dim * np.log(s) - 0.5 * np.sum(diff * diff, axis=-1) / s
    resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))  # (..., K)
    coef = (t * spec.stds**2 - (1.0 - t)) / s  # (K,)
    per_comp = spec.means + coef[:, None] * diff  # (..., K, d)
    return s, diff, resp, coef, per_comp


def gmm_velocity(spec: GmmSpec, x, t: float) -> np.ndarray:
    """Exact rectified-flow velocity E[x1 - x0 | x_t = x] for a GMM target."""
    t = _check_time(t)
    x = np.asarray(x, dtype=np.float64)
    _, _, resp, _, per_comp = _gmm_terms(spec, x, t)
    return np.einsum("...k,...kd->...d", resp, per_comp)


def gmm_velocity_vjp(spec: GmmSpec, x, t: float, cotangent) -> np.ndarray:
    """(dv/dx)^T @ cotangent for :func:`gmm_velocity`, analytically."""
    t = _check_time(t)
    x = np.asarray(x, dtype=np.float64)
    w = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), x.shape)
    s, diff, resp, coef, per_comp = _gmm_terms(spec, x, t)
    # responsibilities are a softmax of logits whose x-gradient is -diff/s
    grad_logit = -diff / s[:, None]
    centred = grad_logit - np.einsum("...k,...kd->...d", resp, grad_logit)[..., None, :]
    proj = np.einsum("...kd,...d->...k", per_comp, w)
    linear = np.einsum("...k,k->...", resp, coef)[..., None] * w
    return linear + np.einsum("...k,...kd->...d", resp * proj, centred)


class GmmField:
    def __init__(self, spec: GmmSpec, condition: int | None = None):
        self.base = spec
        self.spec = spec.conditioned(condition)
        self.condition = condition
        self.dim = spec.dim

    def velocity(self, x, t):
        return gmm_velocity(self.spec, x, t)

    def vjp(self, x, t, cotangent):
        return gmm_velocity_vjp(self.spec, x, t, cotangent)


class ConstantField:
    """v(x, t) = a everywhere."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=np.float64)
        self.dim = self.a.shape[0]

    def velocity(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(self.a, x.shape).copy()

    def vjp(self, x, t, cotangent):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(cotangent)))


class LinearField:
    """v(x, t) = A x + b (time independent)."""

    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        self.dim = self.matrix.shape[0]
        self.offset = np.zeros(self.dim) if offset is None else np.asarray(offset, dtype=np.float64)

    def velocity(self, x, t):
        return np.asarray(x, dtype=np.float64) @ self.matrix.T + self.offset

    def vjp(self, x, t, cotangent):
        return np.asarray(cotangent, dtype=np.float64) @ self.matrix


# --------------------------------------------------------------------------
# Small tanh MLP


@dataclass
class MlpVelocity:
    dim: int
    hidden: tuple[int, ...]
    n_conditions: int = 0
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)
    seed: int = 0

    @property
    def widths(self) -> list[int]:
        return [self.dim + 1 + self.n_conditions, *self.hidden, self.dim]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpVelocity":
        return MlpVelocity(
            self.dim,
            tuple(self.hidden),
            self.n_conditions,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "widths": self.widths,
            "dim": self.dim,
            "hidden": list(self.hidden),
            "n_conditions": self.n_conditions,
            "seed": self.seed,
            "activation": "tanh",
            "time_convention": TIME_CONVENTION,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpVelocity":
        if data.get("time_convention", TIME_CONVENTION) != TIME_CONVENTION:
            raise ConfigError(f"checkpoint uses time convention {data['time_convention']!r}")
        model = cls(int(data["dim"]), tuple(data["hidden"]), int(data["n_conditions"]), seed=int(data["seed"]))
        widths = model.widths
        if list(data["widths"]) != widths:
            raise ConfigError(f"checkpoint widths {data['widths']} do not match {widths}")
        model.weights = [
            np.asarray(w, dtype=np.float64).reshape(widths[i + 1], widths[i]) for i, w in enumerate(data["weights"])
        ]
        model.biases = [np.asarray(b, dtype=np.float64) for b in data["biases"]]
        return model


def init_mlp(dim: int, hidden: Sequence[int] = (128, 128), n_conditions: int = 0, seed: int = 0) -> MlpVelocity:
    model = MlpVelocity(dim, tuple(hidden), n_conditions, seed=seed)
    rng = np.random.default_rng(seed)
    widths = model.widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        model.weights.append(rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in))
        model.biases.append(np.zeros(fan_out))
    return model


def zero_mlp(dim: int, hidden: Sequence[int] = (128, 128), n_conditions: int = 0) -> MlpVelocity:
    model = init_mlp(dim, hidden, n_conditions)
    model.weights = [np.zeros_like(w) for w in model.weights]
    return model


def _mlp_input(model: MlpVelocity, x: np.ndarray, t, c) -> np.ndarray:
    lead = x.shape[:-1]
    tt = np.broadcast_to(np.asarray(t, dtype=np.float64), lead)[..., None]
    onehot = np.zeros(lead + (model.n_conditions,))
    if c is None and model.n_conditions:
        c = 0  # label 0 is the whole mixture
    if c is not None:
        if model.n_conditions == 0:
            raise ValueError("unconditional model given a condition label")
        labels = np.broadcast_to(np.asarray(c, dtype=np.intp), lead)
        if np.any(labels < 0) or np.any(labels >= model.n_conditions):
            raise ValueError(f"condition outside 0..{model.n_conditions - 1}")
        np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return np.concatenate([x, tt, onehot], axis=-1)


def _forward(model: MlpVelocity, inp: np.ndarray):
    acts = [inp]
    h = inp
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def mlp_forward(model: MlpVelocity, x, t, c=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return _forward(model, _mlp_input(model, x, t, c))[-1]


def _backward_to_input(model: MlpVelocity, acts, grad_out: np.ndarray, param_grads: bool = False):
    g = grad_out
    gw, gb = [], []
    for i in range(len(model.weights) - 1, -1, -1):
        if i < len(model.weights) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        if param_grads:
            flat_g = g.reshape(-1, g.shape[-1])
            gw.append(flat_g.T @ acts[i].reshape(-1, acts[i].shape[-1]))
            gb.append(flat_g.sum(axis=0))
        g = g @ model.weights[i]
    return g, gw[::-1], gb[::-1]


def mlp_vjp(model: MlpVelocity, x, t, c, cotangent) -> np.ndarray:
    """(dv/dx)^T @ cotangent by a manual backward pass; parameters held fixed."""
    x = np.asarray(x, dtype=np.float64)
    acts = _forward(model, _mlp_input(model, x, t, c))
    cot = np.broadcast_to(np.asarray(cotangent, dtype=np.float64), acts[-1].shape)
    g, _, _ = _backward_to_input(model, acts, cot)
    return g[..., : model.dim]


class MlpField:
    def __init__(self, model: MlpVelocity, condition: int | None = None):
        self.model = model
        self.condition = condition
        self.dim = model.dim

    def velocity(self, x, t):
        return mlp_forward(self.model, x, t, self.condition)

    def vjp(self, x, t, cotangent):
        return mlp_vjp(self.model, x, t, self.condition, cotangent)


@dataclass
class _Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def update(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_flow(
    spec: GmmSpec,
    model: MlpVelocity,
    steps: int = 5000,
    batch: int = 256,
    lr: float = 3e-3,
    seed: int = 0,
    final_lr_frac: float = 0.02,
) -> tuple[MlpVelocity, np.ndarray]:
    """Fit ``model`` to the rectified-flow regression target ``x1 - x0``.

    Returns a trained copy and the per-step loss (batch mean of squared
    error norms). Conditional models draw a label uniformly from
    ``0..n_conditions-1`` per example, with label semantics from
    :meth:`GmmSpec.conditioned`. The step size follows a cosine decay from
    ``lr`` to ``lr * final_lr_frac``.
    """
    model = model.copy()
    rng = np.random.default_rng(seed)
    opt = _Adam(lr)
    losses = np.empty(steps)
    d = spec.dim
    for step in range(steps):
        x0 = rng.standard_normal((batch, d))
        t = rng.uniform(0.0, 1.0, size=batch)
        if model.n_conditions:
            labels = rng.integers(0, model.n_conditions, size=batch)
            x1 = np.empty((batch, d))
            for lab in np.unique(labels):
                idx = np.flatnonzero(labels == lab)
                x1[idx] = spec.conditioned(int(lab)).sample(idx.size, rng)
        else:
            labels = None
            x1 = spec.sample(batch, rng)
        xt = (1.0 - t[:, None]) * x0 + t[:, None] * x1
        acts = _forward(model, _mlp_input(model, xt, t, labels))
        resid = acts[-1] - (x1 - x0)
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise DivergedLoss(step, loss)
        losses[step] = loss
        _, gw, gb = _backward_to_input(model, acts, 2.0 * resid / batch, param_grads=True)
        frac = final_lr_frac + (1.0 - final_lr_frac) * 0.5 * (1.0 + np.cos(np.pi * step / steps))
        opt.update(model.weights + model.biases, gw + gb, lr * frac)
    return model, losses


def grid_rmse(field, spec: GmmSpec, times=(0.1, 0.3, 0.5, 0.7, 0.9), n: int = 10) -> np.ndarray:
    """RMSE of ``field`` against the analytic field of ``spec`` per time.

    Each time uses an n x n grid spanning +-2 std of the x_t marginal around
    its mean (mixture mean and pooled spread), so the probes sit where the
    flow actually carries mass.
    """
    out = []
    for t in times:
        mean = t * (spec.weights @ spec.means)
        var = (1.0 - t) ** 2 + t * t * (spec.weights @ spec.stds**2)
        spread = t * t * (spec.weights @ np.sum((spec.means - spec.weights @ spec.means) ** 2, axis=1)) / spec.dim
        half = 2.0 * np.sqrt(var + spread)
        axes = [np.linspace(c - half, c + half, n) for c in mean]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
        diff = field.velocity(pts, t) - gmm_velocity(spec, pts, t)
        out.append(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))
    return np.array(out)


def save_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_checkpoint(path: str | Path) -> MlpVelocity:
    """Model from a bare model JSON or a training checkpoint with a ``model`` entry."""
    data = json.loads(Path(path).read_text())
    return MlpVelocity.from_dict(data.get("model", data))


def load_gmm(path: str | Path) -> GmmSpec:
    return GmmSpec.from_dict(json.loads(Path(path).read_text()))
