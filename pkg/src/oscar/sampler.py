"""Orthogonally-projected, trust-capped controlled Heun sampler and its baseline.

Each step of :func:`oscar_step`:

1. base velocity v_i = v(x_i, t)
2. one-step Heun endpoint psi(x_i, t), features z_i = phi(psi)
3. leverage weights, log-det energy gradient on the reweighted Gram
4. pull the feature gradient back to state space (g_i)
5. partial projection of g_i off v_i, then trust-region cap
6. partially-orthogonal Gaussian noise scaled by sqrt(beta(t) |dt|)
7. Heun predictor/corrector on v - gamma(t) g with the same g at both stages,
   noise added once after the average
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .endpoint import EncoderSpec, encode, heun_endpoint, pullback_control
from .energy import EnergyConfig, energy_grad, set_energy
from .errors import ConfigError, NonFinite
from .schedules import BetaSchedule, GammaSchedule, zero_beta

NoiseFn = Callable[[int, int, int], np.ndarray]  # (step, m, d) -> (m, d) standard normals
ControlHook = Callable[[np.ndarray, np.ndarray], np.ndarray]  # (g_applied, v) -> g_applied


@dataclass(frozen=True)
class SamplerConfig:
    gamma: GammaSchedule = field(default_factory=GammaSchedule)
    beta: BetaSchedule = field(default_factory=lambda: BetaSchedule("power", 1.0, (0.05, 0.35), p=1.0))
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    encoder: EncoderSpec = field(default_factory=lambda: EncoderSpec("tanh-lift", dim=32, seed=0, scale=0.5))
    lam: float = 0.95
    noise_lam: float = 0.95
    # projection/cap regulariser; the parallel leftover of a full projection is
    # about delta / |v|^2, kept far below 1e-6 down to vnorm_threshold
    delta: float = 1e-16
    trust_ratio: float = 0.3
    vnorm_threshold: float = 1e-4
    steps: int = 100
    time_grid: tuple[float, ...] | None = None
    particles: int = 64
    seed: int = 0
    t_end: float = 1.0
    through_predictor: bool = True

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0 and 0.0 <= self.noise_lam <= 1.0):
            raise ConfigError("lam and noise_lam must lie in [0, 1]")
        if not self.delta > 0 or not self.trust_ratio > 0:
            raise ConfigError("delta and trust_ratio must be positive")
        if self.steps < 0 or self.particles < 1:
            raise ConfigError("steps must be >= 0 and particles >= 1")
        if self.time_grid is not None:
            grid = np.asarray(self.time_grid, dtype=np.float64)
            if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or grid[0] != 0.0 or (len(grid) > 1 and grid[-1] != 1.0):
                raise ConfigError("time grid must be strictly increasing from 0 to 1")
            object.__setattr__(self, "time_grid", tuple(float(g) for g in grid))
            object.__setattr__(self, "steps", len(grid) - 1)

    def grid(self) -> np.ndarray:
        if self.time_grid is not None:
            return np.asarray(self.time_grid)
        if self.steps == 0:
            return np.zeros(1)
        return np.linspace(0.0, 1.0, self.steps + 1)

    def zero_control(self) -> "SamplerConfig":
        """Same config with guidance and noise switched off."""
        return replace(self, gamma=replace(self.gamma, gamma0=0.0), beta=zero_beta())

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.to_dict(),
            "beta": self.beta.to_dict(),
            "energy": self.energy.to_dict(),
            "encoder": self.encoder.to_dict(),
            "lam": self.lam,
            "noise_lam": self.noise_lam,
            "delta": self.delta,
            "trust_ratio": self.trust_ratio,
            "vnorm_threshold": self.vnorm_threshold,
            "steps": self.steps,
            "time_grid": None if self.time_grid is None else list(self.time_grid),
            "particles": self.particles,
            "seed": self.seed,
            "t_end": self.t_end,
            "through_predictor": self.through_predictor,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ParticleSet:
    states: np.ndarray  # (m, d)
    time: float = 0.0
    step: int = 0
    seed: int = 0
    condition: int | None = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if not np.all(np.isfinite(self.states)):
            raise NonFinite("non-finite particle states", self.step)


@dataclass
class StepRecord:
    step: int
    t: float
    energy: float
    log_volume: float
    alignment: np.ndarray  # y_i = <x_i, v_i / (|v_i| + delta)>
    orth_residual: np.ndarray  # |<g_app, v>| / (|g_app| |v|), 0 where no control
    noise_orth_residual: np.ndarray
    trust_usage: np.ndarray  # |applied control displacement| / (ratio |v| |dt|)
    active: np.ndarray  # |v_i| >= vnorm_threshold
    gamma: float
    beta_step: float
    state_checksum: str
    noise_key: tuple[int, int]

    def summary(self) -> dict:
        return {
            "step": self.step,
            "t": self.t,
            "energy": self.energy,
            "log_volume": self.log_volume,
            "max_orth_residual": _safe_max(self.orth_residual[self.active]),
            "max_noise_orth_residual": _safe_max(self.noise_orth_residual[self.active]),
            "max_trust_usage": _safe_max(self.trust_usage),
            "mean_alignment": float(np.mean(self.alignment)),
            "gamma": self.gamma,
            "beta_step": self.beta_step,
            "state_checksum": self.state_checksum,
            "noise_key": list(self.noise_key),
        }


def _safe_max(a: np.ndarray) -> float:
    return float(np.max(a)) if a.size else 0.0


@dataclass
class RunTrace:
    method: str
    seed: int
    config_hash: str
    records: list[StepRecord] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    initial: np.ndarray | None = None
    final: np.ndarray | None = None
    n_steps: int = 0

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def checksum(self) -> str:
        return state_checksum(self.final)

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                row = {"config_hash": self.config_hash, "seed": self.seed, "method": self.method}
                row.update(rec.summary())
                fh.write(json.dumps(row) + "\n")


def state_checksum(states: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(states, dtype=np.float64).tobytes()).hexdigest()[:16]


# --------------------------------------------------------------------------
# random numbers


def counter_normals(seed: int, step: int, particle: int, d: int) -> np.ndarray:
    """Standard normals for one (seed, step, particle) cell.

    Philox is counter based: the cell indices sit in the high counter words,
    so streams never overlap and do not depend on evaluation order.
    """
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, int(particle), int(step)])
    return np.random.Generator(bitgen).standard_normal(d)


def default_noise(seed: int) -> NoiseFn:
    def draw(step: int, m: int, d: int) -> np.ndarray:
        return np.stack([counter_normals(seed, step, i, d) for i in range(m)])

    return draw


def initial_noise(seed: int, m: int, d: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((m, d))


def initial_disk(seed: int, m: int, radius: float = 1.0) -> np.ndarray:
    """Uniform samples from a 2-D disk."""
    rng = np.random.default_rng(seed)
    r = radius * np.sqrt(rng.uniform(size=m))
    a = rng.uniform(0.0, 2.0 * np.pi, size=m)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


# --------------------------------------------------------------------------
# safeguards


def project_partial(g, v, lam: float, delta: float) -> np.ndarray:
    """g - lam * <g, v> / (|v|^2 + delta) * v, row-wise."""
    g = np.asarray(g, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    coef = lam * np.sum(g * v, axis=-1) / (np.sum(v * v, axis=-1) + delta)
    return g - coef[..., None] * v


def cap_trust(g, v, ratio: float, eps: float) -> np.ndarray:
    """Scale g by min(1, ratio |v| / (|g| + eps)), row-wise."""
    g = np.asarray(g, dtype=np.float64)
    gn = np.linalg.norm(g, axis=-1)
    vn = np.linalg.norm(np.asarray(v, dtype=np.float64), axis=-1)
    return g * np.minimum(1.0, ratio * vn / (gn + eps))[..., None]


def orth_noise(v, noise_lam: float, beta_step: float, xi, delta: float = 1e-16, active=None) -> np.ndarray:
    """sqrt(beta_step) * (xi partially projected off v).

    ``xi`` is the raw standard-normal draw (from :func:`counter_normals` or a
    custom source); rows with ``active`` False are left unprojected.
    """
    xi = np.asarray(xi, dtype=np.float64)
    if beta_step <= 0.0:
        return np.zeros_like(xi)
    proj = project_partial(xi, v, noise_lam, delta)
    if active is not None:
        proj = np.where(np.asarray(active)[..., None], proj, xi)
    return np.sqrt(beta_step) * proj


def _cos_residual(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    an = np.linalg.norm(a, axis=-1)
    vn = np.linalg.norm(v, axis=-1)
    denom = an * vn
    out = np.zeros(a.shape[0])
    ok = denom > 0
    out[ok] = np.abs(np.sum(a[ok] * v[ok], axis=-1)) / denom[ok]
    return out


# --------------------------------------------------------------------------
# steps


def _observe_energy(cfg: SamplerConfig, z: np.ndarray):
    return set_energy(z, cfg.energy)


def _alignment(x, v, delta):
    vhat = v / (np.linalg.norm(v, axis=-1, keepdims=True) + delta)
    return np.sum(x * vhat, axis=-1)


def observe(ps: ParticleSet, cfg: SamplerConfig, field) -> StepRecord:
    """Record energy and alignment at the current state without stepping."""
    x, t = ps.states, ps.time
    v = field.velocity(x, t)
    t_end = max(cfg.t_end, t)
    z = encode(cfg.encoder, heun_endpoint(field, x, t, t_end, v_start=v).endpoint)
    rep = _observe_energy(cfg, z)
    m = x.shape[0]
    zeros = np.zeros(m)
    return StepRecord(
        ps.step, t, rep.energy, rep.volume_log, _alignment(x, v, cfg.delta), zeros, zeros.copy(), zeros.copy(),
        np.linalg.norm(v, axis=-1) >= cfg.vnorm_threshold, 0.0, 0.0, state_checksum(x), (ps.seed, ps.step),
    )


def oscar_step(
    ps: ParticleSet,
    cfg: SamplerConfig,
    field,
    ell: int,
    grid=None,
    noise: NoiseFn | None = None,
    control_hook: ControlHook | None = None,
) -> tuple[ParticleSet, StepRecord]:
    """Advance every particle by one controlled Heun step.

    ``control_hook`` rewrites the applied control before it enters the
    update; it exists for fault injection in the verification harness.
    """
    grid = cfg.grid() if grid is None else grid
    if not 0 <= ell < len(grid) - 1:
        raise ValueError(f"step index {ell} outside grid with {len(grid) - 1} steps")
    t, t_next = float(grid[ell]), float(grid[ell + 1])
    dt = t_next - t
    x = ps.states
    m, d = x.shape
    noise = default_noise(ps.seed) if noise is None else noise

    v = field.velocity(x, t)
    vn = np.linalg.norm(v, axis=-1)
    active = vn >= cfg.vnorm_threshold
    est = heun_endpoint(field, x, t, cfg.t_end, v_start=v)
    z = encode(cfg.encoder, est.endpoint)
    rep = set_energy(z, cfg.energy)

    gam0, gam1 = cfg.gamma(t), cfg.gamma(t_next)
    if gam0 > 0.0 or gam1 > 0.0:
        ecfg = cfg.energy
        gz = energy_grad(
            z,
            ecfg,
            weights=rep.weights if ecfg.freeze_weights else None,
            eps_tr=rep.eps_tr if ecfg.freeze_stabilizer else None,
        )
        g = pullback_control(field, cfg.encoder, x, t, cfg.t_end, gz, cfg.through_predictor, est)
        g_perp = project_partial(g, v, cfg.lam, cfg.delta)
        g_app = np.where(active[:, None], cap_trust(g_perp, v, cfg.trust_ratio, cfg.delta), g)
    else:
        g_app = np.zeros_like(x)
    if control_hook is not None:
        g_app = control_hook(g_app, v)

    beta_step = cfg.beta(t) * abs(dt)
    eta = None
    if beta_step > 0.0:
        eta = orth_noise(v, cfg.noise_lam, beta_step, noise(ell, m, d), cfg.delta, active)

    v_eff = v - gam0 * g_app if gam0 > 0.0 else v
    x_pred = x + dt * v_eff
    v_next = field.velocity(x_pred, t_next)
    v_eff_next = v_next - gam1 * g_app if gam1 > 0.0 else v_next
    x_new = x + (dt / 2.0) * (v_eff + v_eff_next)
    if eta is not None:
        x_new = x_new + eta
    if not np.all(np.isfinite(x_new)):
        raise NonFinite("non-finite state after controlled Heun step", ell)

    displacement = 0.5 * abs(dt) * (gam0 + gam1) * np.linalg.norm(g_app, axis=-1)
    bound = cfg.trust_ratio * vn * abs(dt)
    usage = np.divide(displacement, bound, out=np.zeros(m), where=bound > 0)
    record = StepRecord(
        ell, t, rep.energy, rep.volume_log, _alignment(x, v, cfg.delta), _cos_residual(g_app, v),
        _cos_residual(eta, v) if eta is not None else np.zeros(m), usage, active,
        gam0, beta_step, state_checksum(x), (ps.seed, ell),
    )
    return ParticleSet(x_new, t_next, ell + 1, ps.seed, ps.condition), record


def baseline_heun_step(ps: ParticleSet, field, ell: int, grid) -> ParticleSet:
    """Plain Heun predictor-corrector on the base velocity field."""
    t, t_next = float(grid[ell]), float(grid[ell + 1])
    dt = t_next - t
    x = ps.states
    v = field.velocity(x, t)
    v_next = field.velocity(x + dt * v, t_next)
    x_new = x + (dt / 2.0) * (v + v_next)
    if not np.all(np.isfinite(x_new)):
        raise NonFinite("non-finite state after Heun step", ell)
    return ParticleSet(x_new, t_next, ell + 1, ps.seed, ps.condition)


def run(
    cfg: SamplerConfig,
    field,
    init=None,
    method: str = "oscar",
    noise: NoiseFn | None = None,
    snapshot_stride: int = 0,
    record_baseline: bool = True,
    condition: int | None = None,
    control_hook: ControlHook | None = None,
) -> RunTrace:
    """Integrate from t = 0 to t = 1 and return the per-step trace.

    ``init`` is an (m, d) array or ``None`` (standard normals from
    ``cfg.seed``). ``record_baseline=False`` skips energy bookkeeping for
    baseline runs, which only matters for speed.
    """
    if method not in ("oscar", "baseline"):
        raise ConfigError(f"unknown method {method!r}")
    grid = cfg.grid()
    if init is None:
        init = initial_noise(cfg.seed, cfg.particles, field.dim)
    ps = ParticleSet(np.array(init, dtype=np.float64), float(grid[0]), 0, cfg.seed, condition)
    trace = RunTrace(method, cfg.seed, cfg.hash(), initial=ps.states.copy(), n_steps=len(grid) - 1)
    if noise is None:
        noise = default_noise(cfg.seed)
    for ell in range(len(grid) - 1):
        if snapshot_stride and ell % snapshot_stride == 0:
            trace.snapshots[ell] = ps.states.copy()
        try:
            if method == "oscar":
                ps, rec = oscar_step(ps, cfg, field, ell, grid, noise, control_hook)
                trace.records.append(rec)
            else:
                if record_baseline:
                    trace.records.append(observe(ps, cfg, field))
                ps = baseline_heun_step(ps, field, ell, grid)
        except NonFinite as exc:
            if exc.step is None:
                exc.step = ell
            raise
    if record_baseline or method == "oscar":
        trace.records.append(observe(ps, cfg, field))
    if snapshot_stride:
        trace.snapshots[len(grid) - 1] = ps.states.copy()
    trace.final = ps.states
    return trace
