"""Empirical checks of the sampler's theoretical guarantees.

Hard identities (pullback, volume, orthogonality, reduction) have fixed
tolerances and decide the exit status of ``oscar verify``. The descent and
deviation checks are statistical and are reported with their evidence.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .endpoint import EncoderSpec, encode, heun_endpoint, pullback_control
from .energy import EnergyConfig, energy_grad, set_energy
from .flow import GmmField, grid_gmm
from .numerics import finite_diff_grad
from .sampler import ControlHook, SamplerConfig, _alignment, run
from .schedules import BetaSchedule, normalize_budget, zero_beta

PULLBACK_TOL = 1e-4
VOLUME_TOL = 1e-12
ORTH_TOL = 1e-6
CHECKS = ("pullback", "volume", "orthogonality", "reduction", "descent", "deviation", "lperp")
HARD_CHECKS = ("pullback", "volume", "orthogonality", "reduction")


@dataclass
class DescentVerdict:
    mode: str  # "pure", "averaged" or "not-applicable"
    passed: bool
    violating_steps: list[int]
    t_star: float | None  # earliest time after which the (averaged) trace is monotone
    n_runs: int
    strict_violations: int = 0  # rises above one stderr of the per-step increment (diagnostic)
    steps_checked: int = 0


@dataclass
class DeviationFit:
    cells: list[dict]  # {"budget", "steps", "dt", "mean", "stderr"}
    slope_budget: float
    slope_budget_halfwidth: float
    slope_dt: float
    slope_dt_halfwidth: float
    budget_ratio: float | None  # dev(2B) / dev(B) at the coarsest step
    dt_excess: float | None  # dev(dt/2) - dev(dt) at the smallest budget
    dt_allowance: float | None  # two combined standard errors
    passed: bool


@dataclass
class TheoryReport:
    pullback_max_relerr: float | None = None
    volume_identity_max_abserr: float | None = None
    orth_residual_max: float | None = None
    noise_orth_residual_max: float | None = None
    reduction_bitwise: bool | None = None
    descent: DescentVerdict | None = None
    descent_pure: DescentVerdict | None = None
    deviation_fit: DeviationFit | None = None
    l_perp_estimate: float | None = None  # diagnostic only, never gates anything
    timings: dict[str, float] = field(default_factory=dict)

    def hard_failures(self) -> list[str]:
        bad = []
        if self.pullback_max_relerr is not None and not self.pullback_max_relerr <= PULLBACK_TOL:
            bad.append("pullback")
        if self.volume_identity_max_abserr is not None and not self.volume_identity_max_abserr <= VOLUME_TOL:
            bad.append("volume")
        for r in (self.orth_residual_max, self.noise_orth_residual_max):
            if r is not None and not r <= ORTH_TOL:
                bad.append("orthogonality")
                break
        if self.reduction_bitwise is False:
            bad.append("reduction")
        return bad

    @property
    def passed(self) -> bool:
        return not self.hard_failures()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hard_failures"] = self.hard_failures()
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


# --------------------------------------------------------------------------
# identities


def composed_energy(field, enc: EncoderSpec, x, t: float, cfg: EnergyConfig, t_end=1.0, weights=None, eps_tr=None):
    z = encode(enc, heun_endpoint(field, x, t, t_end).endpoint)
    return set_energy(z, cfg, weights=weights, eps_tr=eps_tr).energy


def check_pullback(field, enc: EncoderSpec, particles, t: float, cfg: EnergyConfig, t_end: float = 1.0, h=1e-6):
    """Normwise relative error between the VJP pullback and central differences.

    Weights and the trace stabiliser are frozen at the unperturbed state, so
    both sides differentiate the same objective.
    """
    x = np.asarray(particles, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("pullback check needs at least two particles")
    est = heun_endpoint(field, x, t, t_end)
    z = encode(enc, est.endpoint)
    rep = set_energy(z, cfg)
    gz = energy_grad(z, cfg, weights=rep.weights, eps_tr=rep.eps_tr)
    analytic = pullback_control(field, enc, x, t, t_end, gz, estimate=est)

    def f(flat):
        return composed_energy(field, enc, flat, t, cfg, t_end, rep.weights, rep.eps_tr)

    fd = finite_diff_grad(f, x, h=h)
    scale = np.max(np.linalg.norm(fd, axis=-1))
    err = np.max(np.linalg.norm(analytic - fd, axis=-1))
    if scale == 0.0:
        return float(err)
    return float(err / scale)


def pullback_sweep(n_configs: int = 20, seed: int = 0, m: int = 4, cfg: EnergyConfig | None = None) -> float:
    """Max pullback error over random tanh-lift / 3x3 GMM configurations."""
    cfg = EnergyConfig() if cfg is None else cfg
    rng = np.random.default_rng(seed)
    field_ = GmmField(grid_gmm())
    worst = 0.0
    for k in range(n_configs):
        enc = EncoderSpec("tanh-lift", dim=int(rng.integers(4, 17)), seed=int(rng.integers(1 << 31)), scale=0.5)
        x = 1.5 * rng.standard_normal((m, 2))
        t = float(rng.uniform(0.05, 0.9))
        worst = max(worst, check_pullback(field_, enc, x, t, cfg))
    return worst


def check_volume_identity(zs, cfg: EnergyConfig | None = None) -> float:
    """max |E_s + log V| where log V comes from the eigenvalues of the stabilised Gram."""
    cfg = EnergyConfig() if cfg is None else cfg
    worst = 0.0
    for z in zs:
        rep = set_energy(z, cfg, spectrum=True)
        log_v = 0.5 * float(np.sum(np.log(rep.gram_spectrum)))
        worst = max(worst, abs(rep.energy + log_v))
    return worst


def random_feature_sets(n: int = 50, seed: int = 0, max_m: int = 8, max_d: int = 6):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((int(rng.integers(1, max_m + 1)), int(rng.integers(1, max_d + 1)))) for _ in range(n)]


def check_orthogonality(cfg: SamplerConfig, field, seeds=(0,), control_hook: ControlHook | None = None):
    """Largest cosine between v and the applied control / noise over active particles.

    Forces ``lam = noise_lam = 1``.
    """
    cfg = replace(cfg, lam=1.0, noise_lam=1.0)
    g_max = n_max = 0.0
    for s in seeds:
        tr = run(replace(cfg, seed=s), field, control_hook=control_hook)
        for rec in tr.records:
            if rec.active.any():
                g_max = max(g_max, float(np.max(rec.orth_residual[rec.active])))
                n_max = max(n_max, float(np.max(rec.noise_orth_residual[rec.active])))
    return g_max, n_max


def check_reduction(cfg: SamplerConfig, field, seeds=range(8)) -> bool:
    zero = cfg.zero_control()
    for s in seeds:
        c = replace(zero, seed=s)
        a = run(c, field, method="oscar")
        b = run(c, field, method="baseline", record_baseline=False)
        if a.checksum() != b.checksum():
            return False
    return True


def parallel_fault(g_app: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Test hook: leak a component of the control back along v."""
    return g_app + 0.1 * v


# --------------------------------------------------------------------------
# statistical checks


def _gated_steps(cfg: SamplerConfig, grid) -> list[int]:
    return [k for k in range(len(grid) - 1) if cfg.gamma(grid[k]) > 0.0 or cfg.gamma(grid[k + 1]) > 0.0]


def _t_star(means: np.ndarray, times: np.ndarray, tol: np.ndarray) -> float | None:
    rises = np.flatnonzero(np.diff(means) > tol)
    if rises.size == 0:
        return float(times[0])
    k = rises[-1] + 1
    return float(times[k]) if k < len(times) - 1 else None


def check_descent(cfg: SamplerConfig, field, n_seeds: int = 16, seed0: int = 0) -> DescentVerdict:
    """Energy descent verdict.

    With no noise the single run at ``seed0`` must not increase E_s on any
    step where the guidance gate is open. With noise the seed-averaged E_s
    must be nonincreasing on the final third of the grid, a rise being
    tolerated up to one standard error of the averaged value at that step.
    """
    noisy = cfg.beta.scale > 0.0
    if cfg.gamma.gamma0 == 0.0 and not noisy:
        return DescentVerdict("not-applicable", True, [], None, 0)
    grid = cfg.grid()
    if not noisy:
        tr = run(replace(cfg, seed=seed0), field)
        e = tr.energies
        steps = _gated_steps(cfg, grid)
        bad = [k for k in steps if e[k + 1] > e[k]]
        return DescentVerdict("pure", not bad, bad, _t_star(e, tr.times, np.zeros(len(e) - 1)), 1, len(bad), len(steps))
    runs = np.array([run(replace(cfg, seed=seed0 + s), field).energies for s in range(n_seeds)])
    times = grid
    means = runs.mean(axis=0)
    se = runs.std(axis=0, ddof=1) / np.sqrt(n_seeds)
    inc = np.diff(runs, axis=1)
    inc_se = inc.std(axis=0, ddof=1) / np.sqrt(n_seeds)
    start = (2 * (len(grid) - 1)) // 3
    steps = list(range(start, len(grid) - 1))
    rise = np.diff(means)
    bad = [k for k in steps if rise[k] > se[k + 1]]
    strict = sum(1 for k in steps if rise[k] > inc_se[k])
    return DescentVerdict("averaged", not bad, bad, _t_star(means, times, se[1:]), n_seeds, strict, len(steps))


def terminal_alignment(field, x: np.ndarray, delta: float) -> np.ndarray:
    return _alignment(x, field.velocity(x, 1.0), delta)


def _loglog_slope(xs, ys) -> float:
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    if len(xs) < 2 or np.ptp(xs) == 0.0:
        return float("nan")
    return float(np.polyfit(xs, ys, 1)[0])


def check_deviation_scaling(
    cfg: SamplerConfig,
    field,
    budgets=(0.05, 0.1),
    steps_list=(100, 200),
    n_seeds: int = 32,
    family: str = "linfrac",
    n_boot: int = 200,
) -> DeviationFit:
    """Terminal alignment deviation |y - y_base| as a function of budget and step size.

    Guidance is switched off so only the orthogonal noise moves particles off
    the baseline trajectory. Noise follows ``family`` over the full horizon,
    normalized to each budget.
    """
    base_cfg = replace(cfg, gamma=replace(cfg.gamma, gamma0=0.0))
    per_seed = {}
    for steps in steps_list:
        grid_cfg = replace(base_cfg, steps=int(steps), time_grid=None)
        base_y = {}
        for s in range(n_seeds):
            c = replace(grid_cfg, seed=s, beta=zero_beta())
            base_y[s] = terminal_alignment(field, run(c, field, method="baseline", record_baseline=False).final, cfg.delta)
        for b in budgets:
            beta = normalize_budget(BetaSchedule(family, 1.0, (0.0, 1.0)), b) if b > 0 else zero_beta()
            devs = []
            for s in range(n_seeds):
                c = replace(grid_cfg, seed=s, beta=beta)
                y = terminal_alignment(field, run(c, field, record_baseline=False).final, cfg.delta)
                devs.append(float(np.mean(np.abs(y - base_y[s]))))
            per_seed[(float(b), int(steps))] = np.array(devs)

    cells = [
        {"budget": b, "steps": t, "dt": 1.0 / t, "mean": float(d.mean()), "stderr": float(d.std(ddof=1) / np.sqrt(len(d)))}
        for (b, t), d in per_seed.items()
    ]
    pos_b = [b for b in budgets if b > 0]
    coarse, fine = int(steps_list[0]), int(steps_list[-1])

    def slopes(sample):
        sb = _loglog_slope(pos_b, [sample[(float(b), coarse)].mean() for b in pos_b])
        dts = [1.0 / t for t in steps_list]
        sd = _loglog_slope(dts, [sample[(float(pos_b[0]), int(t))].mean() for t in steps_list])
        return sb, sd

    sb, sd = slopes(per_seed)
    rng = np.random.default_rng(0)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(0, n_seeds, size=n_seeds)
        boots.append(slopes({k: v[idx] for k, v in per_seed.items()}))
    boots = np.array(boots)
    hw = 0.5 * (np.nanpercentile(boots, 97.5, axis=0) - np.nanpercentile(boots, 2.5, axis=0))

    ratio = excess = allowance = None
    ok = True
    b0 = float(pos_b[0]) if pos_b else None
    if b0 is not None and (2.0 * b0) in [float(b) for b in pos_b]:
        ratio = float(per_seed[(2.0 * b0, coarse)].mean() / per_seed[(b0, coarse)].mean())
        ok &= 1.0 <= ratio <= 3.0
    if b0 is not None and fine != coarse:
        d_full, d_half = per_seed[(b0, coarse)], per_seed[(b0, fine)]
        excess = float(d_half.mean() - d_full.mean())
        allowance = float(2.0 * np.hypot(d_full.std(ddof=1), d_half.std(ddof=1)) / np.sqrt(n_seeds))
        ok &= excess <= allowance
    return DeviationFit(cells, sb, float(hw[0]), sd, float(hw[1]), ratio, excess, allowance, bool(ok))


def estimate_l_perp(cfg: SamplerConfig, field, times=(0.1, 0.2, 0.3), n_probes: int = 8, h: float = 1e-3, seed: int = 0):
    """Finite-difference probe of the trace of the projected Hessian of the composed energy.

    Hutchinson estimate with Gaussian probes projected off each particle's
    velocity; returns the largest estimate over ``times``. Diagnostic only.
    """
    rng = np.random.default_rng(seed)
    x0 = np.random.default_rng(cfg.seed).standard_normal((cfg.particles, field.dim))
    best = -np.inf
    for t in times:
        v = field.velocity(x0, t)
        vhat = v / (np.linalg.norm(v, axis=-1, keepdims=True) + cfg.delta)
        e0 = composed_energy(field, cfg.encoder, x0, t, cfg.energy, cfg.t_end)
        est = []
        for _ in range(n_probes):
            u = rng.standard_normal(x0.shape)
            u -= np.sum(u * vhat, axis=-1, keepdims=True) * vhat
            ep = composed_energy(field, cfg.encoder, x0 + h * u, t, cfg.energy, cfg.t_end)
            em = composed_energy(field, cfg.encoder, x0 - h * u, t, cfg.energy, cfg.t_end)
            est.append((ep - 2.0 * e0 + em) / (h * h))
        best = max(best, float(np.mean(est)))
    return best


# --------------------------------------------------------------------------
# suite


@dataclass
class VerifySettings:
    pullback_configs: int = 20
    volume_sets: int = 50
    orth_seeds: tuple[int, ...] = (0,)
    reduction_seeds: int = 8
    descent_seeds: int = 16
    descent_budget: float = 0.1
    descent_family: str = "linfrac"
    deviation_seeds: int = 32
    deviation_budgets: tuple[float, ...] = (0.05, 0.1)
    deviation_steps: tuple[int, ...] = (100, 200)
    inject_parallel_fault: bool = False


def descent_configs(cfg: SamplerConfig, settings: VerifySettings) -> tuple[SamplerConfig, SamplerConfig]:
    """(pure, noisy) configurations for the two descent verdicts."""
    pure = replace(cfg, beta=zero_beta())
    beta = normalize_budget(BetaSchedule(settings.descent_family, 1.0, (0.0, 1.0)), settings.descent_budget)
    return pure, replace(cfg, beta=beta)


def run_suite(cfg: SamplerConfig, field=None, settings: VerifySettings | None = None, only=None) -> TheoryReport:
    settings = VerifySettings() if settings is None else settings
    field = GmmField(grid_gmm()) if field is None else field
    selected = CHECKS if not only else tuple(only)
    unknown = set(selected) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}; choose from {CHECKS}")
    rep = TheoryReport()

    def timed(name, fn):
        t0 = time.perf_counter()
        out = fn()
        rep.timings[name] = time.perf_counter() - t0
        return out

    if "pullback" in selected:
        rep.pullback_max_relerr = timed("pullback", lambda: pullback_sweep(settings.pullback_configs, cfg=cfg.energy))
    if "volume" in selected:
        zs = random_feature_sets(settings.volume_sets)
        rep.volume_identity_max_abserr = timed("volume", lambda: check_volume_identity(zs, cfg.energy))
    if "orthogonality" in selected:
        hook = parallel_fault if settings.inject_parallel_fault else None
        g, n = timed("orthogonality", lambda: check_orthogonality(cfg, field, settings.orth_seeds, hook))
        rep.orth_residual_max, rep.noise_orth_residual_max = g, n
    if "reduction" in selected:
        rep.reduction_bitwise = timed("reduction", lambda: check_reduction(cfg, field, range(settings.reduction_seeds)))
    if "descent" in selected:
        pure, noisy = descent_configs(cfg, settings)
        rep.descent_pure = timed("descent_pure", lambda: check_descent(pure, field))
        rep.descent = timed("descent", lambda: check_descent(noisy, field, settings.descent_seeds))
    if "deviation" in selected:
        rep.deviation_fit = timed(
            "deviation",
            lambda: check_deviation_scaling(
                cfg, field, settings.deviation_budgets, settings.deviation_steps, settings.deviation_seeds,
                settings.descent_family,
            ),
        )
    if "lperp" in selected:
        rep.l_perp_estimate = timed("lperp", lambda: estimate_l_perp(cfg, field))
    return rep


def format_report(rep: TheoryReport) -> str:
    rows = []

    def row(name, value, tol, ok):
        mark = "-" if ok is None else ("PASS" if ok else "FAIL")
        rows.append(f"{name:<28}{value:>16}{tol:>14}  {mark}")

    def num(x):
        return "n/a" if x is None else f"{x:.3e}"

    rows.append(f"{'check':<28}{'value':>16}{'tolerance':>14}  verdict")
    if rep.pullback_max_relerr is not None:
        row("pullback max rel. error", num(rep.pullback_max_relerr), f"{PULLBACK_TOL:.0e}", rep.pullback_max_relerr <= PULLBACK_TOL)
    if rep.volume_identity_max_abserr is not None:
        row("volume identity abs. error", num(rep.volume_identity_max_abserr), f"{VOLUME_TOL:.0e}", rep.volume_identity_max_abserr <= VOLUME_TOL)
    if rep.orth_residual_max is not None:
        row("control orth. residual", num(rep.orth_residual_max), f"{ORTH_TOL:.0e}", rep.orth_residual_max <= ORTH_TOL)
        row("noise orth. residual", num(rep.noise_orth_residual_max), f"{ORTH_TOL:.0e}", rep.noise_orth_residual_max <= ORTH_TOL)
    if rep.reduction_bitwise is not None:
        row("zero-control reduction", "bitwise" if rep.reduction_bitwise else "differs", "exact", rep.reduction_bitwise)
    for label, d in (("descent (no noise)", rep.descent_pure), ("descent (late, averaged)", rep.descent)):
        if d is not None:
            row(label, f"{len(d.violating_steps)}/{d.steps_checked} rises", "0", d.passed if d.mode != "not-applicable" else None)
    if rep.deviation_fit is not None:
        f = rep.deviation_fit
        row("deviation ratio (2B / B)", num(f.budget_ratio), "[1, 3]", None if f.budget_ratio is None else 1 <= f.budget_ratio <= 3)
        row("deviation excess (dt / 2)", num(f.dt_excess), num(f.dt_allowance), None if f.dt_excess is None else f.dt_excess <= f.dt_allowance)
        row("slope vs budget", f"{f.slope_budget:.3f}+-{f.slope_budget_halfwidth:.3f}", "", None)
        row("slope vs dt", f"{f.slope_dt:.3f}+-{f.slope_dt_halfwidth:.3f}", "", None)
    if rep.l_perp_estimate is not None:
        row("L_perp estimate (diagnostic)", num(rep.l_perp_estimate), "", None)
    return "\n".join(rows)
