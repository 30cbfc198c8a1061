"""``oscar`` command line: train, sample, metrics, verify, plot.

Configs are JSON documents with a top-level ``version``. Anything a config
leaves out falls back to :data:`DEFAULT_CONFIG`; keys that do not exist there
are rejected so a typo can never silently become a default.

Exit codes: 0 success, 1 verification or run failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .endpoint import EncoderSpec
from .energy import EnergyConfig
from .errors import ConfigError, ConfigNotFound, NonFinite, OscarError, SchemaMismatch
from .flow import (
    GmmField,
    GmmSpec,
    MlpField,
    grid_gmm,
    grid_rmse,
    init_mlp,
    load_checkpoint,
    ring_gmm,
    save_json,
    single_gaussian,
    train_flow,
)
from .metrics import MetricReport, ModeReference, kmeans, metric_report
from .sampler import RunTrace, SamplerConfig, run
from .schedules import BetaSchedule, GammaSchedule, normalize_budget
from .verify import CHECKS, VerifySettings, format_report, run_suite

CONFIG_VERSION = 1

DEFAULT_CONFIG: dict = {
    "version": CONFIG_VERSION,
    "problem": {
        "target": {"kind": "grid", "n": 3, "spacing": 3.0, "std": 0.25},
        "field": "analytic",
        "checkpoint": None,
        "condition": None,
    },
    "train": {"hidden": [128, 128], "n_conditions": 10, "steps": 5000, "batch": 256, "lr": 3e-3, "seed": 0},
    "sampler": {
        "gamma": {"gamma0": 0.12, "shape": "cos2", "gate": [0.05, 0.35]},
        "beta": {
            "family": "power",
            "scale": 1.0,
            "budget": None,
            "gate": [0.05, 0.35],
            "eps_beta": 0.1,
            "p": 1.0,
            "kappa": 2.0,
        },
        "energy": {
            "tau": 1.0,
            "eps": 1e-3,
            "alpha": 0.5,
            "ridge": 1e-3,
            "freeze_weights": True,
            "freeze_stabilizer": True,
        },
        "encoder": {"kind": "tanh-lift", "dim": 32, "seed": 0, "scale": 0.5},
        "lam": 0.95,
        "noise_lam": 0.95,
        "delta": 1e-16,
        "trust_ratio": 0.3,
        "vnorm_threshold": 1e-4,
        "steps": 100,
        "time_grid": None,
        "particles": 64,
        "t_end": 1.0,
        "through_predictor": True,
    },
    "metrics": {"taus": None, "kernel": "rbf", "bandwidth": None, "ks": [3], "reference_samples": 2000, "kmeans_k": 9},
    "seeds": [0, 1, 2, 3, 4, 5, 6, 7],
    "outputs": {"dir": "oscar_out", "snapshot_stride": 25, "svg": True},
    "verify": {
        "pullback_configs": 20,
        "volume_sets": 50,
        "orth_seeds": [0],
        "reduction_seeds": 8,
        "descent_seeds": 16,
        "descent_budget": 0.1,
        "descent_family": "linfrac",
        "deviation_seeds": 32,
        "deviation_budgets": [0.05, 0.1],
        "deviation_steps": [100, 200],
        "inject_parallel_fault": False,
    },
}

# sub-trees whose keys are free-form and validated by their own constructors
_OPEN_KEYS = {("problem", "target")}


# --------------------------------------------------------------------------
# configuration


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = path + (key,)
        if key not in base:
            raise SchemaMismatch(f"unknown config key {'.'.join(where)!r}")
        if isinstance(base[key], dict) and where not in _OPEN_KEYS:
            if not isinstance(value, dict):
                raise SchemaMismatch(f"config key {'.'.join(where)!r} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None) -> dict:
    """Read a JSON config and merge it over the defaults."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(f"config file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise SchemaMismatch(f"{path}: top level must be a JSON object")
    if data.get("version") != CONFIG_VERSION:
        raise SchemaMismatch(f"{path}: expected \"version\": {CONFIG_VERSION}, got {data.get('version')!r}")
    return _merge(DEFAULT_CONFIG, data)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def build_target(spec: dict) -> GmmSpec:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "grid":
            return grid_gmm(**spec)
        if kind == "ring":
            return ring_gmm(**spec)
        if kind == "gaussian":
            return single_gaussian(**spec)
        if kind == "custom":
            return GmmSpec.from_dict(spec)
        if kind == "file":
            return GmmSpec.from_dict(json.loads(Path(spec["path"]).read_text()))
    except (TypeError, KeyError, ValueError) as exc:
        raise SchemaMismatch(f"bad problem.target for kind {kind!r}: {exc}") from exc
    raise SchemaMismatch(f"unknown problem.target.kind {kind!r}")


def build_sampler(sc: dict, seed: int = 0) -> SamplerConfig:
    try:
        b = dict(sc["beta"])
        budget = b.pop("budget")
        beta = BetaSchedule(**{**b, "gate": tuple(b["gate"])})
        if budget is not None:
            beta = normalize_budget(beta, float(budget))
        grid = sc["time_grid"]
        return SamplerConfig(
            gamma=GammaSchedule(**{**sc["gamma"], "gate": tuple(sc["gamma"]["gate"])}),
            beta=beta,
            energy=EnergyConfig(**sc["energy"]),
            encoder=EncoderSpec(**sc["encoder"]),
            lam=sc["lam"],
            noise_lam=sc["noise_lam"],
            delta=sc["delta"],
            trust_ratio=sc["trust_ratio"],
            vnorm_threshold=sc["vnorm_threshold"],
            steps=int(sc["steps"]),
            time_grid=None if grid is None else tuple(grid),
            particles=int(sc["particles"]),
            seed=int(seed),
            t_end=sc["t_end"],
            through_predictor=bool(sc["through_predictor"]),
        )
    except TypeError as exc:
        raise SchemaMismatch(f"bad sampler block: {exc}") from exc


def build_field(cfg: dict, base: Path | None = None):
    prob = cfg["problem"]
    spec = build_target(prob["target"])
    cond = prob["condition"]
    if prob["field"] == "analytic":
        return GmmField(spec, cond), spec.conditioned(cond)
    if prob["field"] == "checkpoint":
        ck = prob["checkpoint"]
        if ck is None:
            raise SchemaMismatch("problem.field is 'checkpoint' but problem.checkpoint is empty")
        path = Path(ck) if base is None or Path(ck).is_absolute() else base / ck
        if not path.is_file():
            raise ConfigNotFound(f"checkpoint not found: {path}")
        model = load_checkpoint(path)
        return MlpField(model, cond), spec.conditioned(cond)
    raise SchemaMismatch(f"problem.field must be 'analytic' or 'checkpoint', got {prob['field']!r}")


def parse_seeds(text: str | None, default) -> list[int]:
    if text is None:
        seeds = [int(s) for s in default]
    else:
        seeds = []
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


# --------------------------------------------------------------------------
# file formats


def _header(chash: str, seed, method: str | None = None) -> str:
    tag = f"# config_hash={chash} seed={seed}"
    return tag + (f" method={method}" if method else "") + "\n"


def samples_csv(trace: RunTrace, chash: str) -> str:
    buf = io.StringIO()
    buf.write(_header(chash, trace.seed, trace.method))
    d = trace.final.shape[1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "particle"] + [f"x{j}" for j in range(d)])
    frames = dict(trace.snapshots)
    frames.setdefault(0, trace.initial)
    frames[trace.n_steps] = trace.final
    for step in sorted(frames):
        for i, row in enumerate(frames[step]):
            w.writerow([step, i] + [repr(float(v)) for v in row])
    return buf.getvalue()


@dataclass
class SampleFile:
    frames: dict[int, np.ndarray]
    meta: dict[str, str]

    @property
    def final(self) -> np.ndarray:
        return self.frames[max(self.frames)]


def read_samples(path: str | Path) -> SampleFile:
    path = Path(path)
    if not path.is_file():
        raise ConfigNotFound(f"samples file not found: {path}")
    meta: dict[str, str] = {}
    rows = []
    header = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        cells = line.split(",")
        if header is None:
            header = cells
            d = len(cells) - 2
            if d < 1 or cells[:2] != ["step", "particle"] or cells[2:] != [f"x{j}" for j in range(d)]:
                raise SchemaMismatch(f"{path}:{lineno}: header must be step,particle,x0..x{{d-1}}")
            continue
        if len(cells) != len(header):
            raise SchemaMismatch(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        try:
            rows.append((int(cells[0]), int(cells[1]), [float(c) for c in cells[2:]]))
        except ValueError as exc:
            raise SchemaMismatch(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise SchemaMismatch(f"{path}: no sample rows")
    frames: dict[int, list] = {}
    for step, _, x in rows:
        frames.setdefault(step, []).append(x)
    return SampleFile({k: np.array(v) for k, v in frames.items()}, meta)


def report_row(name: str, rep: MetricReport) -> dict:
    row = {"run": name, "vendi": rep.vendi, "entropy_norm": rep.entropy_norm}
    for tau, cov in rep.coverage.items():
        row[f"coverage@{tau:g}"] = cov
    for k, p, r in rep.precision_recall:
        row[f"precision@k{k}"] = p
        row[f"recall@k{k}"] = r
    return row


def write_rows(path: Path, rows: list[dict], comment: str) -> None:
    keys = list(rows[0])
    buf = io.StringIO()
    buf.write(comment)
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    path.write_text(buf.getvalue())


# --------------------------------------------------------------------------
# svg


def _svg_points(pts, sx, sy, marker: str, color: str, size: float = 3.0) -> list[str]:
    out = []
    for x, y in pts:
        cx, cy = sx(x), sy(y)
        if marker == "dot":
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{size * 0.6:.2f}" fill="{color}" fill-opacity="0.5"/>')
        elif marker == "plus":
            s = size * 2
            out.append(
                f'<path d="M{cx - s:.2f},{cy:.2f}H{cx + s:.2f}M{cx:.2f},{cy - s:.2f}V{cy + s:.2f}" stroke="{color}" stroke-width="2"/>'
            )
        else:
            s = size
            out.append(
                f'<path d="M{cx - s:.2f},{cy - s:.2f}L{cx + s:.2f},{cy + s:.2f}M{cx - s:.2f},{cy + s:.2f}L{cx + s:.2f},{cy - s:.2f}" stroke="{color}" stroke-width="1.2"/>'
            )
    return out


def scatter_svg(panels: list[tuple[str, np.ndarray]], initial: np.ndarray, centers: np.ndarray | None, title: str = "") -> str:
    """Row of square scatter panels: '+' mode centers, dots initial, 'x' snapshot states."""
    size, pad = 300, 20
    allpts = [initial] + [p for _, p in panels] + ([centers] if centers is not None else [])
    stack = np.vstack([a[:, :2] for a in allpts])
    lo, hi = stack.min(axis=0), stack.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    mid = (lo + hi) / 2.0
    width = len(panels) * (size + pad) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{size + 2 * pad + 20}" '
        f'viewBox="0 0 {width} {size + 2 * pad + 20}">',
        f'<text x="{pad}" y="14" font-size="12" font-family="sans-serif">{title}</text>',
    ]
    for k, (label, pts) in enumerate(panels):
        ox = pad + k * (size + pad)
        oy = pad + 10

        def sx(x, ox=ox):
            return ox + size * (0.5 + (x - mid[0]) / (1.1 * span))

        def sy(y, oy=oy):
            return oy + size * (0.5 - (y - mid[1]) / (1.1 * span))

        parts.append(f'<rect x="{ox}" y="{oy}" width="{size}" height="{size}" fill="none" stroke="#888"/>')
        parts.append(f'<text x="{ox + 4}" y="{oy + size + 14}" font-size="11" font-family="sans-serif">{label}</text>')
        parts += _svg_points(initial[:, :2], sx, sy, "dot", "#7a9cc6")
        parts += _svg_points(pts[:, :2], sx, sy, "x", "#c0392b")
        if centers is not None:
            parts += _svg_points(centers[:, :2], sx, sy, "plus", "#000")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def snapshot_panels(frames: dict[int, np.ndarray]) -> list[tuple[str, np.ndarray]]:
    steps = sorted(frames)
    later = steps[1:] or steps
    picks = [later[0], later[len(later) // 2], later[-1]]
    return [(name + f" (step {s})", frames[s]) for name, s in zip(("early", "middle", "final"), picks)]


# --------------------------------------------------------------------------
# commands


def _out_dir(args, cfg) -> Path:
    out = Path(args.out if args.out else cfg["outputs"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tr = cfg["train"]
    spec = build_target(cfg["problem"]["target"])
    chash = config_hash(cfg)
    out = _out_dir(args, cfg)
    model = init_mlp(spec.dim, tuple(tr["hidden"]), int(tr["n_conditions"]), seed=int(tr["seed"]))
    steps = int(tr["steps"])
    if steps > 0:
        model, losses = train_flow(spec, model, steps, int(tr["batch"]), float(tr["lr"]), int(tr["seed"]))
    else:
        losses = np.zeros(0)
    payload = {"config_hash": chash, "seed": int(tr["seed"]), "target": spec.to_dict(), "model": model.to_dict()}
    save_json(out / "checkpoint.json", payload)
    lines = [_header(chash, tr["seed"]).rstrip("\n"), "step,loss"]
    lines += [f"{i},{v!r}" for i, v in enumerate(losses.tolist())]
    (out / "loss.csv").write_text("\n".join(lines) + "\n")
    summary = {"config_hash": chash, "seed": int(tr["seed"]), "steps": steps}
    if model.n_conditions == 0:
        rmse = grid_rmse(MlpField(model), spec)
        summary["grid_rmse_per_t"] = rmse.tolist()
        summary["grid_rmse"] = float(np.sqrt(np.mean(rmse**2)))
    if steps >= 200:
        summary["loss_ratio"] = float(losses[-100:].mean() / losses[:100].mean())
    save_json(out / "train_summary.json", summary)
    print(json.dumps(summary))
    return 0


def _sample_one(job):
    cfg, method, seed, base = job
    field, _ = build_field(cfg, base)
    sc = build_sampler(cfg["sampler"], seed)
    try:
        trace = run(sc, field, method=method, snapshot_stride=int(cfg["outputs"]["snapshot_stride"]))
    except NonFinite as exc:
        return seed, None, {"seed": seed, "step": exc.step, "error": str(exc)}
    return seed, trace, None


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent if args.config else None
    seeds = parse_seeds(args.seeds, cfg["seeds"])
    field, spec = build_field(cfg, base)  # validates before any work is scheduled
    build_sampler(cfg["sampler"])
    chash = config_hash(cfg)
    out = _out_dir(args, cfg)
    jobs = [(cfg, args.method, s, base) for s in seeds]
    n_jobs = max(1, min(args.jobs or os.cpu_count() or 1, len(jobs)))
    if n_jobs == 1:
        results = [_sample_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_sample_one, jobs))

    mc = cfg["metrics"]
    rng = np.random.default_rng(0)
    ref = ModeReference(spec.means, spec.sample(int(mc["reference_samples"]), rng) if mc["reference_samples"] else None)
    rows, failures = [], []
    for seed, trace, failure in sorted(results, key=lambda r: r[0]):
        if failure is not None:
            failures.append(failure)
            continue
        stem = f"{args.method}_seed{seed}"
        trace.config_hash = chash
        trace.write_jsonl(out / f"trace_{stem}.jsonl")
        (out / f"samples_{stem}.csv").write_text(samples_csv(trace, chash))
        rep = metric_report(trace.final, ref, mc["taus"], mc["kernel"], mc["bandwidth"], tuple(mc["ks"]))
        row = report_row(stem, rep)
        row["seed"] = seed
        rows.append(row)
        if cfg["outputs"]["svg"]:
            frames = dict(trace.snapshots)
            frames[trace.n_steps] = trace.final
            svg = scatter_svg(snapshot_panels(frames), trace.initial, spec.means, f"{args.method} seed {seed} [{chash}]")
            (out / f"scatter_{stem}.svg").write_text(svg)
    if rows:
        mean = {"run": f"{args.method}_mean", "seed": "all"}
        for k in rows[0]:
            if k not in ("run", "seed"):
                mean[k] = float(np.mean([r[k] for r in rows]))
        write_rows(out / f"metrics_{args.method}.csv", rows + [mean], _header(chash, ",".join(map(str, seeds)), args.method))
        print(json.dumps(mean))
    if failures:
        save_json(out / f"failures_{args.method}.json", {"config_hash": chash, "failures": failures})
        print(f"{len(failures)} run(s) aborted on non-finite values; see failures_{args.method}.json", file=sys.stderr)
        return 1
    return 0


def cmd_metrics(args) -> int:
    cfg = load_config(args.config)
    mc = cfg["metrics"]
    if args.ref and Path(args.ref).suffix == ".csv":
        # unlabelled reference cloud: modes come from seeded k-means
        sf = read_samples(args.ref)
        ref = ModeReference(kmeans(sf.final, int(mc["kmeans_k"]), seed=0), sf.final)
    else:
        if args.ref:
            if not Path(args.ref).is_file():
                raise ConfigNotFound(f"reference file not found: {args.ref}")
            data = json.loads(Path(args.ref).read_text())
            spec = GmmSpec.from_dict(data.get("target", data))
        else:
            spec = build_target(cfg["problem"]["target"]).conditioned(cfg["problem"]["condition"])
        cloud = spec.sample(int(mc["reference_samples"]), np.random.default_rng(0)) if mc["reference_samples"] else None
        ref = ModeReference(spec.means, cloud)
    out = _out_dir(args, cfg)

    def evaluate(paths):
        rows, reports = [], {}
        for p in paths:
            sf = read_samples(p)
            rep = metric_report(sf.final, ref, mc["taus"], mc["kernel"], mc["bandwidth"], tuple(mc["ks"]))
            reports[Path(p).stem] = {**rep.to_dict(), **sf.meta}
            rows.append(report_row(Path(p).stem, rep))
        return rows, reports

    rows, reports = evaluate(args.samples)
    chash = config_hash(cfg)
    save_json(out / "metrics.json", {"config_hash": chash, "reports": reports})
    write_rows(out / "metrics.csv", rows, _header(chash, "n/a"))
    if args.baseline:
        if len(args.baseline) != len(args.samples):
            raise ConfigError("--baseline needs one file per samples file")
        base_rows, _ = evaluate(args.baseline)
        table = []
        for a, b in zip(rows, base_rows):
            row = {"run": a["run"], "baseline": b["run"]}
            for k in a:
                if k != "run":
                    row[f"{k}"] = a[k]
                    row[f"{k}_baseline"] = b[k]
                    row[f"{k}_delta"] = a[k] - b[k]
            table.append(row)
        write_rows(out / "comparison.csv", table, _header(chash, "n/a"))
        for row in table:
            print(", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items() if k.endswith("_delta") or k == "run"))
    else:
        for row in rows:
            print(json.dumps(row))
    return 0


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent if args.config else None
    field, _ = build_field(cfg, base)
    sc = build_sampler(cfg["sampler"], seed=int(cfg["seeds"][0]))
    v = cfg["verify"]
    settings = VerifySettings(
        pullback_configs=int(v["pullback_configs"]),
        volume_sets=int(v["volume_sets"]),
        orth_seeds=tuple(int(s) for s in v["orth_seeds"]),
        reduction_seeds=int(v["reduction_seeds"]),
        descent_seeds=int(v["descent_seeds"]),
        descent_budget=float(v["descent_budget"]),
        descent_family=str(v["descent_family"]),
        deviation_seeds=int(v["deviation_seeds"]),
        deviation_budgets=tuple(float(b) for b in v["deviation_budgets"]),
        deviation_steps=tuple(int(s) for s in v["deviation_steps"]),
        inject_parallel_fault=bool(v["inject_parallel_fault"]),
    )
    only = None
    if args.only:
        only = [c.strip() for item in args.only for c in item.split(",") if c.strip()]
        bad = set(only) - set(CHECKS)
        if bad:
            raise ConfigError(f"unknown check(s) {sorted(bad)}; choose from {', '.join(CHECKS)}")
    rep = run_suite(sc, field, settings, only)
    out = _out_dir(args, cfg)
    payload = {"config_hash": config_hash(cfg), "seed": int(cfg["seeds"][0]), **rep.to_dict()}
    (out / "theory_report.json").write_text(json.dumps(payload, indent=1))
    print(format_report(rep))
    return 0 if rep.passed else 1


def cmd_plot(args) -> int:
    cfg = load_config(args.config)
    spec = build_target(cfg["problem"]["target"]).conditioned(cfg["problem"]["condition"])
    out = _out_dir(args, cfg)
    for p in args.samples:
        sf = read_samples(p)
        frames = sf.frames
        initial = frames[min(frames)]
        title = f"{Path(p).stem} [{sf.meta.get('config_hash', '?')}]"
        target = out / f"{Path(p).stem}.svg"
        target.write_text(scatter_svg(snapshot_panels(frames), initial, spec.means, title))
        print(target)
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oscar", description="Orthogonal stochastic control sampler for flow matching.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config (defaults are used for anything omitted)")
        p.add_argument("--out", help="output directory (overrides outputs.dir)")

    p = sub.add_parser("train", help="fit an MLP velocity field to the configured target")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="run the sampler for each seed and write traces, samples and metrics")
    common(p)
    p.add_argument("--method", choices=("oscar", "baseline"), default="oscar")
    p.add_argument("--seeds", help="comma list and/or ranges, e.g. 0-7 or 0,3,5")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: logical cores)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("metrics", help="score sample CSVs against the mode reference")
    common(p)
    p.add_argument("samples", nargs="+", help="samples CSV files")
    p.add_argument("--ref", help="GMM JSON with the reference modes, or a samples CSV clustered by k-means")
    p.add_argument("--baseline", nargs="+", help="paired baseline CSVs for a delta table")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("verify", help="run the theory checks and write a report")
    common(p)
    p.add_argument("--only", action="append", help=f"restrict to checks: {', '.join(CHECKS)}")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render early/middle/final scatter panels from samples CSVs")
    common(p)
    p.add_argument("samples", nargs="+")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OscarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
