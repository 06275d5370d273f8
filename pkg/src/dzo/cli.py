"""Command-line experiment runner.

    dzo validate CONFIG
    dzo spectral CONFIG
    dzo run CONFIG [--out DIR] [--allow-unvalidated] [--workers N]
    dzo sweep-speedup CONFIG --n 1,4,16 [--out DIR] [--allow-unvalidated] [--workers N]

Exit status is 0 on success, 1 for configuration or validation errors, and 2
when a run diverged (partial outputs are kept).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .engine import DivergenceError, Trace, run
from .graph import AdvisorError, GraphError, advisor_c2, advisor_d2
from .metrics import FIELDS, Z95, aggregate, fit_rate
from .oracle import ProblemError
from .report import (
    aggregate_csv,
    atomic_write_text,
    dat_text,
    dumps_json,
    fmt,
    svg_loglog,
    trace_csv,
    write_manifest,
)
from .schedule import ScheduleError, hard_errors, validate

ENV_OUT_DIR = "DZO_OUT_DIR"
DEFAULT_OUT_DIR = "dzo_out"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    d = args.out or cfg.output.dir or os.environ.get(ENV_OUT_DIR) or DEFAULT_OUT_DIR
    return Path(d)


@dataclass
class Setup:
    cfg: ExperimentConfig
    graph: object
    problem: object
    schedule: object
    diagnostics: list = field(default_factory=list)

    @property
    def blocked(self) -> bool:
        return bool(hard_errors(self.diagnostics)) and not self.schedule.allow_unvalidated


def _setup(cfg: ExperimentConfig, allow: bool = False) -> Setup:
    try:
        g = cfg.build_graph()
        prob = cfg.build_problem()
        sched = cfg.build_schedule(g, allow)
    except (GraphError, ProblemError, ScheduleError, AdvisorError) as exc:
        raise ConfigError(f"{cfg.source}: {exc}") from None
    return Setup(cfg, g, prob, sched, validate(sched, g, prob))


def _spectral(s: Setup) -> dict:
    rep = s.graph.spectral_report()
    sch = s.schedule
    rep["c2"] = rep["d2"] = None
    if s.graph.n > 1:
        if sch.kappa1 is not None and sch.kappa1 > rep["c1"]:
            rep["c2"] = advisor_c2(s.graph, sch.kappa1)
        if sch.gamma is not None and 0 < sch.gamma < rep["d1"] and s.problem.lf > 0:
            nz = s.problem.noise
            rep["d2"] = advisor_d2(s.graph, sch.gamma, s.problem.lf, nz.sigma0, nz.sigma0_tilde, s.problem.p)
    return rep


def _print_report(s: Setup) -> None:
    rep = _spectral(s)
    print(f"graph: {s.graph.kind}, n = {s.graph.n}")
    for key in ("rho", "rho2", "c1", "c2", "d1", "d2"):
        v = rep[key]
        print(f"  {key:5s} = {'n/a' if v is None else f'{v:.10g}'}")
    print(f"schedule: {s.schedule.regime}")
    if not s.diagnostics:
        print("  ok")
    for d in s.diagnostics:
        print(f"  {d}")


# -- running ------------------------------------------------------------------


def _run_seed(cfg: ExperimentConfig, allow: bool, seed: int):
    s = _setup(cfg, allow)
    try:
        tr = run(
            s.problem,
            s.graph,
            s.schedule,
            cfg.run.T,
            seed=seed,
            record_every=cfg.run.record_every,
            x0_policy=cfg.run.x0,
            x0_scale=cfg.run.x0_scale,
            chunk=cfg.run.chunk,
        )
        return seed, tr, None
    except DivergenceError as exc:
        return seed, exc.trace, {"seed": seed, "k": exc.k, "agent": exc.agent}


def run_seeds(cfg: ExperimentConfig, allow: bool = False, workers: int = 1):
    """Run every configured seed; results come back in seed order."""
    seeds = list(cfg.run.seeds)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(min(workers, len(seeds))) as pool:
            return list(pool.map(_run_seed, [cfg] * len(seeds), [allow] * len(seeds), seeds))
    return [_run_seed(cfg, allow, sd) for sd in seeds]


def stationarity_average(trace: Trace) -> float:
    """Mean of grad_norm_sq over recorded k < T (the (1/T) sum when stride is 1)."""
    T = trace.meta["T"]
    ks = trace.ks
    vals = trace.column("grad_norm_sq")
    sel = ks < T if T > 0 else ks <= 0
    return float(np.mean(vals[sel]))


def _mean_ci(xs) -> dict:
    xs = np.asarray(xs, dtype=float)
    ci = Z95 * xs.std(ddof=1) / math.sqrt(xs.size) if xs.size > 1 else 0.0
    return {"mean": float(xs.mean()), "ci95": float(ci)}


def _slopes(traces) -> dict:
    out = {}
    for m in FIELDS:
        entry = {}
        for mode in ("per_k", "running_average"):
            try:
                f = fit_rate(traces, m, avg_mode=mode)
                entry[mode] = {"slope": f.slope, "r2": f.r2, "window": list(f.window), "points": f.points}
            except ValueError as exc:
                entry[mode] = {"error": str(exc)}
        out[m] = entry
    return out


def execute(s: Setup, out_dir: Path, workers: int = 1) -> tuple[dict, list[Trace]]:
    """Run all seeds of one config point and write its outputs.

    Returns the JSON summary and the traces of the seeds that finished.
    """
    cfg = s.cfg
    fmts = cfg.output.formats
    out_dir.mkdir(parents=True, exist_ok=True)
    results = run_seeds(cfg, s.schedule.allow_unvalidated, workers)
    files = []
    good, diverged, walls = [], [], {}
    for seed, tr, div in results:
        walls[str(seed)] = tr.meta.get("wall_time")
        if "csv" in fmts:
            name = f"trace_seed{seed}.csv"
            atomic_write_text(out_dir / name, trace_csv(tr))
            files.append(name)
        if div is None:
            good.append(tr)
        else:
            diverged.append(div)

    sched = {k: v for k, v in asdict(s.schedule).items() if v is not None}
    summary = {
        "config": {
            "problem": cfg.problem,
            "graph": cfg.graph,
            "schedule": sched,
            "run": {k: v for k, v in asdict(cfg.run).items()},
        },
        "seeds": list(cfg.run.seeds),
        "seed_rule": "seed_j = base_seed + j when seeds is a count",
        "n": s.problem.n,
        "p": s.problem.p,
        "regime": s.schedule.regime,
        "T": cfg.run.T,
        "spectral": _spectral(s),
        "diagnostics": [str(d) for d in s.diagnostics],
        "oracle_calls_per_iteration": 2 * s.problem.n,
        "diverged": diverged,
    }
    if good:
        agg = aggregate(good)
        summary["final"] = {
            m: {"mean": agg.mean[m][-1], "ci95": agg.half_width[m][-1]} for m in FIELDS
        }
        summary["stationarity_average"] = _mean_ci([stationarity_average(t) for t in good])
        summary["slopes"] = _slopes(good)
        if "csv" in fmts:
            atomic_write_text(out_dir / "aggregate.csv", aggregate_csv(agg))
            files.append("aggregate.csv")
        if "svg" in fmts:
            series = {m: (agg.ks, agg.mean[m]) for m in FIELDS}
            title = f"{s.schedule.regime}, n = {s.problem.n}, p = {s.problem.p}, {agg.seeds} seeds"
            atomic_write_text(out_dir / "convergence.svg", svg_loglog(series, title))
            files.append("convergence.svg")
            for m in FIELDS:
                atomic_write_text(out_dir / f"{m}.dat", dat_text(agg.ks, agg.mean[m]))
                files.append(f"{m}.dat")
    if "json" in fmts:
        atomic_write_text(out_dir / "summary.json", dumps_json(summary))
        files.append("summary.json")
    write_manifest(out_dir, files, {"wall_time": walls})
    return summary, good


def _print_summary(summary: dict) -> None:
    print(f"{summary['regime']}: n = {summary['n']}, p = {summary['p']}, T = {summary['T']}, "
          f"{len(summary['seeds'])} seeds")
    for m, v in summary.get("final", {}).items():
        print(f"  final {m:14s} {v['mean']:.6e} +/- {v['ci95']:.2e}")
    if "stationarity_average" in summary:
        st = summary["stationarity_average"]
        print(f"  mean grad_norm_sq over k < T: {st['mean']:.6e} +/- {st['ci95']:.2e}")
    for d in summary["diverged"]:
        print(f"  seed {d['seed']} diverged at iteration {d['k']} (agent {d['agent']})")


def _points(cfg: ExperimentConfig):
    if cfg.run.sweep_axis is None:
        return [(None, cfg)]
    return [(f"{cfg.run.sweep_axis}_{v}", cfg.with_override(cfg.run.sweep_axis, v)) for v in cfg.run.sweep_values]


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    points = _points(cfg)
    status = EXIT_OK
    for label, pc in points:
        if label:
            print(f"== {label}")
        s = _setup(pc, args.allow_unvalidated)
        _print_report(s)
        if hard_errors(s.diagnostics):
            if s.schedule.allow_unvalidated:
                print("  hard errors allowed by allow_unvalidated")
            else:
                status = EXIT_CONFIG
    return status


def cmd_spectral(args) -> int:
    cfg = load_config(args.config)
    s = _setup(cfg)
    print(dumps_json(_spectral(s)), end="")
    return EXIT_OK


def _check_runnable(setups) -> bool:
    ok = True
    for s in setups:
        errs = hard_errors(s.diagnostics)
        if errs and not s.schedule.allow_unvalidated:
            ok = False
            for d in errs:
                _err(f"{s.cfg.source}: n = {s.problem.n}: {d.message}")
    if not ok:
        _err("schedule fails validation; use --allow-unvalidated to run anyway")
    return ok


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    workers = args.workers if args.workers is not None else cfg.run.workers
    points = [(label, _setup(pc, args.allow_unvalidated)) for label, pc in _points(cfg)]
    if not _check_runnable([s for _, s in points]):
        return EXIT_CONFIG
    root = _out_dir(args, cfg)
    status = EXIT_OK
    finals = []
    for label, s in points:
        out = root / label if label else root
        summary, _ = execute(s, out, workers)
        _print_summary(summary)
        if summary["diverged"]:
            status = EXIT_DIVERGED
        finals.append((label, summary))
    if cfg.run.sweep_axis is not None:
        rows = []
        print(f"{cfg.run.sweep_axis:>8s}  final grad_norm_sq     ci95")
        for (label, summary), v in zip(finals, cfg.run.sweep_values):
            fin = summary.get("final", {}).get("grad_norm_sq")
            rows.append({"value": v, "final_grad_norm_sq": fin})
            if fin:
                print(f"{str(v):>8s}  {fin['mean']:.6e}  {fin['ci95']:.2e}")
            else:
                print(f"{str(v):>8s}  diverged")
        atomic_write_text(root / "sweep.json", dumps_json({"axis": cfg.run.sweep_axis, "rows": rows}))
    return status


def speedup_table(per_n: dict[int, list[float]]) -> dict:
    """Speedup rows from per-seed stationarity averages keyed by n.

    Ratios are relative to the smallest n (n = 1 when present); the
    theoretical ratio sqrt(n0 / n) follows the sqrt(p / (n T)) rate. The
    log-log slope of the means against n has theoretical value -1/2.
    """
    ns = sorted(per_n)
    n0 = ns[0]
    base = float(np.mean(per_n[n0]))
    rows = []
    for n in ns:
        mc = _mean_ci(per_n[n])
        rows.append({
            "n": n,
            "mean": mc["mean"],
            "ci95": mc["ci95"],
            "ratio": mc["mean"] / base,
            "theory_ratio": math.sqrt(n0 / n),
        })
    slope = None
    if len(ns) >= 2:
        slope = float(np.polyfit(np.log(ns), np.log([r["mean"] for r in rows]), 1)[0])
    return {"baseline_n": n0, "rows": rows, "slope_vs_n": slope, "theory_slope_vs_n": -0.5}


def cmd_sweep_speedup(args) -> int:
    cfg = load_config(args.config)
    try:
        ns = sorted({int(v) for v in args.n.split(",") if v.strip()})
    except ValueError:
        _err(f"--n must be a comma-separated list of integers, got {args.n!r}")
        return EXIT_CONFIG
    if not ns or ns[0] < 1:
        _err("--n needs positive agent counts")
        return EXIT_CONFIG
    if cfg.schedule.get("regime") not in ("pd_speedup", "primal_speedup"):
        _err(f"sweep-speedup needs a speedup regime, config has {cfg.schedule.get('regime')!r}")
        return EXIT_CONFIG
    workers = args.workers if args.workers is not None else cfg.run.workers
    setups = {n: _setup(cfg.with_override("n", n), args.allow_unvalidated) for n in ns}
    if not _check_runnable(setups.values()):
        return EXIT_CONFIG
    root = _out_dir(args, cfg)
    per_n, status = {}, EXIT_OK
    for n, s in setups.items():
        summary, good = execute(s, root / f"n_{n}", workers)
        if summary["diverged"]:
            status = EXIT_DIVERGED
        if good:
            per_n[n] = [stationarity_average(t) for t in good]
        else:
            _err(f"n = {n}: every seed diverged")
    if not per_n:
        return EXIT_DIVERGED
    table = speedup_table(per_n)
    print(f"{'n':>5s}  {'mean (1/T) sum |grad f|^2':>26s}  {'ci95':>9s}  {'ratio':>8s}  {'theory':>8s}")
    for r in table["rows"]:
        print(f"{r['n']:>5d}  {r['mean']:>26.6e}  {r['ci95']:>9.2e}  {r['ratio']:>8.4f}  {r['theory_ratio']:>8.4f}")
    if table["slope_vs_n"] is not None:
        print(f"log-log slope vs n: {table['slope_vs_n']:.4f} (theory {table['theory_slope_vs_n']})")
    lines = ["n,mean,ci95,ratio,theory_ratio"]
    lines += [",".join([str(r["n"])] + [fmt(r[c]) for c in ("mean", "ci95", "ratio", "theory_ratio")]) for r in table["rows"]]
    atomic_write_text(root / "speedup.csv", "\n".join(lines) + "\n")
    atomic_write_text(root / "speedup.json", dumps_json(table))
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dzo", description="Distributed zeroth-order optimization experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a schedule against its preconditions")
    p.add_argument("config")
    p.add_argument("--allow-unvalidated", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("spectral", help="print the graph spectrum and parameter advisors")
    p.add_argument("config")
    p.set_defaults(func=cmd_spectral)

    for name, func, help_ in (
        ("run", cmd_run, "run all seeds (and sweep points) of a config"),
        ("sweep-speedup", cmd_sweep_speedup, "measure speedup in the number of agents"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("--out", help=f"output directory (default: config, ${ENV_OUT_DIR}, ./{DEFAULT_OUT_DIR})")
        p.add_argument("--allow-unvalidated", action="store_true")
        p.add_argument("--workers", type=int, help="processes used to run seeds in parallel")
        if name == "sweep-speedup":
            p.add_argument("--n", required=True, help="comma-separated agent counts, e.g. 1,4,16")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
