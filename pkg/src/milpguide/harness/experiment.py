"""Method-vs-default experiments: per-instance records, summary CSV, scatter and trace data."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

from ..bnb.config import BranchPriority, Limits, SolverConfig
from ..bnb.solver import solve
from ..jobs import pmap
from .metrics import MetricsError, MetricsSummary, MethodStats, primal_gap, primal_integral, summarize

CSV_COLUMNS = ("benchmark", "method", "wins", "mean", "std", "p25", "median", "p75", "improvement_pct")


def _prio_dict(priorities) -> dict:
    if isinstance(priorities, BranchPriority):
        return priorities.values
    return dict(priorities or {})


def _run_one(args):
    name, inst, method, config, priorities, limits = args
    try:
        res = solve(inst, config or SolverConfig(), priorities, limits)
    except Exception as exc:   # recorded, the experiment goes on
        return {"instance": name, "method": method, "status": "error", "error": f"{type(exc).__name__}: {exc}"}
    return {"instance": name, "method": method, "status": res.status,
            "objective": res.objective if res.x is not None else None,
            "node_count": res.node_count, "lp_iterations": res.lp_iterations, "wall_time": res.wall_time,
            "dual_bound": res.dual_bound if math.isfinite(res.dual_bound) else None,
            "trace": [list(t) for t in res.primal_trace],
            "config": (config or SolverConfig()).to_dict(),
            "priorities": {str(k): int(v) for k, v in _prio_dict(priorities).items()}}


def add_metrics(records: list[dict], v_star: dict | None = None) -> dict:
    """Primal bound/gap/integral per record; v* per instance is the best objective seen (or given)."""
    best = dict(v_star or {})
    t_end = {}
    for r in records:
        if r.get("objective") is not None:
            cur = best.get(r["instance"])
            best[r["instance"]] = r["objective"] if cur is None else min(cur, r["objective"])
        if "lp_iterations" in r:
            t_end[r["instance"]] = max(t_end.get(r["instance"], 1), r["lp_iterations"])
    for r in records:
        vs = best.get(r["instance"])
        r["primal_bound"] = r.get("objective")
        ok = r.get("status") != "error" and vs is not None
        r["primal_gap"] = primal_gap(r["objective"], vs) if ok and r.get("objective") is not None else None
        # deterministic integral on the LP-iteration axis
        r["primal_integral"] = (primal_integral([(t[1], t[2]) for t in r["trace"]], t_end[r["instance"]], vs)
                                if ok else None)
        r["solve_time"] = r.get("wall_time")
    return best


def run_experiment(benchmark: str, instances, methods: dict, limits: Limits | None = None, out_dir=None,
                   metric: str = "node_count", jobs: int = 1, v_star: dict | None = None):
    """instances: list of (name, MilpInstance); methods: tag -> fn(name, inst) -> (config, priorities).

    Returns (records, summary). Writes files when out_dir is given.
    """
    limits = limits or Limits()
    jobs_args = []
    for name, inst in instances:
        for tag, fn in methods.items():
            cfg, prio = fn(name, inst)
            jobs_args.append((name, inst, tag, cfg, prio, limits))
    records = pmap(_run_one, jobs_args, jobs)
    best = add_metrics(records, v_star)
    # instances with an error or infeasibility are excluded from wins
    usable = []
    bad = sorted({r["instance"] for r in records if r["status"] in ("error", "infeasible", "unbounded")})
    for r in records:
        rr = dict(r)
        if r["instance"] in bad:
            rr[metric] = None
        usable.append(rr)
    summary = summarize(usable, metric, benchmark, baseline=next(iter(methods)))
    if out_dir is not None:
        write_outputs(Path(out_dir), benchmark, records, summary, best, metric)
    return records, summary


def write_summary_csv(summary: MetricsSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in summary.stats:
            w.writerow([summary.benchmark, s.method, s.wins, repr(s.mean), repr(s.std), repr(s.p25), repr(s.median),
                        repr(s.p75), repr(s.improvement_pct)])


def read_summary_csv(path) -> list[MethodStats]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CSV_COLUMNS:
            raise MetricsError(f"unexpected CSV columns {rd.fieldnames}")
        for row in rd:
            out.append(MethodStats(row["method"], int(row["wins"]), float(row["mean"]), float(row["std"]),
                                   float(row["p25"]), float(row["median"]), float(row["p75"]),
                                   float(row["improvement_pct"])))
    return out


def write_outputs(out: Path, benchmark: str, records, summary: MetricsSummary, v_star: dict, metric: str):
    (out / "records").mkdir(parents=True, exist_ok=True)
    for r in records:
        (out / "records" / f"{r['instance']}__{r['method']}.json").write_text(json.dumps(r, sort_keys=True))
    write_summary_csv(summary, out / "summary.csv")
    base = summary.stats[0].method
    by = {(r["instance"], r["method"]): r for r in records}
    names = sorted({r["instance"] for r in records})
    with open(out / "scatter.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "method", f"{base}_{metric}", f"method_{metric}"])
        for s in summary.stats[1:]:
            for i in names:
                w.writerow([i, s.method, by[(i, base)].get(metric), by[(i, s.method)].get(metric)])
    with open(out / "traces.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "method", "elapsed", "lp_iterations", "primal_bound"])
        for r in records:
            for t in r.get("trace", []):
                w.writerow([r["instance"], r["method"], t[0], t[1], t[2]])
    report = {"benchmark": benchmark, "metric": metric, "summary": [asdict(s) for s in summary.stats],
              "ties": summary.ties, "n_instances": summary.n_instances, "v_star": v_star,
              "appendix_excluded": summary.excluded,
              "errors": [{"instance": r["instance"], "method": r["method"], "error": r["error"]}
                         for r in records if r["status"] == "error"]}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))


def load_records(run_dir) -> list[dict]:
    d = Path(run_dir) / "records"
    files = sorted(d.glob("*.json")) if d.is_dir() else []
    return [json.loads(f.read_text()) for f in files]
