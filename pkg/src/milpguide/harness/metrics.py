"""Primal gap, primal integral and the per-method summary statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EPS = 1e-8
UNDEFINED = None   # primal gap when v and v* have opposite signs


class MetricsError(ValueError):
    pass


def primal_gap(v: float, v_star: float, eps: float = EPS):
    """|v - v*| / max(|v*|, eps); None (undefined) when v * v* < 0."""
    if v is None or not math.isfinite(v):
        raise MetricsError("primal value must be finite")
    if v * v_star < 0:
        return UNDEFINED
    return abs(v - v_star) / max(abs(v_star), eps)


def capped_gap(v, v_star, eps: float = EPS) -> float:
    """Gap used for integration: 1 with no incumbent or an undefined gap, else min(1, PG)."""
    if v is None or not math.isfinite(v):
        return 1.0
    pg = primal_gap(v, v_star, eps)
    return 1.0 if pg is UNDEFINED else min(1.0, pg)


def primal_integral(trace, t_end: float, v_star: float, eps: float = EPS) -> float:
    """Integral of the right-continuous step function PG(t) over [0, t_end].

    ``trace`` holds (t, v) pairs or (t, _, v) triples with non-decreasing t; the
    prefix before the first incumbent counts as PG = 1.
    """
    if not t_end > 0:
        raise MetricsError("t_end must be positive")
    pts = [(float(p[0]), float(p[-1])) for p in trace]
    for (t0, _), (t1, _) in zip(pts, pts[1:]):
        if t1 < t0:
            raise MetricsError("trace timestamps must be non-decreasing")
    total, t_prev, g_prev = 0.0, 0.0, 1.0
    for t, v in pts:
        if t >= t_end:
            break
        t = max(t, 0.0)
        total += g_prev * (t - t_prev)
        t_prev, g_prev = t, capped_gap(v, v_star, eps)
    return total + g_prev * (t_end - t_prev)


def primal_bound_at(trace, t: float) -> float:
    """Incumbent value in force at time t (inf if none)."""
    best = math.inf
    for p in trace:
        if float(p[0]) > t:
            break
        best = float(p[-1])
    return best


@dataclass
class MethodStats:
    method: str
    wins: int
    mean: float
    std: float
    p25: float
    median: float
    p75: float
    improvement_pct: float


@dataclass
class MetricsSummary:
    benchmark: str
    metric: str
    stats: list
    ties: int = 0
    excluded: list = field(default_factory=list)
    n_instances: int = 0

    def row(self, method: str) -> MethodStats:
        for s in self.stats:
            if s.method == method:
                return s
        raise KeyError(method)


def describe(values) -> dict:
    a = np.asarray(values, dtype=float)
    return {"mean": float(np.mean(a)), "std": float(np.std(a)), "p25": float(np.percentile(a, 25)),
            "median": float(np.percentile(a, 50)), "p75": float(np.percentile(a, 75))}


def improvement_pct(mean_default: float, mean_method: float) -> float:
    if mean_default == 0:
        return 0.0 if mean_method == 0 else -math.inf
    return (mean_default - mean_method) / mean_default * 100.0


def summarize(records, metric: str, benchmark: str = "", baseline: str = "default") -> MetricsSummary:
    """records: dicts with keys instance, method and ``metric`` (lower is better; None = excluded).

    Wins count strict improvements over the other methods on the same instance;
    instances with a missing value for any method are excluded and listed.
    """
    table: dict = {}
    methods: list = []
    for r in records:
        if r["method"] not in methods:
            methods.append(r["method"])
        table.setdefault(r["instance"], {})[r["method"]] = r.get(metric)
    if baseline in methods:
        methods.remove(baseline)
        methods.insert(0, baseline)
    missing = [i for i, row in table.items() if any(m not in row for m in methods)]
    if missing:
        raise MetricsError(f"instances without a record for every method: {missing}")
    excluded = [i for i, row in table.items() if any(row[m] is None or not math.isfinite(row[m]) for m in methods)]
    keep = [i for i in table if i not in excluded]
    if not keep:
        raise MetricsError("no instance has a usable value for every method")
    wins = {m: 0 for m in methods}
    ties = 0
    for i in keep:
        vals = {m: table[i][m] for m in methods}
        best = min(vals.values())
        winners = [m for m, v in vals.items() if v == best]
        if len(winners) == 1:
            wins[winners[0]] += 1
        else:
            ties += 1
    stats = []
    base_mean = describe([table[i][methods[0]] for i in keep])["mean"]
    for m in methods:
        d = describe([table[i][m] for i in keep])
        stats.append(MethodStats(m, wins[m], d["mean"], d["std"], d["p25"], d["median"], d["p75"],
                                 0.0 if m == methods[0] else improvement_pct(base_mean, d["mean"])))
    return MetricsSummary(benchmark, metric, stats, ties, excluded, len(table))
