"""Configuration sampling, cutoff-limited labelling and contrastive sets."""
from __future__ import annotations

import math
import warnings

import numpy as np

from ..bnb.config import OPTIONS, PARAM_NAMES, Limits, SolverConfig, decode_config, encode_config, random_config
from ..bnb.solver import solve
from ..features import BipartiteGraph, to_bipartite
from ..harness.metrics import primal_integral
from ..jobs import pmap
from ..milp.instance import MilpInstance
from ..neural.model import GatModel, forward
from .backdoor import N_SWAPS, GuidanceError

FRACTION = 0.15
MIN_CONFIGS = 8


def sample_configs(count: int, seed: int = 0) -> list[SolverConfig]:
    rng = np.random.default_rng(seed)
    return [random_config(rng) for _ in range(count)]


def evaluate_config(instance: MilpInstance, cfg: SolverConfig, cutoff: Limits) -> dict:
    """Solve under the cutoff; the primal trace is kept on the LP-iteration axis."""
    res = solve(instance, cfg, None, cutoff)
    return {"config": cfg.to_dict(), "status": res.status,
            "primal_bound": res.objective if res.x is not None else None,
            "node_count": res.node_count, "lp_iterations": res.lp_iterations, "wall_time": res.wall_time,
            "trace": [[int(t[1]), float(t[2])] for t in res.primal_trace]}


def _eval_job(args):
    return evaluate_config(*args)


def add_integrals(records: list[dict]) -> float | None:
    """Fill in primal_integral for each record against the best bound found; returns v*."""
    vals = [r["primal_bound"] for r in records if r["primal_bound"] is not None]
    if not vals:
        for r in records:
            r["primal_integral"] = None
        return None
    v_star = min(vals)
    t_end = max(1, max(r["lp_iterations"] for r in records))
    for r in records:
        r["primal_integral"] = primal_integral(r["trace"], t_end, v_star)
    return v_star


def outcome_key(r: dict) -> tuple:
    pb = r["primal_bound"]
    return (math.inf if pb is None else pb, r["primal_integral"])


def local_improve_config(instance: MilpInstance, start: dict, cutoff: Limits, swaps: int = N_SWAPS,
                         seed: int = 0) -> list[dict]:
    """Change one parameter of the incumbent config ``swaps`` times; keep strict improvements by primal bound."""
    rng = np.random.default_rng(seed)
    cur, accepted = start, []
    for _ in range(swaps):
        d = dict(cur["config"])
        name = PARAM_NAMES[int(rng.integers(len(PARAM_NAMES)))]
        others = [o for o in OPTIONS[name] if o != d[name]]
        d[name] = others[int(rng.integers(len(others)))]
        rec = evaluate_config(instance, SolverConfig.from_dict(d), cutoff)
        pb_new = math.inf if rec["primal_bound"] is None else rec["primal_bound"]
        pb_cur = math.inf if cur["primal_bound"] is None else cur["primal_bound"]
        if pb_new < pb_cur or (pb_new == pb_cur and rec["lp_iterations"] < cur["lp_iterations"]):
            rec["provenance"] = "locally_improved"
            cur = rec
            accepted.append(rec)
    return accepted


def collect_configs(instance: MilpInstance, count: int = 20, cutoff: Limits | None = None, seed: int = 0,
                    swaps: int = N_SWAPS, jobs: int = 1) -> dict:
    if count < MIN_CONFIGS:
        raise GuidanceError(f"need at least {MIN_CONFIGS} configurations, got {count}")
    cutoff = cutoff or Limits(node_limit=200)
    cfgs = sample_configs(count, seed)
    recs = pmap(_eval_job, [(instance, c, cutoff) for c in cfgs], jobs)
    for r in recs:
        r["provenance"] = "sampled"
    if swaps > 0:
        start = min(recs, key=lambda r: (math.inf if r["primal_bound"] is None else r["primal_bound"],
                                         r["lp_iterations"]))
        recs += local_improve_config(instance, start, cutoff, swaps, seed + 1)
    v_star = add_integrals(recs)
    return {"records": recs, "v_star": v_star, "seed": seed,
            "cutoff": cutoff.to_dict()}


def contrast_sets(records: list[dict], fraction: float = FRACTION):
    """(positives, negatives) one-hot arrays, or None when there is no contrast."""
    if all(r["primal_bound"] is None for r in records):
        warnings.warn("no configuration found a feasible solution at the cutoff; instance skipped", stacklevel=2)
        return None
    keys = [outcome_key(r) for r in records]
    if len(set(keys)) == 1:
        warnings.warn("all configurations gave identical outcomes; instance skipped", stacklevel=2)
        return None
    k = max(1, int(round(fraction * len(records))))
    order = sorted(range(len(records)), key=lambda i: keys[i])
    pos, neg = order[:k], order[-k:]
    worst_pos = keys[pos[-1]]
    neg = [i for i in neg if keys[i] > worst_pos and i not in pos]
    enc = {i: encode_config(SolverConfig.from_dict(records[i]["config"])) for i in pos + neg}
    pos_rows = {enc[i].tobytes() for i in pos}
    neg = [i for i in neg if enc[i].tobytes() not in pos_rows]
    if not neg:
        warnings.warn("extreme groups do not differ; instance skipped", stacklevel=2)
        return None
    return np.stack([enc[i] for i in pos]), np.stack([enc[i] for i in neg])


def infer_config(model: GatModel, instance: MilpInstance, graph: BipartiteGraph | None = None) -> SolverConfig:
    graph = graph or to_bipartite(instance)
    return decode_config(forward(model, graph))
