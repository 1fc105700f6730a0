"""Backdoor candidates: fractionality-weighted sampling, solver-based labels,
ranking pairs and inference-time selection."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..bnb.config import BranchPriority, Limits, SolverConfig
from ..bnb.solver import solve
from ..features import BipartiteGraph, to_bipartite
from ..jobs import pmap
from ..milp.instance import MilpInstance
from ..milp.simplex import LpSolution, lp_relax_solve
from ..neural.model import GatModel, score_backdoors

K_B = 8
EPS_FRAC = 0.01
N_SIDE = 15          # fastest / slowest group size
MIN_CANDIDATES = 2 * N_SIDE
N_INFER = 50
N_SWAPS = 10


class GuidanceError(ValueError):
    pass


@dataclass
class BackdoorCandidate:
    members: tuple
    provenance: str = "fractionality_sampled"
    record: dict | None = None

    def to_dict(self) -> dict:
        return {"members": list(self.members), "provenance": self.provenance, "record": self.record}

    @classmethod
    def from_dict(cls, d: dict) -> "BackdoorCandidate":
        return cls(tuple(int(j) for j in d["members"]), d.get("provenance", "fractionality_sampled"), d.get("record"))


def fractionality(instance: MilpInstance, root_lp: LpSolution) -> np.ndarray:
    ints = instance.int_set
    x = root_lp.values[ints]
    return np.abs(x - np.round(x))


def sampling_weights(instance: MilpInstance, root_lp: LpSolution, eps: float = EPS_FRAC) -> np.ndarray:
    w = fractionality(instance, root_lp) + eps
    return w / w.sum()


def sample_backdoor_candidates(instance: MilpInstance, root_lp: LpSolution, count: int = N_INFER,
                               k: int = K_B, seed: int = 0, eps: float = EPS_FRAC) -> list[BackdoorCandidate]:
    if root_lp is None or root_lp.status != "optimal":
        raise GuidanceError("root LP must be solved to optimality before sampling candidates")
    ints = instance.int_set
    if ints.size < k:
        raise GuidanceError(f"instance has {ints.size} integer variables, fewer than the backdoor size {k}")
    p = sampling_weights(instance, root_lp, eps)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        pick = rng.choice(ints.size, size=k, replace=False, p=p)
        out.append(BackdoorCandidate(tuple(sorted(int(j) for j in ints[pick]))))
    return out


def proxy_key(record: dict) -> tuple:
    """Sort key: completed runs first, then node count, then LP iterations."""
    censored = record["status"] not in ("optimal", "infeasible")
    return (int(censored), int(record["node_count"]), int(record["lp_iterations"]))


def evaluate_backdoor(instance: MilpInstance, B, limits: Limits | None = None,
                      config: SolverConfig | None = None) -> dict:
    B = [int(j) for j in B]
    ints = set(instance.int_set.tolist())
    if any(j not in ints for j in B):
        raise GuidanceError("backdoor members must be integer variables")
    res = solve(instance, config or SolverConfig(), BranchPriority.from_set(B), limits or Limits())
    return {"node_count": res.node_count, "lp_iterations": res.lp_iterations, "wall_time": res.wall_time,
            "status": res.status, "objective": res.objective if res.x is not None else None}


def _eval_job(args):
    instance, members, limits = args
    return evaluate_backdoor(instance, members, limits)


def local_improve(instance: MilpInstance, root_lp: LpSolution, start: BackdoorCandidate, limits: Limits,
                  swaps: int = N_SWAPS, seed: int = 0) -> list[BackdoorCandidate]:
    """Swap one member for a non-member ``swaps`` times, keeping strict improvements.

    Returns the accepted candidates in acceptance order.
    """
    rng = np.random.default_rng(seed)
    ints = instance.int_set
    w = sampling_weights(instance, root_lp)
    cur, accepted = start, []
    for _ in range(swaps):
        members = list(cur.members)
        free = np.array([i for i, j in enumerate(ints) if int(j) not in cur.members], dtype=np.int64)
        if free.size == 0:
            break
        out_pos = int(rng.integers(len(members)))
        pf = w[free] / w[free].sum()
        new = int(ints[free[int(rng.choice(free.size, p=pf))]])
        members[out_pos] = new
        cand = BackdoorCandidate(tuple(sorted(members)), "locally_improved")
        cand.record = evaluate_backdoor(instance, cand.members, limits)
        if proxy_key(cand.record) < proxy_key(cur.record):
            cur = cand
            accepted.append(cand)
    return accepted


def collect_backdoors(instance: MilpInstance, count: int = MIN_CANDIDATES, limits: Limits | None = None,
                      seed: int = 0, k: int = K_B, swaps: int = N_SWAPS, jobs: int = 1,
                      root_lp: LpSolution | None = None) -> dict:
    """Sample, evaluate and locally improve candidates for one instance."""
    limits = limits or Limits()
    root_lp = root_lp or lp_relax_solve(instance)
    cands = sample_backdoor_candidates(instance, root_lp, count, k, seed)
    recs = pmap(_eval_job, [(instance, c.members, limits) for c in cands], jobs)
    for c, r in zip(cands, recs):
        c.record = r
    if swaps > 0:
        best = min(cands, key=lambda c: proxy_key(c.record))
        cands += local_improve(instance, root_lp, best, limits, swaps, seed + 1)
    base = solve(instance, SolverConfig(), None, limits)
    return {"candidates": [c.to_dict() for c in cands],
            "baseline": {"node_count": base.node_count, "lp_iterations": base.lp_iterations,
                         "wall_time": base.wall_time, "status": base.status,
                         "objective": base.objective if base.x is not None else None},
            "seed": seed, "k": k, "limits": limits.to_dict()}


def rank_pairs(records: list[dict], n_side: int = N_SIDE) -> np.ndarray | None:
    """(i, j, y) pairs between the n_side best and n_side worst candidates.

    y = +1 means candidate i has the better proxy. Tied pairs are dropped and
    the listing order alternates so both labels occur. Returns None (with a
    warning) when fewer than 2 * n_side candidates are available.
    """
    if len(records) < 2 * n_side:
        warnings.warn(f"only {len(records)} candidates; need {2 * n_side}, instance skipped", stacklevel=2)
        return None
    keys = [proxy_key(r) for r in records]
    order = sorted(range(len(records)), key=lambda i: keys[i])
    fast, slow = order[:n_side], order[-n_side:]
    pairs = []
    for a in fast:
        for b in slow:
            if keys[a] == keys[b]:
                continue
            y = 1 if keys[a] < keys[b] else -1
            pairs.append((a, b, y) if len(pairs) % 2 == 0 else (b, a, -y))
    return np.array(pairs, dtype=np.int64).reshape(-1, 3)


def infer_backdoor(model: GatModel, instance: MilpInstance, count: int = N_INFER, k: int = K_B, seed: int = 0,
                   graph: BipartiteGraph | None = None, root_lp: LpSolution | None = None):
    """Sample ``count`` candidates, score them, return (priority, members, scores) for the argmax."""
    root_lp = root_lp or lp_relax_solve(instance)
    graph = graph or to_bipartite(instance, root_lp)
    cands = sample_backdoor_candidates(instance, root_lp, count, k, seed)
    scores = score_backdoors(model, graph, [c.members for c in cands])
    best = int(np.argmax(scores))   # first maximum on ties
    return BranchPriority.from_set(cands[best].members), cands[best].members, scores


def random_backdoor(instance: MilpInstance, count: int = N_INFER, k: int = K_B, seed: int = 0,
                    root_lp: LpSolution | None = None, pick_seed: int = 0):
    """Baseline: one of the same sampled candidates chosen uniformly at random."""
    root_lp = root_lp or lp_relax_solve(instance)
    cands = sample_backdoor_candidates(instance, root_lp, count, k, seed)
    c = cands[int(np.random.default_rng(pick_seed).integers(len(cands)))]
    return BranchPriority.from_set(c.members), c.members
