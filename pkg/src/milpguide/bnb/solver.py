"""LP-based branch and bound with strict branching priorities."""
from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..milp.instance import MilpInstance
from ..milp.presolve import presolve
from ..milp.simplex import LpSolution, NumericalError, SimplexLP
from .config import BranchPriority, Limits, SolverConfig
from .heuristics import FRAC_TOL, diving_heuristic, frac_distance, rounding_heuristic

_DIVE_PERIOD = 20


class PreconditionError(ValueError):
    pass


@dataclass
class SolveResult:
    status: str                      # optimal | feasible | infeasible | limit | unbounded
    x: np.ndarray | None
    objective: float
    node_count: int
    lp_iterations: int
    wall_time: float
    primal_trace: list = field(default_factory=list)   # (elapsed s, lp iterations, primal bound)
    gap: float = math.inf
    dual_bound: float = -math.inf
    search_log: list | None = None
    numerical_failures: int = 0

    @property
    def runtime_key(self) -> tuple[int, int]:
        return (self.node_count, self.lp_iterations)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": None if not math.isfinite(self.objective) else self.objective,
            "node_count": self.node_count,
            "lp_iterations": self.lp_iterations,
            "wall_time": self.wall_time,
            "gap": None if not math.isfinite(self.gap) else self.gap,
            "dual_bound": None if not math.isfinite(self.dual_bound) else self.dual_bound,
            "primal_trace": [list(t) for t in self.primal_trace],
            "x": None if self.x is None else self.x.tolist(),
        }


class Pseudocosts:
    def __init__(self, n: int):
        self.sum = np.zeros((2, n))
        self.cnt = np.zeros((2, n))

    def update(self, j: int, up: bool, gain: float, delta: float):
        if delta > 1e-9 and math.isfinite(gain):
            self.sum[int(up), j] += max(gain, 0.0) / delta
            self.cnt[int(up), j] += 1

    def score(self, cand: np.ndarray, f: np.ndarray) -> np.ndarray:
        psi = []
        for d in (0, 1):
            c = self.cnt[d]
            avg = float(self.sum[d][c > 0].sum() / c[c > 0].sum()) if np.any(c > 0) else 1.0
            cc = c[cand]
            psi.append(np.where(cc > 0, self.sum[d, cand] / np.maximum(cc, 1), avg))
        return np.maximum(psi[0] * f, 1e-6) * np.maximum(psi[1] * (1.0 - f), 1e-6)


def branch_select(x, int_idx, priorities, config: SolverConfig | None = None, *,
                  pseudocosts: Pseudocosts | None = None, rng: np.random.Generator | None = None,
                  decayed: np.ndarray | None = None) -> int:
    """Pick the branching variable: highest priority first, then the configured rule, then index."""
    config = config or SolverConfig()
    x = np.asarray(x, dtype=float)
    int_idx = np.asarray(int_idx, dtype=np.int64)
    prio = np.asarray(priorities)
    dist = frac_distance(x, int_idx)
    mask = dist > FRAC_TOL
    if not mask.any():
        raise PreconditionError("no fractional integer variable to branch on")
    cand = int_idx[mask]
    p = prio[cand].astype(np.int64)
    if decayed is not None:
        p = np.where(decayed[cand] & (p > 0), p // 2, p)
    top = p == p.max()
    cand, dist = cand[top], dist[mask][top]
    if config.branching_rule == "most_fractional":
        score = dist
    elif config.branching_rule == "pseudocost":
        f = x[cand] - np.floor(x[cand])
        score = (pseudocosts or Pseudocosts(x.shape[0])).score(cand, f)
    else:
        score = (rng or np.random.default_rng(config.seed)).random(cand.size)
    best = np.flatnonzero(score >= score.max() - 1e-12)
    pick = cand[best]
    return int(pick.max() if config.tie_break == "reverse_index" else pick.min())


@dataclass
class _Node:
    id: int
    parent: int
    depth: int
    bound: float
    changes: dict
    basis: object = None
    branch: tuple | None = None   # (var, up?, delta, parent objective)


class _Search:
    def __init__(self, inst: MilpInstance, config: SolverConfig, prio: dict, limits: Limits, keep_log: bool):
        self.t0 = time.perf_counter()
        self.orig = inst
        self.cfg = config
        self.limits = limits
        self.keep_log = keep_log
        self.log: list[dict] = []
        self.pres = None
        self.infeasible_early = False
        work = inst
        if config.presolve == "basic":
            self.pres = presolve(inst)
            if self.pres.infeasible:
                self.infeasible_early = True
                return
            work = self.pres.instance
            prio = self.pres.map_priorities(prio)
            self.col_map = self.pres.col_map
        else:
            self.col_map = np.arange(inst.n)
        self.work = work
        self.n = work.n
        self.lp = SimplexLP(work)
        self.ints = work.int_set
        self.prio = BranchPriority(prio).array(work.n)
        self.root_lb, self.root_ub = work.lb.copy(), work.ub.copy()
        self.general = np.zeros(work.n, dtype=bool)
        self.general[self.ints] = True
        self.general &= ~work.is_binary
        cont = np.ones(work.n, dtype=bool)
        cont[self.ints] = False
        c_int = work.obj[self.ints]
        self.obj_integral = (not np.any(work.obj[cont] != 0.0)) and bool(np.all(c_int == np.round(c_int)))
        self.offset = work.obj_offset
        self.rng = np.random.default_rng(config.seed)
        self.pc = Pseudocosts(work.n)
        self.inc_x = None
        self.inc_obj = math.inf     # in work space, offset excluded
        self.trace: list = []
        self.nodes = 0
        self.lp_iters = 0
        self.failures = 0
        self.unbounded = False
        self.open: dict[int, _Node] = {}
        self.heap: list = []
        self.stack: list = []
        self.next_child = None
        self.plunge = 0
        self.seq = 0

    # -- bookkeeping ---------------------------------------------------------
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def _push(self, node: _Node):
        self.open[node.id] = node
        heapq.heappush(self.heap, (node.bound, node.id))
        self.stack.append(node.id)

    def _global_bound(self) -> float:
        while self.heap and self.heap[0][1] not in self.open:
            heapq.heappop(self.heap)
        return self.heap[0][0] if self.heap else math.inf

    def _select(self) -> _Node:
        mode = self.cfg.node_selection
        if mode == "hybrid" and self.next_child is not None and self.next_child in self.open:
            return self.open.pop(self.next_child)
        self.next_child = None
        self.plunge = 0
        if mode == "depth_first":
            while True:
                nid = self.stack.pop()
                if nid in self.open:
                    return self.open.pop(nid)
        self._global_bound()
        _, nid = heapq.heappop(self.heap)
        return self.open.pop(nid)

    def _gap_tol(self) -> float:
        return self.limits.gap * max(1.0, abs(self.inc_obj + self.offset))

    def _prunable(self, bound: float) -> bool:
        if not math.isfinite(self.inc_obj):
            return False
        if self.cfg.incumbent_cut == "on":
            b = math.ceil(bound - 1e-6) if self.obj_integral else bound
            return b >= self.inc_obj - max(self._gap_tol(), 1e-9)
        return bound > self.inc_obj + 1e-9

    def _closed(self, global_bound: float) -> bool:
        if not math.isfinite(self.inc_obj):
            return False
        b = math.ceil(global_bound - 1e-6) if self.obj_integral and math.isfinite(global_bound) else global_bound
        return self.inc_obj - b <= self._gap_tol()

    def _bounds(self, node: _Node):
        lb, ub = self.root_lb.copy(), self.root_ub.copy()
        for j, (lo, hi) in node.changes.items():
            lb[j], ub[j] = lo, hi
        return lb, ub

    def _lp(self, lb, ub, basis) -> LpSolution | None:
        warm = basis if self.cfg.warm_start == "on" else None
        try:
            sol = self.lp.solve(lb, ub, pricing=self.cfg.lp_pricing, warm=warm)
        except NumericalError:
            try:
                sol = self.lp.solve(lb, ub, pricing="bland")
            except NumericalError:
                self.failures += 1
                return None
        self.lp_iters += sol.iterations
        return sol

    def _offer(self, x) -> bool:
        if x is None:
            return False
        x = x.copy()
        x[self.ints] = np.round(x[self.ints])
        if self.work.max_violation(x) > 1e-6:
            return False
        obj = float(self.work.obj @ x)
        if obj >= self.inc_obj - 1e-9:
            return False
        full = self.pres.postsolve(x) if self.pres is not None else x
        if self.orig.max_violation(full) > 1e-6:
            return False
        self.inc_x, self.inc_obj = x, obj
        self.trace.append((self.elapsed(), self.lp_iters, obj + self.offset))
        return True

    # -- node processing -----------------------------------------------------
    def _reduced_cost_fixing(self, sol: LpSolution, lb, ub) -> dict:
        slack = self.inc_obj - sol.objective
        fixes = {}
        d = sol.reduced_costs
        for j in self.ints:
            if lb[j] == ub[j]:
                continue
            if d[j] > 1e-9 and sol.values[j] <= lb[j] + 1e-9:
                span = math.floor(slack / d[j] + 1e-9)
                if lb[j] + span < ub[j]:
                    fixes[int(j)] = (lb[j], lb[j] + span)
            elif d[j] < -1e-9 and sol.values[j] >= ub[j] - 1e-9:
                span = math.floor(slack / -d[j] + 1e-9)
                if ub[j] - span > lb[j]:
                    fixes[int(j)] = (ub[j] - span, ub[j])
        return fixes

    def _record(self, node: _Node, sol, branch_var=None, fractional=None, status="branched"):
        if not self.keep_log:
            return
        rec = {
            "id": node.id, "parent": node.parent, "depth": node.depth,
            "branch_var": None if branch_var is None else int(self.col_map[branch_var]),
            "bound": None if sol is None or not math.isfinite(sol.objective) else sol.objective + self.offset,
            "status": status,
            "primal_bound": None if not math.isfinite(self.inc_obj) else self.inc_obj + self.offset,
        }
        if fractional is not None:
            rec["fractional"] = [int(self.col_map[j]) for j in fractional]
        self.log.append(rec)

    def _process(self, node: _Node):
        if self._prunable(node.bound):
            return
        lb, ub = self._bounds(node)
        sol = self._lp(lb, ub, node.basis)
        self.nodes += 1
        if sol is None:
            self._record(node, None, status="numerical")
            return
        if sol.status == "infeasible":
            self._record(node, sol, status="infeasible")
            return
        if sol.status == "unbounded":
            self.unbounded = True
            self._record(node, sol, status="unbounded")
            return
        if node.branch is not None:
            j, up, delta, parent_obj = node.branch
            self.pc.update(j, up, sol.objective - parent_obj, delta)

        if self.cfg.reprocess == "on" and math.isfinite(self.inc_obj):
            fixes = self._reduced_cost_fixing(sol, lb, ub)
            if fixes:
                node.changes = {**node.changes, **fixes}
                lb, ub = self._bounds(node)
                again = self._lp(lb, ub, sol.basis)
                if again is None or again.status != "optimal":
                    self._record(node, again, status="infeasible")
                    return
                sol = again

        if self._prunable(sol.objective):
            self._record(node, sol, status="pruned")
            return
        dist = frac_distance(sol.values, self.ints)
        frac = self.ints[dist > FRAC_TOL]
        if frac.size == 0:
            self._offer(sol.values)
            self._record(node, sol, status="integral")
            return

        freq = self.cfg.rounding_frequency
        if freq == "every_node" or (freq == "every_10" and self.nodes % 10 == 1):
            x, it = rounding_heuristic(sol, self.work, self.lp, lb, ub, self.cfg.lp_pricing)
            self.lp_iters += it
            self._offer(x)
        dive = self.cfg.diving
        if dive == "root_only" and node.id == 0 or dive == "periodic" and self.nodes % _DIVE_PERIOD == 1:
            cutoff = self.inc_obj
            x, it = diving_heuristic(sol, self.work, self.cfg.diving_depth, self.lp, lb, ub,
                                     self.cfg.lp_pricing, cutoff)
            self.lp_iters += it
            self._offer(x)
        if self._prunable(sol.objective):
            self._record(node, sol, fractional=frac, status="pruned")
            return

        decayed = None
        if self.cfg.priority_decay == "on":
            decayed = self.general & ((lb != self.root_lb) | (ub != self.root_ub))
        j = branch_select(sol.values, self.ints, self.prio, self.cfg, pseudocosts=self.pc,
                          rng=self.rng, decayed=decayed)
        self._record(node, sol, branch_var=j, fractional=frac)
        v = sol.values[j]
        f = v - math.floor(v)
        down = _Node(0, node.id, node.depth + 1, sol.objective, {**node.changes, j: (lb[j], math.floor(v))},
                     sol.basis, (j, False, f, sol.objective))
        up = _Node(0, node.id, node.depth + 1, sol.objective, {**node.changes, j: (math.ceil(v), ub[j])},
                   sol.basis, (j, True, 1.0 - f, sol.objective))
        direction = self.cfg.branching_direction
        up_first = direction == "up_first" or (direction == "auto" and f >= 0.5)
        first, second = (up, down) if up_first else (down, up)
        for child in (first, second):
            self.seq += 1
            child.id = self.seq
        # stack order: preferred child on top
        self._push(second)
        self._push(first)
        if self.cfg.node_selection == "hybrid":
            if self.plunge < self.cfg.plunge_depth:
                self.plunge += 1
                self.next_child = first.id
            else:
                self.next_child = None

    def run(self) -> SolveResult:
        if self.infeasible_early:
            return SolveResult("infeasible", None, math.inf, 0, 0, self.elapsed(), [], math.inf, math.inf,
                               [] if self.keep_log else None)
        self._push(_Node(0, -1, 0, -math.inf, {}))
        status = None
        while self.open:
            gb = self._global_bound()
            if self._closed(gb):
                break
            if self.elapsed() > self.limits.time_limit or (
                    self.limits.node_limit is not None and self.nodes >= self.limits.node_limit):
                status = "limit"
                break
            node = self._select()
            self._process(node)
            if self.unbounded:
                break

        gb = self._global_bound() if self.open else math.inf
        if math.isfinite(self.inc_obj):
            gb = min(gb, self.inc_obj)
        if self.unbounded:
            status = "unbounded"
        elif status == "limit" or self.failures:
            status = "feasible" if self.inc_x is not None else "limit"
        elif self.inc_x is not None:
            status = "optimal"
        else:
            status = "infeasible"
        x = None
        obj = math.inf
        gap = math.inf
        if self.inc_x is not None:
            x = self.pres.postsolve(self.inc_x) if self.pres is not None else self.inc_x.copy()
            obj = self.orig.objective_value(x)
            gap = max(0.0, self.inc_obj - gb) / max(1.0, abs(obj))
        return SolveResult(status, x, obj, self.nodes, self.lp_iters, self.elapsed(), self.trace, gap,
                           gb + self.offset if math.isfinite(gb) else gb,
                           self.log if self.keep_log else None, self.failures)


def solve(instance: MilpInstance, config: SolverConfig | None = None,
          priorities: BranchPriority | dict | None = None, limits: Limits | None = None,
          *, search_log: bool | str | Path = False) -> SolveResult:
    """Branch and bound. ``search_log`` True keeps per-node records; a path also writes them as JSON lines."""
    config = config or SolverConfig()
    limits = limits or Limits()
    if isinstance(priorities, BranchPriority):
        prio = dict(priorities.values)
    else:
        prio = {int(k): int(v) for k, v in (priorities or {}).items()}
    instance.validate()
    bad = sorted(j for j in prio if not 0 <= j < instance.n)
    if bad:
        raise PreconditionError(f"priority indices {bad} are outside 0..{instance.n - 1}")
    search = _Search(instance, config, prio, limits, bool(search_log))
    result = search.run()
    if isinstance(search_log, (str, Path)):
        with open(search_log, "w") as fh:
            for rec in result.search_log or []:
                fh.write(json.dumps(rec) + "\n")
    return result
