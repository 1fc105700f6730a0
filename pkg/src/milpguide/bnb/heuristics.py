"""Primal heuristics: simple rounding with LP repair, and fractional diving.

Both return ``(x, lp_iterations)`` where ``x`` is None on failure. A point is
only returned after it has been checked against every row, bound and
integrality requirement of the instance.
"""
from __future__ import annotations

import math

import numpy as np

from ..milp.instance import MilpInstance
from ..milp.simplex import LpSolution, NumericalError, SimplexLP

FRAC_TOL = 1e-6
FEAS_TOL = 1e-6


def frac_distance(x: np.ndarray, int_idx: np.ndarray) -> np.ndarray:
    xi = x[int_idx]
    f = xi - np.floor(xi)
    return np.minimum(f, 1.0 - f)


def _accept(inst: MilpInstance, x: np.ndarray):
    x = x.copy()
    ints = inst.int_set
    x[ints] = np.round(x[ints])
    return x if inst.max_violation(x) <= FEAS_TOL else None


def rounding_heuristic(sol: LpSolution, instance: MilpInstance, lp: SimplexLP | None = None,
                       lb=None, ub=None, pricing: str = "dantzig"):
    """Round integer variables to the nearest value, then re-solve the LP over the continuous ones."""
    if sol.status != "optimal":
        return None, 0
    lb = instance.lb if lb is None else lb
    ub = instance.ub if ub is None else ub
    x = sol.values
    ints = instance.int_set
    if ints.size == 0 or np.all(frac_distance(x, ints) <= FRAC_TOL):
        if instance.max_violation(x) <= FEAS_TOL:
            return x.copy(), 0
    xr = x.copy()
    xr[ints] = np.clip(np.round(x[ints]), lb[ints], ub[ints])
    n_cont = instance.n - ints.size
    if n_cont == 0:
        return _accept(instance, xr), 0
    lp = lp or SimplexLP(instance)
    lo, hi = lb.copy(), ub.copy()
    lo[ints] = hi[ints] = xr[ints]
    try:
        fix = lp.solve(lo, hi, pricing=pricing, warm=sol.basis)
    except NumericalError:
        return None, 0
    if fix.status != "optimal":
        return None, fix.iterations
    return _accept(instance, fix.values), fix.iterations


def diving_heuristic(sol: LpSolution, instance: MilpInstance, depth_budget: int, lp: SimplexLP | None = None,
                     lb=None, ub=None, pricing: str = "dantzig", cutoff: float = math.inf):
    """Up-rounding dive with a one-step backtrack.

    Each step rounds up the ceil(#fractional / remaining steps) variables with
    the largest fractional parts, so the dive can reach an integral LP point
    within its budget. If that LP fails, only the top variable is rounded down
    instead; a second failure ends the dive.
    """
    if sol.status != "optimal":
        return None, 0
    lp = lp or SimplexLP(instance)
    lo = (instance.lb if lb is None else lb).copy()
    hi = (instance.ub if ub is None else ub).copy()
    ints = instance.int_set
    cur = sol
    iters = 0

    def attempt(l2, h2):
        nonlocal iters
        try:
            nxt = lp.solve(l2, h2, pricing=pricing, warm=cur.basis)
        except NumericalError:
            return None
        iters += nxt.iterations
        if nxt.status != "optimal" or nxt.objective >= cutoff - 1e-9:
            return None
        return nxt

    for step in range(depth_budget):
        x = cur.values
        frac = np.flatnonzero(frac_distance(x, ints) > FRAC_TOL)
        if frac.size == 0:
            break
        js = ints[frac]
        f = x[js] - np.floor(x[js])
        k = max(1, math.ceil(frac.size / (depth_budget - step)))
        pick = js[np.argsort(-f, kind="stable")[:k]]
        l2, h2 = lo.copy(), hi.copy()
        l2[pick] = np.ceil(x[pick])
        nxt = attempt(l2, h2)
        if nxt is None:
            l2, h2 = lo.copy(), hi.copy()
            h2[pick[0]] = math.floor(x[pick[0]])
            nxt = attempt(l2, h2)
            if nxt is None:
                return None, iters
        lo, hi, cur = l2, h2, nxt
    x, more = rounding_heuristic(cur, instance, lp, lo, hi, pricing)
    return x, iters + more
