"""Basic presolve: empty rows, singleton rows, integer bound tightening, fixed columns.

Every rule keeps the set of feasible integer points unchanged, so the
reduced problem has the same optimal objective (after adding back the
constant picked up from fixed columns).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instance import MilpInstance

_TOL = 1e-9
_INT_TOL = 1e-6


@dataclass
class PresolveResult:
    instance: MilpInstance | None
    infeasible: bool
    col_map: np.ndarray        # reduced column k -> original column
    row_map: np.ndarray        # reduced row k -> original row
    fixed: np.ndarray          # original-length, NaN where the column was kept
    n_original: int
    log: list[dict] = field(default_factory=list)

    def postsolve(self, x_reduced) -> np.ndarray:
        x = self.fixed.copy()
        x[self.col_map] = np.asarray(x_reduced, dtype=float)
        return x

    def reduce_vector(self, x_original) -> np.ndarray:
        return np.asarray(x_original, dtype=float)[self.col_map]

    def map_priorities(self, priorities: dict[int, int]) -> dict[int, int]:
        pos = {int(j): k for k, j in enumerate(self.col_map)}
        return {pos[j]: p for j, p in priorities.items() if j in pos}


def presolve(inst: MilpInstance, max_passes: int = 20) -> PresolveResult:
    n, m = inst.n, inst.m
    A = inst.A.tocsr()
    AC = inst.A.tocsc()
    lb = inst.lb.copy()
    ub = inst.ub.copy()
    rhs = inst.rhs.copy()
    sense = inst.sense
    isint = inst.is_integer
    row_on = np.ones(m, dtype=bool)
    col_on = np.ones(n, dtype=bool)
    fixed = np.full(n, np.nan)
    offset = inst.obj_offset
    log: list[dict] = []

    def fail(reason, **info):
        log.append({"rule": "infeasible", "reason": reason, **info})
        return PresolveResult(None, True, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                              fixed, n, log)

    def round_int(j):
        if isint[j]:
            lb[j] = math.ceil(lb[j] - _INT_TOL) if np.isfinite(lb[j]) else lb[j]
            ub[j] = math.floor(ub[j] + _INT_TOL) if np.isfinite(ub[j]) else ub[j]

    for j in np.flatnonzero(isint):
        round_int(j)

    changed = True
    passes = 0
    while changed and passes < max_passes:
        changed = False
        passes += 1

        if np.any(lb > ub + _TOL):
            j = int(np.flatnonzero(lb > ub + _TOL)[0])
            return fail("crossed bounds", col=j)

        # fixed columns
        for j in np.flatnonzero(col_on & (ub - lb <= _TOL)):
            v = lb[j]
            lo, hi = AC.indptr[j], AC.indptr[j + 1]
            rows, vals = AC.indices[lo:hi], AC.data[lo:hi]
            rhs[rows] -= vals * v
            offset += inst.obj[j] * v
            col_on[j] = False
            fixed[j] = v
            changed = True
            log.append({"rule": "fixed_column", "col": int(j), "value": float(v)})

        for i in np.flatnonzero(row_on):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            cols, vals = A.indices[lo:hi], A.data[lo:hi]
            keep = col_on[cols]
            cols, vals = cols[keep], vals[keep]
            s, r = sense[i], rhs[i]
            if cols.size == 0:
                if (s == "L" and r < -_TOL) or (s == "G" and r > _TOL) or (s == "E" and abs(r) > _TOL):
                    return fail("empty row violated", row=int(i))
                row_on[i] = False
                changed = True
                log.append({"rule": "empty_row", "row": int(i)})
                continue
            if cols.size == 1:
                j, a = int(cols[0]), float(vals[0])
                v = r / a
                new_lb, new_ub = lb[j], ub[j]
                if s == "E":
                    new_lb, new_ub = max(lb[j], v), min(ub[j], v)
                    if isint[j] and abs(v - round(v)) > _INT_TOL:
                        return fail("singleton equality forces fractional integer", row=int(i), col=j)
                elif (s == "L") == (a > 0):
                    new_ub = min(ub[j], v)
                else:
                    new_lb = max(lb[j], v)
                lb[j], ub[j] = new_lb, new_ub
                round_int(j)
                if lb[j] > ub[j] + _TOL:
                    return fail("singleton row empties domain", row=int(i), col=j)
                ub[j] = max(ub[j], lb[j])
                row_on[i] = False
                changed = True
                log.append({"rule": "singleton_row", "row": int(i), "col": j,
                            "lb": float(lb[j]), "ub": float(ub[j])})
                continue

            # activity bounds; E rows are checked as both L and G
            los = np.minimum(vals * lb[cols], vals * ub[cols])
            his = np.maximum(vals * lb[cols], vals * ub[cols])
            for side in (("L",) if s == "L" else ("G",) if s == "G" else ("L", "G")):
                if side == "L":
                    contrib, bound = los, r
                else:
                    contrib, bound = -his, -r
                    # a.x >= r  <=>  -a.x <= -r ; min of -a.x is -max(a.x)
                sgn = 1.0 if side == "L" else -1.0
                n_inf = int(np.sum(~np.isfinite(contrib)))
                if n_inf > 1:
                    continue
                total = float(np.sum(contrib[np.isfinite(contrib)]))
                if n_inf == 0 and total > bound + 1e-7 * (1 + abs(bound)):
                    return fail("row activity cannot reach rhs", row=int(i))
                for k, j in enumerate(cols):
                    if not isint[j]:
                        continue
                    if n_inf == 1 and np.isfinite(contrib[k]):
                        continue
                    rest = total - (contrib[k] if np.isfinite(contrib[k]) else 0.0)
                    a = sgn * vals[k]
                    lim = (bound - rest) / a
                    if a > 0 and lim < ub[j] - _INT_TOL:
                        nb = math.floor(lim + _INT_TOL)
                        if nb < ub[j]:
                            log.append({"rule": "tighten_ub", "row": int(i), "col": int(j),
                                        "old": float(ub[j]), "new": float(nb)})
                            ub[j] = nb
                            changed = True
                    elif a < 0 and lim > lb[j] + _INT_TOL:
                        nb = math.ceil(lim - _INT_TOL)
                        if nb > lb[j]:
                            log.append({"rule": "tighten_lb", "row": int(i), "col": int(j),
                                        "old": float(lb[j]), "new": float(nb)})
                            lb[j] = nb
                            changed = True

    if np.any(lb > ub + _TOL):
        return fail("crossed bounds", col=int(np.flatnonzero(lb > ub + _TOL)[0]))

    col_map = np.flatnonzero(col_on)
    row_map = np.flatnonzero(row_on)
    sub = A[row_map][:, col_map]
    pos = np.full(n, -1, dtype=np.int64)
    pos[col_map] = np.arange(col_map.size)
    int_red = pos[inst.int_set]
    int_red = int_red[int_red >= 0]
    ann = {}
    if "vars" in inst.annotations:
        ann["vars"] = [inst.annotations["vars"][j] for j in col_map]
    if "rows" in inst.annotations:
        ann["rows"] = [inst.annotations["rows"][i] for i in row_map]
    red = MilpInstance(
        inst.obj[col_map], sub, rhs[row_map], sense[row_map], lb[col_map], ub[col_map], int_red,
        None if inst.var_names is None else [inst.var_names[j] for j in col_map],
        None if inst.row_names is None else [inst.row_names[i] for i in row_map],
        ann, offset,
    )
    return PresolveResult(red, False, col_map, row_map, fixed, n, log)
