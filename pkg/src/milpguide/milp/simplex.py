"""Bounded-variable revised primal simplex.

Rows are turned into equalities with one logical column each,
``A x - r = 0``, and the row sense becomes a bound on ``r``. The slack
basis ``B = -I`` is always a valid starting point; phase 1 minimises the
sum of bound violations of the basic variables from whatever basis we start
in, so warm starts from a parent node work unchanged after bound changes.

Pricing is Dantzig by default with a Bland fallback after a run of
degenerate pivots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .instance import MilpInstance

BASIC, AT_LB, AT_UB, FREE = 0, 1, 2, 3
STATUS_NAMES = {BASIC: "basic", AT_LB: "at_lower", AT_UB: "at_upper", FREE: "free"}

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
DUAL_TOL = 1e-9
_DEGENERATE_RUN = 50
_DENSE_MAX_ROWS = 50


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class Basis:
    basic: np.ndarray   # column index per row, columns >= n are logicals
    status: np.ndarray  # per column over n + m


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    values: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis_codes: np.ndarray
    iterations: int
    basis: Basis | None = None

    @property
    def basis_status(self) -> list[str]:
        return [STATUS_NAMES[int(c)] for c in self.basis_codes]

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _DenseFactor:
    refactor_every = 100

    def __init__(self, B: np.ndarray):
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis") from exc
        if not np.all(np.isfinite(self.Binv)):
            raise NumericalError("singular basis")
        self.updates = 0

    def ftran(self, v):
        return self.Binv @ v

    def btran(self, c):
        return c @ self.Binv

    def update(self, r, alpha):
        row = self.Binv[r] / alpha[r]
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.updates += 1


class _SparseFactor:
    """LU of the basis plus a product-form eta file."""

    refactor_every = 60

    def __init__(self, B: sp.csc_matrix):
        try:
            self.lu = spla.splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise NumericalError(str(exc)) from exc
        self.etas: list[tuple[int, np.ndarray]] = []
        self.updates = 0

    def ftran(self, v):
        w = self.lu.solve(np.asarray(v, dtype=float))
        for r, a in self.etas:
            wr = w[r] / a[r]
            w -= a * wr
            w[r] = wr
        return w

    def btran(self, c):
        c = np.array(c, dtype=float)
        for r, a in reversed(self.etas):
            c[r] = (c[r] - (c @ a - c[r] * a[r])) / a[r]
        return self.lu.solve(c, trans="T")

    def update(self, r, alpha):
        self.etas.append((r, alpha.copy()))
        self.updates += 1


class SimplexLP:
    """LP relaxation of a fixed instance; bounds vary per call (B&B nodes)."""

    def __init__(self, instance: MilpInstance):
        self.instance = instance
        n, m = instance.n, instance.m
        self.n, self.m = n, m
        self.c = instance.obj.astype(float)
        A = instance.A.tocsc()
        self.Afull = sp.hstack([A, -sp.identity(m, format="csc")], format="csc") if m else sp.csc_matrix((0, n))
        self.AT = instance.A.T.tocsr()
        rlo = np.full(m, -np.inf)
        rhi = np.full(m, np.inf)
        s = instance.sense
        rlo[s != "L"] = instance.rhs[s != "L"]
        rhi[s != "G"] = instance.rhs[s != "G"]
        self.rlo, self.rhi = rlo, rhi
        self.cost = np.concatenate([self.c, np.zeros(m)])

    # -- helpers -------------------------------------------------------------
    def _column(self, q: int) -> np.ndarray:
        col = np.zeros(self.m)
        lo, hi = self.Afull.indptr[q], self.Afull.indptr[q + 1]
        col[self.Afull.indices[lo:hi]] = self.Afull.data[lo:hi]
        return col

    def _factor(self, basic):
        B = self.Afull[:, basic]
        if self.m <= _DENSE_MAX_ROWS:
            return _DenseFactor(B.toarray())
        return _SparseFactor(B.tocsc())

    def _basic_values(self, factor, basic, x):
        xn = x.copy()
        xn[basic] = 0.0
        v = self.Afull @ xn
        return factor.ftran(-v)

    def _slack_start(self, L, U):
        n, m = self.n, self.m
        basic = np.arange(n, n + m)
        status = np.full(n + m, BASIC, dtype=np.int8)
        status[:n] = AT_LB
        return basic, status

    # -- main entry ----------------------------------------------------------
    def solve(self, lb=None, ub=None, *, pricing: str = "dantzig", warm: Basis | None = None,
              max_iter: int | None = None) -> LpSolution:
        n, m = self.n, self.m
        lb = self.instance.lb if lb is None else np.asarray(lb, dtype=float)
        ub = self.instance.ub if ub is None else np.asarray(ub, dtype=float)
        L = np.concatenate([lb, self.rlo])
        U = np.concatenate([ub, self.rhi])
        if np.any(L > U + FEAS_TOL):
            return self._infeasible(0)
        if max_iter is None:
            max_iter = 50 * (n + m) + 1000

        if warm is not None and warm.basic.shape == (m,) and warm.status.shape == (n + m,):
            basic = warm.basic.copy()
            status = warm.status.copy()
        else:
            basic, status = self._slack_start(L, U)

        lf, uf = np.isfinite(L), np.isfinite(U)
        x = np.zeros(n + m)

        def place_nonbasic():
            nb = status != BASIC
            new = np.where((status == AT_UB) & uf, AT_UB,
                           np.where(lf, AT_LB, np.where(uf, AT_UB, FREE))).astype(np.int8)
            status[nb] = new[nb]
            x[nb] = np.where(status[nb] == AT_LB, L[nb], np.where(status[nb] == AT_UB, U[nb], 0.0))

        place_nonbasic()
        try:
            factor = self._factor(basic)
        except NumericalError:
            basic, status = self._slack_start(L, U)
            place_nonbasic()
            factor = self._factor(basic)
        if m:
            x[basic] = self._basic_values(factor, basic, x)

        it = 0
        degenerate_run = 0
        bland = pricing == "bland"
        fresh = True  # factor was just rebuilt and x_B recomputed
        movable = U > L

        while True:
            xB = x[basic]
            lo, hi = L[basic], U[basic]
            below = xB < lo - FEAS_TOL
            above = xB > hi + FEAS_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cB = above.astype(float) - below.astype(float)
                y = factor.btran(cB) if m else np.zeros(0)
                dS = -(self.AT @ y) if m else np.zeros(n)
            else:
                cB = self.cost[basic]
                y = factor.btran(cB) if m else np.zeros(0)
                dS = self.c - (self.AT @ y) if m else self.c.copy()
            d = np.concatenate([dS, y])

            free_or = status == FREE
            elig = ((((status == AT_LB) | free_or) & (d < -DUAL_TOL))
                    | (((status == AT_UB) | free_or) & (d > DUAL_TOL))) & movable
            if not elig.any():
                if not fresh:
                    factor = self._factor(basic)
                    x[basic] = self._basic_values(factor, basic, x)
                    fresh = True
                    continue
                if phase1:
                    return self._infeasible(it, Basis(basic.copy(), status.copy()))
                return self._finish(x, y, dS, basic, status, it)

            if bland:
                q = int(np.flatnonzero(elig)[0])
            else:
                q = int(np.argmax(np.where(elig, np.abs(d), -1.0)))
            dirn = 1.0 if d[q] < 0 else -1.0
            alpha = factor.ftran(self._column(q)) if m else np.zeros(0)
            delta = -dirn * alpha

            theta_q = U[q] - L[q]
            ratio = np.full(m, np.inf)
            to_upper = np.zeros(m, dtype=bool)
            dec = delta < -PIVOT_TOL
            inc = delta > PIVOT_TOL
            feas = ~(below | above)
            with np.errstate(invalid="ignore", divide="ignore"):
                sel = dec & above
                ratio[sel] = (xB[sel] - hi[sel]) / -delta[sel]
                to_upper[sel] = True
                sel = dec & feas & np.isfinite(lo)
                ratio[sel] = (xB[sel] - lo[sel]) / -delta[sel]
                sel = inc & below
                ratio[sel] = (lo[sel] - xB[sel]) / delta[sel]
                sel = inc & feas & np.isfinite(hi)
                ratio[sel] = (hi[sel] - xB[sel]) / delta[sel]
                to_upper[sel] = True
            np.maximum(ratio, 0.0, out=ratio)
            rmin = float(ratio.min()) if m else np.inf

            if not np.isfinite(rmin) and not np.isfinite(theta_q):
                if phase1:
                    raise NumericalError("unbounded ray in phase 1")
                return self._unbounded(x, it, Basis(basic.copy(), status.copy()))

            if theta_q <= rmin:
                step = theta_q
                x[basic] += step * delta
                if dirn > 0:
                    status[q], x[q] = AT_UB, U[q]
                else:
                    status[q], x[q] = AT_LB, L[q]
            else:
                step = rmin
                ties = np.flatnonzero(ratio <= rmin + 1e-12)
                if bland:
                    r = int(ties[np.argmin(basic[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(delta[ties]))])
                x[q] += dirn * step
                x[basic] += step * delta
                j = basic[r]
                if to_upper[r]:
                    status[j], x[j] = AT_UB, U[j]
                else:
                    status[j], x[j] = AT_LB, L[j]
                basic[r] = q
                status[q] = BASIC
                factor.update(r, alpha)
                fresh = False

            it += 1
            if step <= 1e-12:
                degenerate_run += 1
                if degenerate_run > _DEGENERATE_RUN:
                    bland = True
            else:
                degenerate_run = 0
                bland = pricing == "bland"
            if it >= max_iter:
                raise NumericalError(f"simplex iteration limit {max_iter} reached")
            if factor.updates >= factor.refactor_every:
                factor = self._factor(basic)
                x[basic] = self._basic_values(factor, basic, x)
                fresh = True

    # -- results -------------------------------------------------------------
    def _finish(self, x, y, dS, basic, status, it) -> LpSolution:
        n = self.n
        vals = x[:n].copy()
        codes = status[:n].copy()
        red = np.where(codes == BASIC, 0.0, dS)
        return LpSolution("optimal", vals, float(self.c @ vals), y.copy(), red, codes, it,
                          Basis(basic.copy(), status.copy()))

    def _infeasible(self, it, basis=None) -> LpSolution:
        n, m = self.n, self.m
        return LpSolution("infeasible", np.full(n, np.nan), np.inf, np.zeros(m), np.zeros(n),
                          np.full(n, AT_LB, dtype=np.int8), it, basis)

    def _unbounded(self, x, it, basis) -> LpSolution:
        n, m = self.n, self.m
        return LpSolution("unbounded", x[:n].copy(), -np.inf, np.zeros(m), np.zeros(n),
                          basis.status[:n].copy(), it, basis)


def lp_relax_solve(instance: MilpInstance, *, lb=None, ub=None, pricing: str = "dantzig",
                   warm_start: Basis | None = None) -> LpSolution:
    """Solve the LP relaxation of ``instance`` (integrality dropped)."""
    return SimplexLP(instance).solve(lb, ub, pricing=pricing, warm=warm_start)


def dual_objective(instance: MilpInstance, sol: LpSolution, lb=None, ub=None) -> float:
    """Lagrangian dual bound from row duals and reduced costs.

    Each reduced cost is paired with the bound it pushes against; a
    multiplier pointing at an infinite bound makes the bound ``-inf``.
    """
    lb = instance.lb if lb is None else lb
    ub = instance.ub if ub is None else ub
    lp = SimplexLP(instance)
    y = sol.duals
    d_struct = instance.obj - (instance.A.T @ y if instance.m else 0.0)
    total = 0.0
    for dj, lo, hi in zip(np.concatenate([d_struct, y]), np.concatenate([lb, lp.rlo]),
                          np.concatenate([ub, lp.rhi])):
        if dj > 0:
            total += dj * lo if np.isfinite(lo) else (-np.inf if dj > 1e-12 else 0.0)
        elif dj < 0:
            total += dj * hi if np.isfinite(hi) else (-np.inf if dj < -1e-12 else 0.0)
    return float(total)
